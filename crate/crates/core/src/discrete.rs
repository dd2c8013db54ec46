//! Split (flattened) distributions, the Poissonized l2 collision statistic and
//! the l1^k identity tester built on top of it.

use std::hash::Hash;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Poisson};
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::histogram::{sample_cumulative, DiscreteDist};
use crate::rng::TestRng;

/// Default calibration constant for the l2 tester's sample budget.
pub const DEFAULT_C: f64 = 16.0;

/// `floor(k p_i)` for every element: the copy counts of the flattening multiset.
pub fn flattening_multiset(p: &DiscreteDist, k: usize) -> Vec<u32> {
    p.probs().iter().map(|&pi| (k as f64 * pi).floor() as u32).collect()
}

/// `p` with element `i` divided into `a_i = 1 + copies_i` equal parts.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDist {
    base: DiscreteDist,
    mult: Vec<u32>,
    offsets: Vec<usize>,
}

impl SplitDist {
    pub fn base(&self) -> &DiscreteDist {
        &self.base
    }

    /// Multiplicities `a_i`.
    pub fn multiplicities(&self) -> &[u32] {
        &self.mult
    }

    /// `n + |S|`.
    pub fn support_size(&self) -> usize {
        *self.offsets.last().expect("non-empty")
    }

    /// Flat index of element `(i, j)`, `j` in `0..a_i`.
    pub fn index(&self, i: usize, j: u32) -> usize {
        self.offsets[i] + j as usize
    }

    /// Probability vector over the `n + |S|` split elements, in `(i, j)` order.
    pub fn probs(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.support_size());
        for (&pi, &a) in self.base.probs().iter().zip(&self.mult) {
            out.extend(std::iter::repeat_n(pi / a as f64, a as usize));
        }
        out
    }

    pub fn l2_norm(&self) -> f64 {
        self.base.probs().iter().zip(&self.mult).map(|(&pi, &a)| pi * pi / a as f64).sum::<f64>().sqrt()
    }

    pub fn l1_distance(&self, other: &SplitDist) -> Result<f64> {
        if self.mult != other.mult {
            return Err(invalid("split distributions use different multisets"));
        }
        Ok(self.probs().iter().zip(other.probs()).map(|(a, b)| (a - b).abs()).sum())
    }
}

/// Split distribution of `p` for the multiset given as per-element copy counts.
pub fn split(p: &DiscreteDist, copies: &[u32]) -> Result<SplitDist> {
    if copies.len() != p.len() {
        return Err(Error::DimensionMismatch { left: p.len(), right: copies.len() });
    }
    let mult: Vec<u32> = copies.iter().map(|&c| c + 1).collect();
    let mut offsets = Vec::with_capacity(mult.len() + 1);
    let mut acc = 0usize;
    offsets.push(0);
    for &a in &mult {
        acc += a as usize;
        offsets.push(acc);
    }
    Ok(SplitDist { base: p.clone(), mult, offsets })
}

/// Turns one sample `i` of `p` into a sample `(i, j)` of the split distribution.
pub fn split_sample<R: Rng + ?Sized>(i: usize, a: &[u32], rng: &mut R) -> (usize, u32) {
    let ai = a[i];
    let j = if ai <= 1 { 0 } else { rng.random_range(0..ai) };
    (i, j)
}

/// A source of i.i.d. samples.
pub trait SampleStream {
    type Item;
    fn draw(&mut self) -> Self::Item;
}

impl<S: SampleStream + ?Sized> SampleStream for &mut S {
    type Item = S::Item;
    fn draw(&mut self) -> S::Item {
        (**self).draw()
    }
}

/// Samples from an explicit discrete distribution.
#[derive(Debug, Clone)]
pub struct DiscreteSampler {
    cum: Vec<f64>,
    rng: TestRng,
}

impl DiscreteSampler {
    pub fn new(p: &DiscreteDist, rng: TestRng) -> Self {
        DiscreteSampler { cum: p.cumulative(), rng }
    }
}

impl SampleStream for DiscreteSampler {
    type Item = usize;
    fn draw(&mut self) -> usize {
        sample_cumulative(&self.cum, &mut self.rng)
    }
}

/// Wraps a stream and counts the draws taken from it.
#[derive(Debug)]
pub struct Counted<S> {
    pub inner: S,
    pub count: u64,
}

impl<S> Counted<S> {
    pub fn new(inner: S) -> Self {
        Counted { inner, count: 0 }
    }
}

impl<S: SampleStream> SampleStream for Counted<S> {
    type Item = S::Item;
    fn draw(&mut self) -> S::Item {
        self.count += 1;
        self.inner.draw()
    }
}

/// How many samples each repetition of the l2 tester expects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleBudget {
    /// `m = C * b / eps^2`.
    Constant(f64),
    /// A fixed expected sample count per repetition.
    PerRepetition(f64),
}

impl Default for SampleBudget {
    fn default() -> Self {
        SampleBudget::Constant(DEFAULT_C)
    }
}

impl SampleBudget {
    pub fn per_repetition(self, b: f64, eps: f64) -> f64 {
        match self {
            SampleBudget::Constant(c) => c * b / (eps * eps),
            SampleBudget::PerRepetition(m) => m,
        }
    }
}

/// Repetitions for confidence `1 - delta`: `ceil(18 ln(1/delta))`.
pub fn repetitions_for(delta: f64) -> usize {
    ((18.0 * (1.0 / delta).ln()).ceil() as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

/// Outcome of a test with the quantities behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestVerdict {
    pub decision: Decision,
    /// The median-rank statistic: reject iff it exceeds `threshold`.
    pub statistic: f64,
    pub threshold: f64,
    /// Exact number of draws taken from the unknown distribution's stream.
    pub samples_used: u64,
    pub repetitions: usize,
    pub rejections: usize,
    /// Expected samples per stream per repetition.
    pub per_repetition_budget: f64,
    /// The calibration constant the budget corresponds to, `m eps^2 / b`.
    pub c: f64,
}

impl TestVerdict {
    pub fn rejected(&self) -> bool {
        self.decision == Decision::Reject
    }
}

/// Parameters of the l2 closeness tester.
#[derive(Debug, Clone, Copy)]
pub struct L2Params {
    /// Upper bound on `min(|p|_2, |q|_2)`.
    pub b: f64,
    /// l2 distance to detect.
    pub eps: f64,
    pub delta: f64,
    pub budget: SampleBudget,
    /// Overrides the repetition count derived from `delta`.
    pub repetitions: Option<usize>,
}

impl L2Params {
    fn check(&self) -> Result<()> {
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(invalid(format!("norm bound b = {} must be positive", self.b)));
        }
        if !(self.eps > 0.0 && self.eps < std::f64::consts::SQRT_2 * self.b) {
            return Err(invalid(format!("eps = {} outside (0, sqrt(2) b) with b = {}", self.eps, self.b)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid(format!("delta = {} outside (0, 1)", self.delta)));
        }
        Ok(())
    }

    pub fn repetitions(&self) -> usize {
        self.repetitions.unwrap_or_else(|| repetitions_for(self.delta))
    }

    pub fn per_repetition(&self) -> f64 {
        self.budget.per_repetition(self.b, self.eps)
    }

    /// Rejection threshold for the collision statistic at `m` expected samples.
    ///
    /// The second term keeps the false-positive rate of a repetition at most
    /// 1/3 by Cantelli's inequality, since the null variance of `Z` is at most
    /// `8 m^2 b^2`.
    pub fn threshold(&self, m: f64) -> f64 {
        (m * m * self.eps * self.eps / 2.0).max(4.0 * m * self.b)
    }
}

/// `sum_i (X_i - Y_i)^2 - X_i - Y_i` over the observed elements.
pub fn collision_statistic<K>(counts: &FxHashMap<K, (u64, u64)>) -> f64 {
    counts
        .values()
        .map(|&(x, y)| {
            let (x, y) = (x as f64, y as f64);
            (x - y) * (x - y) - x - y
        })
        .sum()
}

/// One Poissonized repetition: the statistic `Z`.
pub fn l2_statistic<P, Q, R>(p: &mut P, q: &mut Q, m: f64, rng: &mut R) -> Result<f64>
where
    P: SampleStream,
    Q: SampleStream<Item = P::Item>,
    P::Item: Hash + Eq,
    R: Rng + ?Sized,
{
    let pois = Poisson::new(m).map_err(|e| invalid(format!("Poisson mean {m}: {e}")))?;
    let np = pois.sample(rng) as u64;
    let nq = pois.sample(rng) as u64;
    let mut counts: FxHashMap<P::Item, (u64, u64)> = FxHashMap::default();
    for _ in 0..np {
        counts.entry(p.draw()).or_default().0 += 1;
    }
    for _ in 0..nq {
        counts.entry(q.draw()).or_default().1 += 1;
    }
    Ok(collision_statistic(&counts))
}

/// Distinguishes `p = q` from `|p - q|_2 > eps` by majority vote over
/// Poissonized repetitions of the collision statistic.
pub fn l2_closeness_test<P, Q, R>(p: &mut P, q: &mut Q, params: &L2Params, rng: &mut R) -> Result<TestVerdict>
where
    P: SampleStream,
    Q: SampleStream<Item = P::Item>,
    P::Item: Hash + Eq,
    R: Rng + ?Sized,
{
    params.check()?;
    let m = params.per_repetition();
    if !(m > 0.0 && m.is_finite()) {
        return Err(invalid(format!("per-repetition budget {m} must be positive")));
    }
    let reps = params.repetitions();
    let threshold = params.threshold(m);
    let mut q = Counted::new(q);
    let mut stats = Vec::with_capacity(reps);
    for _ in 0..reps {
        stats.push(l2_statistic(p, &mut q, m, rng)?);
    }
    let rejections = stats.iter().filter(|&&z| z > threshold).count();
    stats.sort_by(|a, b| b.total_cmp(a));
    let statistic = stats[reps / 2];
    let decision = if rejections > reps / 2 { Decision::Reject } else { Decision::Accept };
    Ok(TestVerdict {
        decision,
        statistic,
        threshold,
        samples_used: q.count,
        repetitions: reps,
        rejections,
        per_repetition_budget: m,
        c: m * params.eps * params.eps / params.b,
    })
}

/// Copy counts of a flattening over an arbitrary element type; elements not
/// listed have a single copy.
#[derive(Debug, Clone)]
pub struct Flattening<E> {
    mult: FxHashMap<E, u32>,
    /// Upper bound on the l2 norm of the flattened known distribution.
    pub norm_bound: f64,
}

impl<E: Hash + Eq + Clone> Flattening<E> {
    pub fn new(mult: FxHashMap<E, u32>, norm_bound: f64) -> Self {
        Flattening { mult, norm_bound }
    }

    /// Multiplicity `a_e`.
    pub fn multiplicity(&self, e: &E) -> u32 {
        self.mult.get(e).copied().unwrap_or(1)
    }

    pub fn extra_copies(&self) -> u64 {
        self.mult.values().map(|&a| (a - 1) as u64).sum()
    }

    pub fn split_sample<R: Rng + ?Sized>(&self, e: E, rng: &mut R) -> (E, u32) {
        let a = self.multiplicity(&e);
        let j = if a <= 1 { 0 } else { rng.random_range(0..a) };
        (e, j)
    }
}

/// Maps a stream through a flattening.
pub struct SplitStream<'a, S: SampleStream> {
    pub inner: S,
    pub flattening: &'a Flattening<S::Item>,
    pub rng: TestRng,
}

impl<S> SampleStream for SplitStream<'_, S>
where
    S: SampleStream,
    S::Item: Hash + Eq + Clone,
{
    type Item = (S::Item, u32);
    fn draw(&mut self) -> Self::Item {
        let e = self.inner.draw();
        self.flattening.split_sample(e, &mut self.rng)
    }
}

/// Parameters of the l1^k identity tester.
#[derive(Debug, Clone, Copy)]
pub struct L1kParams {
    pub k: usize,
    /// l1^k distance to detect.
    pub eps: f64,
    pub delta: f64,
    pub budget: SampleBudget,
    pub repetitions: Option<usize>,
}

impl L1kParams {
    pub fn new(k: usize, eps: f64, delta: f64) -> Self {
        L1kParams { k, eps, delta, budget: SampleBudget::default(), repetitions: None }
    }

    /// The l2 distance the reduction hands to the collision tester.
    pub fn l2_eps(&self) -> f64 {
        self.eps / (2.0 * self.k as f64).sqrt()
    }

    /// Norm bound actually used: the flattened norm (when smaller than the
    /// worst case `1/sqrt(k)`), raised to `l2_eps` so the l2 tester's range
    /// condition holds.
    pub fn norm_bound(&self, flattened_norm: f64) -> f64 {
        flattened_norm.min(1.0 / (self.k as f64).sqrt()).max(self.l2_eps())
    }

    fn check(&self) -> Result<()> {
        if self.k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        if !(self.eps > 0.0 && self.eps <= 2.0) {
            return Err(invalid(format!("eps = {} outside (0, 2]", self.eps)));
        }
        Ok(())
    }
}

/// Runs the l1^k tester given the known side as a sample stream plus its
/// flattening; shared by the discrete tester and the histogram tester.
pub fn l1k_test_with<P, Q, R>(
    p: P,
    q: Q,
    flattening: &Flattening<P::Item>,
    params: &L1kParams,
    rng: &mut R,
) -> Result<TestVerdict>
where
    P: SampleStream,
    Q: SampleStream<Item = P::Item>,
    P::Item: Hash + Eq + Clone,
    R: Rng + ?Sized,
{
    params.check()?;
    let l2 = L2Params {
        b: params.norm_bound(flattening.norm_bound),
        eps: params.l2_eps(),
        delta: params.delta,
        budget: params.budget,
        repetitions: params.repetitions,
    };
    let mut ps = SplitStream { inner: p, flattening, rng: TestRng::seed_from_u64(rng.random()) };
    let mut qs = SplitStream { inner: q, flattening, rng: TestRng::seed_from_u64(rng.random()) };
    l2_closeness_test(&mut ps, &mut qs, &l2, rng)
}

/// Flattening of an explicit discrete distribution for set size `k`.
pub fn discrete_flattening(p: &DiscreteDist, k: usize) -> Flattening<usize> {
    let copies = flattening_multiset(p, k);
    let mult: FxHashMap<usize, u32> =
        copies.iter().enumerate().filter(|(_, &c)| c > 0).map(|(i, &c)| (i, c + 1)).collect();
    let norm = p.probs().iter().zip(&copies).map(|(&pi, &c)| pi * pi / (c + 1) as f64).sum::<f64>().sqrt();
    Flattening::new(mult, norm)
}

/// Tests `q = p` against `|p - q|_{1,k} >= eps` for explicit `p` and sample
/// access to `q`.
pub fn l1k_identity_test<Q, R>(p: &DiscreteDist, q: Q, params: &L1kParams, rng: &mut R) -> Result<TestVerdict>
where
    Q: SampleStream<Item = usize>,
    R: Rng + ?Sized,
{
    let flattening = discrete_flattening(p, params.k);
    let p_stream = DiscreteSampler::new(p, TestRng::seed_from_u64(rng.random()));
    l1k_test_with(p_stream, q, &flattening, params, rng)
}
