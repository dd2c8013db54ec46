//! The identity tester for d-dimensional k-histograms.
//!
//! `p` is reduced to a discrete distribution `p'` over the halves of all
//! covering cells: a sample `x` maps to the half containing `x` of the cell
//! located in a uniformly chosen z-grid. The l1^k tester then compares `p'`
//! with the image `q'` of the unknown distribution.
//!
//! Distances in the public API are L1. Internally the variation distance
//! `eps / 2` is used: the covering is built at slack `eps / 4` and the l1^k
//! tester looks for distance `eps / (16 l)` among sets of size `2 k j`.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::covering::{CellAddr, Covering};
use crate::discrete::{l1k_test_with, Flattening, L1kParams, SampleBudget, SampleStream, TestVerdict};
use crate::error::{invalid, Result};
use crate::histogram::{discretize, DiscreteDist, Histogram, MassTable, Rect};
use crate::rng::TestRng;
use crate::splitting::{split_cell, SplitCell};

/// One element of the reduced domain: a covering cell and which half of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HalfKey {
    pub cell: CellAddr,
    pub heavy: bool,
}

/// Anything that produces points of `[0,1]^d`.
pub trait PointSampler {
    fn sample_into(&mut self, out: &mut [f64]);
}

impl<S: PointSampler + ?Sized> PointSampler for &mut S {
    fn sample_into(&mut self, out: &mut [f64]) {
        (**self).sample_into(out)
    }
}

/// Samples from an explicit histogram.
#[derive(Debug, Clone)]
pub struct HistogramSampler<'a> {
    hist: &'a Histogram,
    rng: TestRng,
}

impl<'a> HistogramSampler<'a> {
    pub fn new(hist: &'a Histogram, rng: TestRng) -> Self {
        HistogramSampler { hist, rng }
    }
}

impl PointSampler for HistogramSampler<'_> {
    fn sample_into(&mut self, out: &mut [f64]) {
        self.hist.sample_into(&mut self.rng, out)
    }
}

/// Turns samples of grid cells of `[m]^d` (flat indices, coordinate 0 most
/// significant) into uniform points of the corresponding boxes.
pub struct GridPointSampler<S> {
    cells: S,
    side: u32,
    dim: usize,
    rng: TestRng,
}

impl<S: SampleStream<Item = usize>> GridPointSampler<S> {
    pub fn new(cells: S, side: u32, dim: usize, rng: TestRng) -> Self {
        GridPointSampler { cells, side, dim, rng }
    }
}

impl<S: SampleStream<Item = usize>> PointSampler for GridPointSampler<S> {
    fn sample_into(&mut self, out: &mut [f64]) {
        let mut idx = self.cells.draw();
        let m = self.side as usize;
        let w = 1.0 / self.side as f64;
        for j in (0..self.dim).rev() {
            let c = (idx % m) as f64;
            idx /= m;
            out[j] = crate::histogram::uniform_in(c * w, (c + 1.0) * w, &mut self.rng);
        }
    }
}

/// Test-time options shared by all entry points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOptions {
    pub delta: f64,
    pub budget: SampleBudget,
    /// Overrides the repetition count derived from `delta`.
    pub repetitions: Option<usize>,
}

impl Default for TestOptions {
    fn default() -> Self {
        TestOptions { delta: 1.0 / 3.0, budget: SampleBudget::default(), repetitions: None }
    }
}

/// Verdict plus the covering parameters it was obtained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityVerdict {
    #[serde(flatten)]
    pub verdict: TestVerdict,
    pub m: u32,
    pub l: u64,
    pub j: u64,
}

/// Everything about `p` the tester needs, computed once and reusable across
/// many test runs and threads.
#[derive(Debug, Clone)]
pub struct IdentityTester {
    p: Histogram,
    covering: Covering,
    k: usize,
    eps: f64,
    set_size: usize,
    flattening: Flattening<HalfKey>,
}

impl IdentityTester {
    /// Prepares a tester for `q = p` versus `|p - q|_1 >= eps` over
    /// `k`-histograms `q`.
    pub fn new(p: &Histogram, k: usize, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(invalid(format!("eps = {eps} outside (0, 1]")));
        }
        if k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        p.validate()?;
        let covering = Covering::build(p, k, eps / 4.0)?;
        let set_size = 2 * k * covering.j() as usize;
        let flattening = reduced_flattening(p, &covering, set_size);
        Ok(IdentityTester { p: p.clone(), covering, k, eps, set_size, flattening })
    }

    pub fn p(&self) -> &Histogram {
        &self.p
    }

    pub fn covering(&self) -> &Covering {
        &self.covering
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Set size `K = 2 k j` handed to the l1^k tester.
    pub fn set_size(&self) -> usize {
        self.set_size
    }

    /// l1^k distance `eps / (16 l)` handed to the l1^k tester.
    pub fn l1k_eps(&self) -> f64 {
        self.eps / 2.0 / (8.0 * self.covering.ell() as f64)
    }

    pub fn flattening(&self) -> &Flattening<HalfKey> {
        &self.flattening
    }

    pub fn l1k_params(&self, opts: &TestOptions) -> L1kParams {
        L1kParams {
            k: self.set_size,
            eps: self.l1k_eps(),
            delta: opts.delta,
            budget: opts.budget,
            repetitions: opts.repetitions,
        }
    }

    /// Expected samples per stream per repetition under `opts`.
    pub fn per_repetition_budget(&self, budget: SampleBudget) -> f64 {
        let params = L1kParams { budget, ..L1kParams::new(self.set_size, self.l1k_eps(), 0.5) };
        let b = params.norm_bound(self.flattening.norm_bound);
        budget.per_repetition(b, params.l2_eps())
    }

    /// Calibration constant that yields `per_rep` samples per repetition.
    pub fn constant_for_budget(&self, per_rep: f64) -> f64 {
        per_rep / self.per_repetition_budget(SampleBudget::Constant(1.0))
    }

    /// A fresh point-to-half mapper; holds the per-run cache of split cells.
    pub fn mapper(&self) -> HalfMapper<'_> {
        HalfMapper { tester: self, cache: RefCell::new(FxHashMap::default()), x: RefCell::new(vec![0.0; self.p.dim()]) }
    }

    /// Runs the test against samples from `q`.
    pub fn test<Q, R>(&self, q: Q, opts: &TestOptions, rng: &mut R) -> Result<IdentityVerdict>
    where
        Q: PointSampler,
        R: Rng + ?Sized,
    {
        let mapper = self.mapper();
        let p_stream = MappedStream {
            sampler: HistogramSampler::new(&self.p, TestRng::seed_from_u64(rng.random())),
            mapper: &mapper,
            rng: TestRng::seed_from_u64(rng.random()),
        };
        let q_stream = MappedStream { sampler: q, mapper: &mapper, rng: TestRng::seed_from_u64(rng.random()) };
        let verdict = l1k_test_with(p_stream, q_stream, &self.flattening, &self.l1k_params(opts), rng)?;
        Ok(IdentityVerdict { verdict, m: self.covering.m(), l: self.covering.ell(), j: self.covering.j() })
    }

    /// Exact reduced distribution of `p` over every half-cell. Enumerates the
    /// whole covering, so only for small `m` and `d`.
    pub fn build_reduced_known(&self) -> Result<ReducedPair> {
        const MAX_CELLS: u64 = 1 << 22;
        if self.covering.total_cells() > MAX_CELLS {
            return Err(invalid(format!("covering has {} cells; too many to enumerate", self.covering.total_cells())));
        }
        let ell = self.covering.ell();
        let mut halves = Vec::new();
        let mut splits = Vec::new();
        let mut masses = Vec::new();
        for cell in self.covering.all_cells() {
            let sc = split_cell(&self.p, &self.covering.cell_rect(&cell));
            halves.push(HalfKey { cell, heavy: true });
            halves.push(HalfKey { cell, heavy: false });
            masses.push(sc.heavy_mass() / ell as f64);
            masses.push(sc.light_mass() / ell as f64);
            splits.push(sc);
        }
        let total: f64 = masses.iter().sum();
        let p_prime = DiscreteDist::from_weights(&masses)?;
        Ok(ReducedPair { halves, splits, p_prime, ell, total_before_normalization: total })
    }
}

/// The reduced family `F'` with `p'(A) = p(A) / l`.
#[derive(Debug, Clone)]
pub struct ReducedPair {
    /// Half-cells in enumeration order; `p_prime` is indexed the same way.
    pub halves: Vec<HalfKey>,
    /// The split of each cell; cell `i` owns halves `2i` (heavy) and `2i + 1`.
    pub splits: Vec<SplitCell>,
    pub p_prime: DiscreteDist,
    pub ell: u64,
    /// `sum_A p(A) / l` before renormalizing away rounding error.
    pub total_before_normalization: f64,
}

impl ReducedPair {
    /// Unnormalized `q'(A) = q(A) / l` for an explicit `q`, same indexing.
    pub fn reduce_weights(&self, q: &Histogram) -> Vec<f64> {
        let ell = self.ell as f64;
        self.splits
            .iter()
            .flat_map(|sc| [q.mass_on(&sc.heavy_rects()) / ell, q.mass_on(&sc.light_rects()) / ell])
            .collect()
    }

    /// `q'` for an explicit `q`.
    pub fn reduce(&self, q: &Histogram) -> Result<DiscreteDist> {
        DiscreteDist::from_weights(&self.reduce_weights(q))
    }
}

/// Maps points to half-cells with a uniformly random z-grid.
pub struct HalfMapper<'a> {
    tester: &'a IdentityTester,
    cache: RefCell<FxHashMap<CellAddr, SplitCell>>,
    x: RefCell<Vec<f64>>,
}

impl HalfMapper<'_> {
    /// Whether `x` (a point of `cell`) lies in the heavy half.
    pub fn in_heavy(&self, cell: &CellAddr, x: &[f64]) -> bool {
        let t = self.tester;
        if t.p.is_uniform_single_piece() {
            // A constant density splits every cell at the axis-0 midpoint.
            let (lo, hi) = t.covering.partitions().interval(0, t.covering.grid_z(cell.grid)[0], t.covering.cell_indices(cell)[0]);
            return x[0] < lo + (hi - lo) / 2.0;
        }
        let mut cache = self.cache.borrow_mut();
        let sc = cache.entry(*cell).or_insert_with(|| split_cell(&t.p, &t.covering.cell_rect(cell)));
        sc.in_heavy(x)
    }

    /// The half of the cell containing `x` in grid `grid`.
    pub fn half_in_grid(&self, grid: u32, x: &[f64]) -> HalfKey {
        let fine = self.tester.covering.finest_indices(x);
        let cell = self.tester.covering.locate_fine(grid, &fine);
        HalfKey { cell, heavy: self.in_heavy(&cell, x) }
    }

    /// A uniformly random element of `F'` containing `x`.
    pub fn map_sample<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> HalfKey {
        let grid = rng.random_range(0..self.tester.covering.num_grids());
        self.half_in_grid(grid, x)
    }

    /// All `l` halves containing `x`.
    pub fn halves_containing(&self, x: &[f64]) -> Vec<HalfKey> {
        (0..self.tester.covering.num_grids()).map(|g| self.half_in_grid(g, x)).collect()
    }

    fn draw_from<S: PointSampler, R: Rng + ?Sized>(&self, sampler: &mut S, rng: &mut R) -> HalfKey {
        let mut x = self.x.borrow_mut();
        sampler.sample_into(&mut x);
        crate::histogram::clamp_to_unit(&mut x);
        self.map_sample(&x, rng)
    }
}

struct MappedStream<'a, 'b, S> {
    sampler: S,
    mapper: &'a HalfMapper<'b>,
    rng: TestRng,
}

impl<S: PointSampler> SampleStream for MappedStream<'_, '_, S> {
    type Item = HalfKey;
    fn draw(&mut self) -> HalfKey {
        self.mapper.draw_from(&mut self.sampler, &mut self.rng)
    }
}

/// Flattening of `p'` for set size `set_size`, found without enumerating
/// `F'`: only cells of mass at least `l / (16 set_size)` are visited, found
/// grid by grid from their parents (a cell is never heavier than the cell of
/// a coarser grid containing it). Halves below `l / set_size` get no extra
/// copies; the unvisited remainder enters the norm bound through
/// `sum p'^2 <= max p' * sum p'`.
fn reduced_flattening(p: &Histogram, cov: &Covering, set_size: usize) -> Flattening<HalfKey> {
    let ell = cov.ell() as f64;
    let kk = set_size as f64;
    let tau = ell / (16.0 * kk);
    let d = cov.dim();

    let mut order: Vec<u32> = (0..cov.num_grids()).collect();
    order.sort_by_key(|&g| (cov.grid_z(g).iter().sum::<u32>(), g));

    let mut heavy_cells: FxHashMap<u32, Vec<(Vec<u64>, Rect, f64)>> = FxHashMap::default();
    for &g in &order {
        let z = cov.grid_z(g);
        let found = match z.iter().position(|&zj| zj > 0) {
            None => {
                let idx = vec![0u64; d];
                let rect = cov.cell_rect(&cov.cell_addr(&z, &idx));
                vec![(idx, rect, 1.0)]
            }
            Some(axis) => {
                let mut parent_z = z.clone();
                parent_z[axis] -= 1;
                let parents = heavy_cells.get(&cov.grid_index(&parent_z)).map(Vec::as_slice).unwrap_or(&[]);
                let mut out = Vec::new();
                for (pidx, _, _) in parents {
                    for bit in 0..2u64 {
                        let mut idx = pidx.clone();
                        idx[axis] = 2 * idx[axis] + bit;
                        let rect = cov.cell_rect(&cov.cell_addr(&z, &idx));
                        let mass = p.mass_on_rect(&rect);
                        if mass >= tau {
                            out.push((idx, rect, mass));
                        }
                    }
                }
                out
            }
        };
        heavy_cells.insert(g, found);
    }

    let mut mult = FxHashMap::default();
    let mut visited_mass = 0.0;
    let mut sq = 0.0;
    for (&g, cells) in &heavy_cells {
        let z = cov.grid_z(g);
        for (idx, rect, _) in cells {
            let cell = cov.cell_addr(&z, idx);
            let sc = split_cell(p, rect);
            for (heavy, mass) in [(true, sc.heavy_mass()), (false, sc.light_mass())] {
                let pp = mass / ell;
                let copies = (kk * pp).floor() as u32;
                let a = copies + 1;
                if copies > 0 {
                    mult.insert(HalfKey { cell, heavy }, a);
                }
                visited_mass += pp;
                sq += pp * pp / a as f64;
            }
        }
    }
    let rest = (1.0 - visited_mass).max(0.0);
    let norm_bound = (sq + rest * tau / ell).sqrt();
    Flattening::new(mult, norm_bound)
}

/// Identity test for an explicit `p` and sample access to `q`.
pub fn test_identity<Q, R>(p: &Histogram, q: Q, k: usize, eps: f64, opts: &TestOptions, rng: &mut R) -> Result<IdentityVerdict>
where
    Q: PointSampler,
    R: Rng + ?Sized,
{
    IdentityTester::new(p, k, eps)?.test(q, opts, rng)
}

/// Identity test on `[m]^d`: both sides are embedded into `[0,1]^d` with one
/// box of side `1/m` per grid cell. `q` yields flat cell indices.
pub fn test_identity_discrete<Q, R>(
    p: &MassTable,
    q: Q,
    k: usize,
    eps: f64,
    opts: &TestOptions,
    rng: &mut R,
) -> Result<IdentityVerdict>
where
    Q: SampleStream<Item = usize>,
    R: Rng + ?Sized,
{
    let hist = discretize(p)?;
    let points = GridPointSampler::new(q, p.side(), p.dim(), TestRng::seed_from_u64(rng.random()));
    test_identity(&hist, points, k, eps, opts, rng)
}

/// Identity test against the uniform distribution on `[0,1]^d`.
pub fn test_uniformity<Q, R>(q: Q, dim: usize, k: usize, eps: f64, opts: &TestOptions, rng: &mut R) -> Result<IdentityVerdict>
where
    Q: PointSampler,
    R: Rng + ?Sized,
{
    test_identity(&Histogram::uniform(dim), q, k, eps, opts, rng)
}
