//! Exact representation of k-histograms over `[0,1]^d` (and `[m]^d` embedded
//! into it), sampling, and the exact integration and distance oracles the rest
//! of the crate is checked against.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Absolute tolerance for the "sums to one" invariants of [`Histogram`].
pub const MASS_TOL: f64 = 1e-9;

/// Absolute tolerance for [`DiscreteDist`] normalization.
pub const DISCRETE_TOL: f64 = 1e-12;

/// Overlaps thinner than this along any axis are treated as shared boundaries.
const OVERLAP_TOL: f64 = 1e-12;

/// Half-open axis-aligned box `prod_j [lo_j, hi_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Rect {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        debug_assert_eq!(lo.len(), hi.len());
        Rect { lo, hi }
    }

    /// The whole unit cube `[0,1)^d`.
    pub fn unit(dim: usize) -> Self {
        Rect { lo: vec![0.0; dim], hi: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    /// Half-open containment test.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.lo.iter().zip(&self.hi).zip(x).all(|((l, h), v)| *l <= *v && *v < *h)
    }

    /// Whether `other` lies inside `self` (closed comparison on both ends).
    pub fn contains_rect(&self, other: &Rect) -> bool {
        (0..self.dim()).all(|j| self.lo[j] <= other.lo[j] && other.hi[j] <= self.hi[j])
    }

    /// Volume of the intersection, zero when disjoint.
    pub fn overlap_volume(&self, other: &Rect) -> f64 {
        let mut v = 1.0;
        for j in 0..self.dim() {
            let w = self.hi[j].min(other.hi[j]) - self.lo[j].max(other.lo[j]);
            if w <= 0.0 {
                return 0.0;
            }
            v *= w;
        }
        v
    }

    /// Intersection box, `None` when it has zero volume.
    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let d = self.dim();
        let mut lo = Vec::with_capacity(d);
        let mut hi = Vec::with_capacity(d);
        for j in 0..d {
            let l = self.lo[j].max(other.lo[j]);
            let h = self.hi[j].min(other.hi[j]);
            if h <= l {
                return None;
            }
            lo.push(l);
            hi.push(h);
        }
        Some(Rect { lo, hi })
    }

    fn overlaps_beyond_tol(&self, other: &Rect) -> bool {
        (0..self.dim()).all(|j| self.hi[j].min(other.hi[j]) - self.lo[j].max(other.lo[j]) > OVERLAP_TOL)
    }

    /// Uniform point in the box, written into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for ((o, &lo), &hi) in out.iter_mut().zip(&self.lo).zip(&self.hi) {
            *o = uniform_in(lo, hi, rng);
        }
    }
}

/// Uniform draw from `[lo, hi)`; guards against rounding up to `hi`.
pub(crate) fn uniform_in<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let x = lo + u * (hi - lo);
    if x >= hi {
        hi.next_down().max(lo)
    } else {
        x
    }
}

/// Points with a coordinate exactly 1 belong to the last cell.
pub(crate) fn clamp_to_unit(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v >= 1.0 {
            *v = 1.0f64.next_down();
        } else if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Domain tag: the continuous cube, or `[m]^d` embedded as boxes of side `1/m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    UnitCube,
    Grid(u32),
}

/// One rectangle of a histogram with its density (probability per unit volume).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    #[serde(flatten)]
    pub rect: Rect,
    pub density: f64,
}

impl Piece {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, density: f64) -> Self {
        Piece { rect: Rect::new(lo, hi), density }
    }

    pub fn mass(&self) -> f64 {
        self.density * self.rect.volume()
    }
}

/// On-disk form of a histogram; converted through [`Histogram::new`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistogramFile {
    pub dim: usize,
    pub domain: Domain,
    pub pieces: Vec<Piece>,
}

/// A d-dimensional piecewise-constant density on a rectangle partition.
///
/// Immutable after construction; every constructor validates.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "HistogramFile", into = "HistogramFile")]
pub struct Histogram {
    dim: usize,
    domain: Domain,
    pieces: Vec<Piece>,
    cum_mass: Vec<f64>,
    by_lo0: Vec<usize>,
}

impl TryFrom<HistogramFile> for Histogram {
    type Error = Error;

    fn try_from(f: HistogramFile) -> Result<Self> {
        Histogram::new(f.dim, f.domain, f.pieces)
    }
}

impl From<Histogram> for HistogramFile {
    fn from(h: Histogram) -> Self {
        HistogramFile { dim: h.dim, domain: h.domain, pieces: h.pieces }
    }
}

/// Checks every histogram invariant and reports the first violation.
pub fn validate(dim: usize, domain: Domain, pieces: &[Piece]) -> Result<()> {
    if dim == 0 {
        return Err(invalid("dimension must be positive"));
    }
    if pieces.is_empty() {
        return Err(Error::VolumeGap { total: 0.0 });
    }
    for (i, p) in pieces.iter().enumerate() {
        let r = &p.rect;
        if r.lo.len() != dim || r.hi.len() != dim {
            return Err(Error::InvalidRect { piece: i, reason: format!("expected {dim} coordinates") });
        }
        for j in 0..dim {
            let (l, h) = (r.lo[j], r.hi[j]);
            if !(l.is_finite() && h.is_finite()) || l < 0.0 || h > 1.0 {
                return Err(Error::InvalidRect { piece: i, reason: format!("axis {j} outside [0,1]") });
            }
            if l >= h {
                return Err(Error::InvalidRect { piece: i, reason: format!("axis {j} has lo >= hi") });
            }
        }
        if !p.density.is_finite() || p.density < 0.0 {
            return Err(Error::NegativeDensity { piece: i, density: p.density });
        }
        if let Domain::Grid(side) = domain {
            if side == 0 {
                return Err(invalid("grid side must be positive"));
            }
            let m = side as f64;
            let aligned = |v: f64| ((v * m) - (v * m).round()).abs() <= 1e-9;
            if !r.lo.iter().chain(&r.hi).all(|&v| aligned(v)) {
                return Err(Error::GridMisaligned { piece: i, side });
            }
        }
    }

    let mut order: Vec<usize> = (0..pieces.len()).collect();
    order.sort_by(|&a, &b| pieces[a].rect.lo[0].total_cmp(&pieces[b].rect.lo[0]));
    for (pos, &a) in order.iter().enumerate() {
        let ra = &pieces[a].rect;
        for &b in &order[pos + 1..] {
            let rb = &pieces[b].rect;
            if rb.lo[0] >= ra.hi[0] - OVERLAP_TOL {
                break;
            }
            if ra.overlaps_beyond_tol(rb) {
                return Err(Error::Overlap { first: a.min(b), second: a.max(b) });
            }
        }
    }

    let total_volume: f64 = pieces.iter().map(|p| p.rect.volume()).sum();
    if (total_volume - 1.0).abs() > MASS_TOL {
        return Err(Error::VolumeGap { total: total_volume });
    }
    let total_mass: f64 = pieces.iter().map(Piece::mass).sum();
    if (total_mass - 1.0).abs() > MASS_TOL {
        return Err(Error::MassNotOne { total: total_mass });
    }
    Ok(())
}

impl Histogram {
    pub fn new(dim: usize, domain: Domain, pieces: Vec<Piece>) -> Result<Self> {
        validate(dim, domain, &pieces)?;
        let mut acc = 0.0;
        let cum_mass = pieces
            .iter()
            .map(|p| {
                acc += p.mass();
                acc
            })
            .collect();
        let mut by_lo0: Vec<usize> = (0..pieces.len()).collect();
        by_lo0.sort_by(|&a, &b| pieces[a].rect.lo[0].total_cmp(&pieces[b].rect.lo[0]));
        Ok(Histogram { dim, domain, pieces, cum_mass, by_lo0 })
    }

    /// Uniform density on `[0,1]^d` as a single piece.
    pub fn uniform(dim: usize) -> Self {
        Histogram::new(dim, Domain::UnitCube, vec![Piece { rect: Rect::unit(dim), density: 1.0 }])
            .expect("unit cube is a valid histogram")
    }

    /// Re-runs [`validate`] on this histogram.
    pub fn validate(&self) -> Result<()> {
        validate(self.dim, self.domain, &self.pieces)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    /// Number of rectangles, the `k` of a k-histogram.
    pub fn piece_count(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_uniform_single_piece(&self) -> bool {
        self.pieces.len() == 1
    }

    /// Draws a point: a piece with probability equal to its mass, then a
    /// uniform point inside it.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let total = *self.cum_mass.last().expect("non-empty");
        let u = rng.random::<f64>() * total;
        let idx = self.cum_mass.partition_point(|&c| c <= u).min(self.pieces.len() - 1);
        self.pieces[idx].rect.sample_into(rng, out);
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        self.sample_into(rng, &mut x);
        x
    }

    /// Density at `x` (coordinates equal to 1 are clamped into the last cell).
    pub fn density_at(&self, x: &[f64]) -> f64 {
        let mut y = x.to_vec();
        clamp_to_unit(&mut y);
        self.pieces.iter().find(|p| p.rect.contains(&y)).map_or(0.0, |p| p.density)
    }

    /// Exact mass of a region given as pairwise-disjoint rectangles.
    pub fn mass_on(&self, region: &[Rect]) -> f64 {
        region.iter().map(|r| self.mass_on_rect(r)).sum()
    }

    pub fn mass_on_rect(&self, r: &Rect) -> f64 {
        self.overlapping(r).map(|(p, v)| p.density * v).sum()
    }

    /// Pieces intersecting `r` with positive volume, with the overlap volume.
    pub fn overlapping<'a>(&'a self, r: &'a Rect) -> impl Iterator<Item = (&'a Piece, f64)> + 'a {
        let end = self.by_lo0.partition_point(|&i| self.pieces[i].rect.lo[0] < r.hi[0]);
        self.by_lo0[..end].iter().filter_map(move |&i| {
            let p = &self.pieces[i];
            let v = p.rect.overlap_volume(r);
            (v > 0.0).then_some((p, v))
        })
    }

    /// Pieces of `self` clipped to `r`, dropping empty intersections.
    pub fn fragments(&self, r: &Rect) -> Vec<Piece> {
        let end = self.by_lo0.partition_point(|&i| self.pieces[i].rect.lo[0] < r.hi[0]);
        self.by_lo0[..end]
            .iter()
            .filter_map(|&i| {
                let p = &self.pieces[i];
                p.rect.intersect(r).map(|rect| Piece { rect, density: p.density })
            })
            .collect()
    }

    /// Mixture `(1 - w) * self + w * other` on the common refinement.
    pub fn mix(&self, other: &Histogram, w: f64) -> Result<Histogram> {
        check_dims(self, other)?;
        if !(0.0..=1.0).contains(&w) {
            return Err(invalid(format!("mixture weight {w} outside [0,1]")));
        }
        let mut pieces = Vec::new();
        for_each_intersection(self, other, |a, b, rect| {
            pieces.push(Piece { rect, density: (1.0 - w) * a.density + w * b.density });
        });
        let domain = if self.domain == other.domain { self.domain } else { Domain::UnitCube };
        Histogram::new(self.dim, domain, pieces)
    }
}

fn check_dims(p: &Histogram, q: &Histogram) -> Result<()> {
    if p.dim != q.dim {
        return Err(Error::DimensionMismatch { left: p.dim, right: q.dim });
    }
    Ok(())
}

/// Calls `f` for every pair of pieces with a positive-volume intersection.
/// Because both histograms partition the domain, the intersections form their
/// common refinement.
pub(crate) fn for_each_intersection<F>(p: &Histogram, q: &Histogram, mut f: F)
where
    F: FnMut(&Piece, &Piece, Rect),
{
    for a in &p.pieces {
        let end = q.by_lo0.partition_point(|&i| q.pieces[i].rect.lo[0] < a.rect.hi[0]);
        for &i in &q.by_lo0[..end] {
            let b = &q.pieces[i];
            if let Some(r) = a.rect.intersect(&b.rect) {
                f(a, b, r);
            }
        }
    }
}

/// Exact `int |p - q|` over the common refinement of both partitions.
pub fn l1_distance(p: &Histogram, q: &Histogram) -> Result<f64> {
    check_dims(p, q)?;
    let mut total = 0.0;
    for_each_intersection(p, q, |a, b, r| total += (a.density - b.density).abs() * r.volume());
    Ok(total)
}

/// Exact `int_S |p - q|` restricted to a box.
pub fn l1_distance_on(p: &Histogram, q: &Histogram, s: &Rect) -> Result<f64> {
    check_dims(p, q)?;
    let mut total = 0.0;
    for a in p.fragments(s) {
        for (b, v) in q.overlapping(&a.rect) {
            total += (a.density - b.density).abs() * v;
        }
    }
    Ok(total)
}

/// A probability vector over `{0, ..., n-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DiscreteFile", into = "DiscreteFile")]
pub struct DiscreteDist {
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DiscreteFile {
    probs: Vec<f64>,
}

impl TryFrom<DiscreteFile> for DiscreteDist {
    type Error = Error;
    fn try_from(f: DiscreteFile) -> Result<Self> {
        DiscreteDist::new(f.probs)
    }
}

impl From<DiscreteDist> for DiscreteFile {
    fn from(d: DiscreteDist) -> Self {
        DiscreteFile { probs: d.probs }
    }
}

impl DiscreteDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("empty support"));
        }
        if let Some(i) = probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
            return Err(invalid(format!("probability {i} is negative or not finite")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > DISCRETE_TOL {
            return Err(Error::MassNotOne { total });
        }
        Ok(DiscreteDist { probs })
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(invalid("weights must have positive sum"));
        }
        DiscreteDist::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn uniform(n: usize) -> Self {
        DiscreteDist { probs: vec![1.0 / n as f64; n] }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn l2_norm(&self) -> f64 {
        self.probs.iter().map(|p| p * p).sum::<f64>().sqrt()
    }

    /// Cumulative table for inverse-CDF sampling.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect()
    }
}

/// Draws an index from a cumulative table produced by [`DiscreteDist::cumulative`].
pub fn sample_cumulative<R: Rng + ?Sized>(cum: &[f64], rng: &mut R) -> usize {
    let u = rng.random::<f64>() * cum[cum.len() - 1];
    cum.partition_point(|&c| c <= u).min(cum.len() - 1)
}

/// Sum of the `k` largest `|p_i - q_i|`; `k >= n` gives the full l1 distance.
pub fn l1k_distance(p: &DiscreteDist, q: &DiscreteDist, k: usize) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch { left: p.len(), right: q.len() });
    }
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    let mut diffs: Vec<f64> = p.probs.iter().zip(&q.probs).map(|(a, b)| (a - b).abs()).collect();
    diffs.sort_by(|a, b| b.total_cmp(a));
    Ok(diffs.iter().take(k).sum())
}

/// Probability table on `[m]^d`, coordinate 0 most significant.
#[derive(Debug, Clone, PartialEq)]
pub struct MassTable {
    side: u32,
    dim: usize,
    masses: Vec<f64>,
}

impl MassTable {
    pub fn new(side: u32, dim: usize, masses: Vec<f64>) -> Result<Self> {
        if side == 0 || dim == 0 {
            return Err(invalid("grid side and dimension must be positive"));
        }
        let cells = (side as usize).checked_pow(dim as u32).ok_or_else(|| invalid("grid too large"))?;
        if masses.len() != cells {
            return Err(invalid(format!("expected {cells} cells, got {}", masses.len())));
        }
        DiscreteDist::new(masses.clone())?;
        Ok(MassTable { side, dim, masses })
    }

    pub fn uniform(side: u32, dim: usize) -> Self {
        let cells = (side as usize).pow(dim as u32);
        MassTable { side, dim, masses: vec![1.0 / cells as f64; cells] }
    }

    pub fn side(&self) -> u32 {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Grid coordinates of a flat cell index.
    pub fn coords(&self, mut idx: usize) -> Vec<u32> {
        let m = self.side as usize;
        let mut c = vec![0u32; self.dim];
        for j in (0..self.dim).rev() {
            c[j] = (idx % m) as u32;
            idx /= m;
        }
        c
    }

    /// Flat index of grid coordinates.
    pub fn index(&self, coords: &[u32]) -> usize {
        coords.iter().fold(0usize, |acc, &c| acc * self.side as usize + c as usize)
    }

    pub fn as_discrete(&self) -> DiscreteDist {
        DiscreteDist { probs: self.masses.clone() }
    }

    /// The box of side `1/m` that cell `coords` occupies in `[0,1]^d`.
    pub fn cell_rect(&self, coords: &[u32]) -> Rect {
        let m = self.side as f64;
        Rect::new(
            coords.iter().map(|&c| c as f64 / m).collect(),
            coords.iter().map(|&c| (c + 1) as f64 / m).collect(),
        )
    }
}

/// Embeds a table on `[m]^d` into `[0,1]^d`, one box of side `1/m` per cell.
pub fn discretize(table: &MassTable) -> Result<Histogram> {
    let cell_volume_inv = (table.side as f64).powi(table.dim as i32);
    let pieces = table
        .masses
        .iter()
        .enumerate()
        .map(|(i, &mass)| Piece { rect: table.cell_rect(&table.coords(i)), density: mass * cell_volume_inv })
        .collect();
    Histogram::new(table.dim, Domain::Grid(table.side), pieces)
}
