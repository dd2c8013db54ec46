//! Hard instances for uniformity testing: random perturbations of the uniform
//! density that are far from it in L1 yet hard to tell apart from it, plus
//! the exact chi-metric oracle used to check them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::histogram::{for_each_intersection, Domain, Histogram, Piece, Rect};

/// Largest composition count the unranking supports.
const MAX_COMPOSITIONS: u128 = 1 << 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnsembleKind {
    #[serde(rename = "oneD")]
    OneD,
    #[serde(rename = "checkerboard")]
    Checkerboard,
    #[serde(rename = "regionQ")]
    RegionQ,
}

impl std::str::FromStr for EnsembleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oneD" => Ok(EnsembleKind::OneD),
            "checkerboard" => Ok(EnsembleKind::Checkerboard),
            "regionQ" => Ok(EnsembleKind::RegionQ),
            other => Err(invalid(format!("unknown ensemble kind {other:?}"))),
        }
    }
}

/// Parameters of an ensemble. `m` and `n` are derived from `k` where the
/// kind fixes them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    pub k: usize,
    pub d: usize,
    pub eps: f64,
    /// Grid exponent: `2^m` bins per checkerboard.
    pub m: u32,
    /// Number of boxes (regionQ only; 1 otherwise).
    pub n: usize,
}

impl EnsembleSpec {
    pub fn one_d(k: usize, eps: f64) -> Result<Self> {
        check_eps(eps)?;
        if k < 2 || !k.is_multiple_of(2) {
            return Err(invalid(format!("oneD needs an even k >= 2, got {k}")));
        }
        Ok(EnsembleSpec { kind: EnsembleKind::OneD, k, d: 1, eps, m: 0, n: 1 })
    }

    /// Checkerboard with `k = 2^(m+d)` pieces.
    pub fn checkerboard(k: usize, d: usize, eps: f64) -> Result<Self> {
        check_eps(eps)?;
        let m = exponent_for(k, d)?;
        Ok(EnsembleSpec { kind: EnsembleKind::Checkerboard, k, d, eps, m, n: 1 })
    }

    /// `n` boxes of checkerboards, `k = n 2^(m+d)` pieces.
    pub fn region_q(k: usize, d: usize, eps: f64, n: usize) -> Result<Self> {
        check_eps(eps)?;
        if n == 0 || !k.is_multiple_of(n) {
            return Err(invalid(format!("k = {k} is not a multiple of n = {n}")));
        }
        let m = exponent_for(k / n, d)?;
        Ok(EnsembleSpec { kind: EnsembleKind::RegionQ, k, d, eps, m, n })
    }

    pub fn new(kind: EnsembleKind, k: usize, d: usize, eps: f64, n: Option<usize>) -> Result<Self> {
        match kind {
            EnsembleKind::OneD if d != 1 => Err(invalid("oneD is one-dimensional")),
            EnsembleKind::OneD => EnsembleSpec::one_d(k, eps),
            EnsembleKind::Checkerboard => EnsembleSpec::checkerboard(k, d, eps),
            EnsembleKind::RegionQ => EnsembleSpec::region_q(k, d, eps, n.unwrap_or(1)),
        }
    }

    /// Conditions that the construction tolerates but that void the
    /// lower-bound argument it comes from.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.kind == EnsembleKind::RegionQ {
            let count = compositions(self.m, self.d).unwrap_or(u128::MAX);
            if (self.n as u128) * 4 > count {
                out.push(format!(
                    "n = {} exceeds C(m+d-1, d-1)/4 = {} for m = {}, d = {}",
                    self.n,
                    count as f64 / 4.0,
                    self.m,
                    self.d
                ));
            }
        }
        out
    }

    /// Draws one member of the ensemble.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Histogram> {
        match self.kind {
            EnsembleKind::OneD => sample_one_d(self.k, self.eps, rng),
            EnsembleKind::Checkerboard => sample_checkerboard(self.m, self.d, self.eps, rng),
            EnsembleKind::RegionQ => sample_region_q(self.n, self.m, self.d, self.eps, rng),
        }
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(invalid(format!("eps = {eps} outside (0, 1]")));
    }
    Ok(())
}

fn exponent_for(k: usize, d: usize) -> Result<u32> {
    if d == 0 {
        return Err(invalid("dimension must be positive"));
    }
    if !k.is_power_of_two() || (k.trailing_zeros() as usize) < d {
        return Err(invalid(format!("k = {k} per box is not 2^(m+d) with m >= 0 for d = {d}")));
    }
    Ok(k.trailing_zeros() - d as u32)
}

/// `k/2` bins on `[0,1)`; each bin has density `1 + eps` on one half and
/// `1 - eps` on the other, the heavy half chosen by a fair coin.
pub fn sample_one_d<R: Rng + ?Sized>(k: usize, eps: f64, rng: &mut R) -> Result<Histogram> {
    EnsembleSpec::one_d(k, eps)?;
    let bits: Vec<bool> = (0..k / 2).map(|_| rng.random()).collect();
    one_d_with_orientation(eps, &bits)
}

/// The oneD member with the given orientations (`true`: heavy left half).
pub fn one_d_with_orientation(eps: f64, heavy_left: &[bool]) -> Result<Histogram> {
    let bins = heavy_left.len();
    let w = 1.0 / bins as f64;
    let mut pieces = Vec::with_capacity(2 * bins);
    for (i, &left) in heavy_left.iter().enumerate() {
        let lo = i as f64 * w;
        let mid = lo + w / 2.0;
        let hi = if i + 1 == bins { 1.0 } else { (i + 1) as f64 * w };
        let (a, b) = if left { (1.0 + eps, 1.0 - eps) } else { (1.0 - eps, 1.0 + eps) };
        pieces.push(Piece::new(vec![lo], vec![mid], a));
        pieces.push(Piece::new(vec![mid], vec![hi], b));
    }
    Histogram::new(1, Domain::UnitCube, pieces)
}

/// Per-coordinate grid exponents `(m_1, ..., m_d)` summing to `m`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DefiningVector(pub Vec<u32>);

impl DefiningVector {
    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }
}

fn binomial(n: u64, r: u64) -> Option<u128> {
    let r = r.min(n.saturating_sub(r));
    let mut acc: u128 = 1;
    for i in 0..r {
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// Number of compositions of `m` into `d` nonnegative parts.
pub fn compositions(m: u32, d: usize) -> Option<u128> {
    binomial(m as u64 + d as u64 - 1, d as u64 - 1)
}

/// Uniform over all compositions of `m` into `d` parts, by unranking a
/// uniform index in lexicographic order.
pub fn sample_defining_vector<R: Rng + ?Sized>(m: u32, d: usize, rng: &mut R) -> Result<DefiningVector> {
    if d == 0 {
        return Err(invalid("dimension must be positive"));
    }
    let total = compositions(m, d).filter(|&c| c <= MAX_COMPOSITIONS).ok_or_else(|| {
        invalid(format!("C({}, {}) exceeds 2^63", m as usize + d - 1, d - 1))
    })?;
    let mut rank = rng.random_range(0..total as u64) as u128;
    let mut parts = Vec::with_capacity(d);
    let mut left = m;
    for j in 0..d {
        let rest = d - j - 1;
        if rest == 0 {
            parts.push(left);
            break;
        }
        for v in 0..=left {
            let count = compositions(left - v, rest).expect("bounded by total");
            if rank < count {
                parts.push(v);
                left -= v;
                break;
            }
            rank -= count;
        }
    }
    Ok(DefiningVector(parts))
}

/// Checkerboard on `[0,1]^d` with `2^m` bins shaped by a random defining
/// vector and a random parity per bin.
pub fn sample_checkerboard<R: Rng + ?Sized>(m: u32, d: usize, eps: f64, rng: &mut R) -> Result<Histogram> {
    check_eps(eps)?;
    let v = sample_defining_vector(m, d, rng)?;
    let parities: Vec<bool> = (0..1usize << m).map(|_| rng.random()).collect();
    let pieces = checkerboard_pieces(&Rect::unit(d), 1.0, &v, &parities, eps);
    Histogram::new(d, Domain::UnitCube, pieces)
}

/// Checkerboard with an explicit defining vector and per-bin parities
/// (`parities.len() == 2^m`, bins in row-major order, coordinate 0 first).
pub fn checkerboard_with(v: &DefiningVector, parities: &[bool], eps: f64) -> Result<Histogram> {
    check_eps(eps)?;
    if parities.len() != 1usize << v.total() {
        return Err(invalid("need one parity per bin"));
    }
    let d = v.0.len();
    Histogram::new(d, Domain::UnitCube, checkerboard_pieces(&Rect::unit(d), 1.0, v, parities, eps))
}

/// Pieces of a checkerboard filling `region` with total `mass`. Each bin is
/// halved along every axis; sub-bins whose half-index sum has parity equal to
/// the bin's bit get density `(1 + eps)` times the average, the rest
/// `(1 - eps)` times it.
fn checkerboard_pieces(region: &Rect, mass: f64, v: &DefiningVector, parities: &[bool], eps: f64) -> Vec<Piece> {
    let d = v.0.len();
    let avg = mass / region.volume();
    let per_axis: Vec<usize> = v.0.iter().map(|&mj| 1usize << mj).collect();
    // Sub-bin boundaries along axis j: 2 * 2^(m_j) equal steps of the region.
    let coord = |j: usize, step: usize| -> f64 {
        let n = 2 * per_axis[j];
        if step == n {
            region.hi[j]
        } else {
            region.lo[j] + region.width(j) * step as f64 / n as f64
        }
    };
    let mut pieces = Vec::with_capacity(parities.len() << d);
    for (bin, &bit) in parities.iter().enumerate() {
        let mut rest = bin;
        let mut cell = vec![0usize; d];
        for j in (0..d).rev() {
            cell[j] = rest % per_axis[j];
            rest /= per_axis[j];
        }
        for sub in 0..1usize << d {
            let mut lo = Vec::with_capacity(d);
            let mut hi = Vec::with_capacity(d);
            let mut parity = 0;
            for j in 0..d {
                let h = (sub >> (d - 1 - j)) & 1;
                parity ^= h;
                let step = 2 * cell[j] + h;
                lo.push(coord(j, step));
                hi.push(coord(j, step + 1));
            }
            let heavy = (parity == 1) == bit;
            let density = if heavy { avg * (1.0 + eps) } else { avg * (1.0 - eps) };
            pieces.push(Piece::new(lo, hi, density));
        }
    }
    pieces
}

/// `n` axis-0 slabs of mass `1/n`, each an independent checkerboard.
pub fn sample_region_q<R: Rng + ?Sized>(n: usize, m: u32, d: usize, eps: f64, rng: &mut R) -> Result<Histogram> {
    check_eps(eps)?;
    if n == 0 {
        return Err(invalid("n must be positive"));
    }
    let mut pieces = Vec::with_capacity(n << (m as usize + d));
    for i in 0..n {
        let mut lo = vec![0.0; d];
        let mut hi = vec![1.0; d];
        lo[0] = i as f64 / n as f64;
        hi[0] = if i + 1 == n { 1.0 } else { (i + 1) as f64 / n as f64 };
        let v = sample_defining_vector(m, d, rng)?;
        let parities: Vec<bool> = (0..1usize << m).map(|_| rng.random()).collect();
        pieces.extend(checkerboard_pieces(&Rect::new(lo, hi), 1.0 / n as f64, &v, &parities, eps));
    }
    Histogram::new(d, Domain::UnitCube, pieces)
}

/// `int p q / base` over the common refinement of all three partitions.
pub fn chi_metric(base: &Histogram, p: &Histogram, q: &Histogram) -> Result<f64> {
    if base.dim() != p.dim() || p.dim() != q.dim() {
        return Err(Error::DimensionMismatch { left: base.dim(), right: p.dim().max(q.dim()) });
    }
    let mut products = Vec::new();
    for_each_intersection(p, q, |a, b, r| {
        let prod = a.density * b.density;
        if prod > 0.0 {
            products.push((r, prod));
        }
    });
    let mut total = 0.0;
    for (r, prod) in products {
        for (piece, v) in base.overlapping(&r) {
            if piece.density <= 0.0 {
                return Err(Error::Divergence);
            }
            total += prod / piece.density * v;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::histogram::l1_distance;
    use crate::rng::seeded;

    #[test]
    fn one_d_member() {
        let q = sample_one_d(8, 0.3, &mut seeded(1)).unwrap();
        assert_eq!(q.piece_count(), 8);
        let d = l1_distance(&q, &Histogram::uniform(1)).unwrap();
        assert!((d - 0.3).abs() < 1e-12);
        assert!(sample_one_d(7, 0.3, &mut seeded(1)).is_err());
    }

    #[test]
    fn defining_vector_unranking() {
        let mut rng = seeded(3);
        let mut counts = std::collections::HashMap::new();
        for _ in 0..10_000 {
            let v = sample_defining_vector(3, 2, &mut rng).unwrap();
            assert_eq!(v.total(), 3);
            *counts.entry(v.0).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 4);
        for c in counts.values() {
            assert!((*c as f64 / 1e4 - 0.25).abs() < 0.02);
        }
        assert_eq!(sample_defining_vector(5, 1, &mut rng).unwrap().0, vec![5]);
        assert!(sample_defining_vector(200, 40, &mut rng).is_err());
    }

    #[test]
    fn checkerboard_geometry() {
        let v = DefiningVector(vec![1, 2]);
        let h = checkerboard_with(&v, &[true; 8], 0.5).unwrap();
        assert_eq!(h.piece_count(), 32);
        let widths: Vec<f64> = h.pieces().iter().map(|p| p.rect.width(0)).collect();
        assert!(widths.iter().all(|&w| (w - 0.25).abs() < 1e-15));
        assert!(h.pieces().iter().all(|p| (p.rect.width(1) - 0.125).abs() < 1e-15));
        let d = l1_distance(&h, &Histogram::uniform(2)).unwrap();
        assert!((d - 0.5).abs() < 1e-12);
    }

    #[test]
    fn region_q_counts_and_warning() {
        let spec = EnsembleSpec::region_q(64, 2, 0.5, 4).unwrap();
        assert_eq!(spec.m, 2);
        assert_eq!(spec.warnings().len(), 1);
        let q = spec.sample(&mut seeded(2)).unwrap();
        assert_eq!(q.piece_count(), 64);
        assert!((l1_distance(&q, &Histogram::uniform(2)).unwrap() - 0.5).abs() < 1e-12);
        assert!(EnsembleSpec::region_q(48, 2, 0.5, 4).is_err());
    }

    #[test]
    fn chi_examples() {
        let u = Histogram::uniform(1);
        assert!((chi_metric(&u, &u, &u).unwrap() - 1.0).abs() < 1e-15);
        let q = sample_one_d(6, 0.4, &mut seeded(5)).unwrap();
        assert!((chi_metric(&u, &q, &q).unwrap() - 1.16).abs() < 1e-12);
        let half = Histogram::new(1, Domain::UnitCube, vec![Piece::new(vec![0.0], vec![0.5], 2.0), Piece::new(vec![0.5], vec![1.0], 0.0)])
            .unwrap();
        assert!(matches!(chi_metric(&half, &u, &u), Err(Error::Divergence)));
    }

    #[test]
    fn kind_names_round_trip() {
        for (s, k) in [("oneD", EnsembleKind::OneD), ("checkerboard", EnsembleKind::Checkerboard), ("regionQ", EnsembleKind::RegionQ)] {
            assert_eq!(s.parse::<EnsembleKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{s}\""));
        }
    }
}
