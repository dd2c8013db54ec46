//! Oblivious covering of a known histogram by equal-marginal-mass dyadic
//! z-grids, with point location and the subfamily extraction used to check
//! the covering guarantees.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::histogram::{validate, Domain, Histogram, Piece, Rect};

/// Number of dyadic levels per coordinate for a `(k, 2^d m^d, m^d, eps)` covering:
/// the smallest `m >= 1` with `2^m >= 4kd/eps`.
pub fn levels_for(k: usize, dim: usize, eps: f64) -> Result<u32> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(invalid(format!("eps = {eps} outside (0, 1]")));
    }
    if k == 0 || dim == 0 {
        return Err(invalid("k and the dimension must be positive"));
    }
    let target = 4.0 * k as f64 * dim as f64 / eps;
    let mut m = 1u32;
    // The relative slack keeps exact powers of two from rounding up a level.
    while 2f64.powi(m as i32) < target * (1.0 - 1e-12) {
        m += 1;
    }
    Ok(m)
}

/// Per-coordinate equal-mass dyadic partitions of the marginals of `p`.
///
/// Only the finest level is stored: level `i` boundaries are every
/// `2^(m-1-i)`-th finest boundary, so refinement holds by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DyadicMarginalPartitions {
    levels: u32,
    /// `finest[j]` has `2^(m-1) + 1` nondecreasing entries from 0 to 1.
    finest: Vec<Vec<f64>>,
}

/// Piecewise-linear marginal CDF of one coordinate.
struct MarginalCdf {
    points: Vec<f64>,
    cum: Vec<f64>,
}

impl MarginalCdf {
    fn new(p: &Histogram, axis: usize) -> Self {
        let mut points: Vec<f64> = vec![0.0, 1.0];
        for piece in p.pieces() {
            points.push(piece.rect.lo[axis]);
            points.push(piece.rect.hi[axis]);
        }
        points.sort_by(f64::total_cmp);
        points.dedup();
        // Each piece spreads its mass uniformly over its extent on this axis.
        let mut seg_mass = vec![0.0; points.len() - 1];
        for piece in p.pieces() {
            let (lo, hi) = (piece.rect.lo[axis], piece.rect.hi[axis]);
            let rate = piece.mass() / (hi - lo);
            let a = points.partition_point(|&x| x < lo);
            let b = points.partition_point(|&x| x < hi);
            for s in a..b {
                seg_mass[s] += rate * (points[s + 1] - points[s]);
            }
        }
        let mut cum = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for m in seg_mass {
            acc += m;
            cum.push(acc);
        }
        MarginalCdf { points, cum }
    }

    fn total(&self) -> f64 {
        *self.cum.last().expect("non-empty")
    }

    /// Leftmost `x` with `F(x) >= t`.
    fn quantile(&self, t: f64) -> f64 {
        let i = self.cum.partition_point(|&c| c < t);
        if i == 0 {
            return self.points[0];
        }
        if i >= self.cum.len() {
            return 1.0;
        }
        let (x0, x1) = (self.points[i - 1], self.points[i]);
        let (c0, c1) = (self.cum[i - 1], self.cum[i]);
        let x = x0 + (t - c0) / (c1 - c0) * (x1 - x0);
        x.clamp(x0, x1)
    }
}

impl DyadicMarginalPartitions {
    pub fn build(p: &Histogram, levels: u32) -> Result<Self> {
        if levels == 0 {
            return Err(invalid("need at least one level"));
        }
        if levels > 30 {
            return Err(invalid(format!("{levels} levels per coordinate is beyond supported size")));
        }
        let intervals = 1usize << (levels - 1);
        let finest = (0..p.dim())
            .map(|axis| {
                let cdf = MarginalCdf::new(p, axis);
                let total = cdf.total();
                let mut b: Vec<f64> = (0..=intervals).map(|s| cdf.quantile(total * s as f64 / intervals as f64)).collect();
                b[0] = 0.0;
                b[intervals] = 1.0;
                for s in 1..=intervals {
                    if b[s] < b[s - 1] {
                        b[s] = b[s - 1];
                    }
                }
                b
            })
            .collect();
        Ok(DyadicMarginalPartitions { levels, finest })
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn dim(&self) -> usize {
        self.finest.len()
    }

    /// Interior cuts of `level` on `axis` (`2^level - 1` values).
    pub fn cuts(&self, axis: usize, level: u32) -> Vec<f64> {
        let stride = 1usize << (self.levels - 1 - level);
        let b = &self.finest[axis];
        (1..(1usize << level)).map(|i| b[i * stride]).collect()
    }

    /// Endpoints of interval `idx` of `level` on `axis`.
    pub fn interval(&self, axis: usize, level: u32, idx: u64) -> (f64, f64) {
        let stride = 1usize << (self.levels - 1 - level);
        let b = &self.finest[axis];
        let s = idx as usize * stride;
        (b[s], b[s + stride])
    }

    /// Index of the finest-level interval containing `x` on `axis`.
    /// Points on a cut go to the interval on the right.
    pub fn finest_index(&self, axis: usize, x: f64) -> u64 {
        let b = &self.finest[axis];
        let interior = &b[1..b.len() - 1];
        interior.partition_point(|&c| c <= x) as u64
    }
}

/// Address of one covering cell: the z-grid (mixed-radix index of `z`) and the
/// per-coordinate interval indices packed `m - 1` bits per coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellAddr {
    pub grid: u32,
    pub index: u64,
}

/// The family F of all cells of all z-grids, `z in {0..m-1}^d`.
#[derive(Debug, Clone)]
pub struct Covering {
    parts: DyadicMarginalPartitions,
    dim: usize,
    m: u32,
    bits: u32,
}

#[derive(Serialize)]
struct CoveringDump {
    m: u32,
    dim: usize,
    ell: u64,
    j: u64,
    /// `levels[axis][level]` lists the interior cuts.
    levels: Vec<Vec<Vec<f64>>>,
}

impl Covering {
    /// Covering for `k`-histograms at slack `eps`, built from the marginals of `p`.
    pub fn build(p: &Histogram, k: usize, eps: f64) -> Result<Self> {
        let m = levels_for(k, p.dim(), eps)?;
        Covering::with_levels(p, m)
    }

    pub fn with_levels(p: &Histogram, m: u32) -> Result<Self> {
        let dim = p.dim();
        let bits = m.saturating_sub(1).max(1);
        if (bits as u64) * (dim as u64) > 63 {
            return Err(invalid(format!("covering with m = {m}, d = {dim} exceeds 64-bit cell addressing")));
        }
        if (m as u64).checked_pow(dim as u32).is_none_or(|g| g > u32::MAX as u64) {
            return Err(invalid("too many z-grids"));
        }
        let parts = DyadicMarginalPartitions::build(p, m)?;
        Ok(Covering { parts, dim, m, bits })
    }

    pub fn partitions(&self) -> &DyadicMarginalPartitions {
        &self.parts
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    /// `l = m^d`: the number of z-grids, and of cells containing any point.
    pub fn ell(&self) -> u64 {
        (self.m as u64).pow(self.dim as u32)
    }

    /// `j = 2^d m^d`.
    pub fn j(&self) -> u64 {
        (1u64 << self.dim) * self.ell()
    }

    pub fn num_grids(&self) -> u32 {
        self.ell() as u32
    }

    /// `sum_z prod_j 2^(z_j) = (2^m - 1)^d`.
    pub fn total_cells(&self) -> u64 {
        ((1u64 << self.m) - 1).pow(self.dim as u32)
    }

    /// The level vector `z` of a grid index.
    pub fn grid_z(&self, mut grid: u32) -> Vec<u32> {
        let mut z = vec![0; self.dim];
        for j in (0..self.dim).rev() {
            z[j] = grid % self.m;
            grid /= self.m;
        }
        z
    }

    pub fn grid_index(&self, z: &[u32]) -> u32 {
        z.iter().fold(0, |acc, &zj| acc * self.m + zj)
    }

    /// Interval index of each coordinate of a cell.
    pub fn cell_indices(&self, cell: &CellAddr) -> Vec<u64> {
        let mask = (1u64 << self.bits) - 1;
        (0..self.dim).map(|j| (cell.index >> (self.bits * j as u32)) & mask).collect()
    }

    pub fn cell_addr(&self, z: &[u32], indices: &[u64]) -> CellAddr {
        let index = indices.iter().enumerate().fold(0u64, |acc, (j, &i)| acc | (i << (self.bits * j as u32)));
        CellAddr { grid: self.grid_index(z), index }
    }

    pub fn cell_rect(&self, cell: &CellAddr) -> Rect {
        let z = self.grid_z(cell.grid);
        let idx = self.cell_indices(cell);
        let (lo, hi) = (0..self.dim).map(|j| self.parts.interval(j, z[j], idx[j])).unzip();
        Rect { lo, hi }
    }

    /// Finest-level interval index of `x` in each coordinate; the input to
    /// every per-grid lookup.
    pub fn finest_indices(&self, x: &[f64]) -> Vec<u64> {
        (0..self.dim).map(|j| self.parts.finest_index(j, x[j])).collect()
    }

    /// Cell of grid `grid` containing the point whose finest indices are `fine`.
    pub fn locate_fine(&self, grid: u32, fine: &[u64]) -> CellAddr {
        let mut g = grid;
        let mut index = 0u64;
        for j in (0..self.dim).rev() {
            let level = g % self.m;
            g /= self.m;
            index |= (fine[j] >> (self.m - 1 - level)) << (self.bits * j as u32);
        }
        CellAddr { grid, index }
    }

    /// The unique cell of the z-grid containing `x`.
    pub fn locate(&self, z: &[u32], x: &[f64]) -> CellAddr {
        self.locate_fine(self.grid_index(z), &self.finest_indices(x))
    }

    /// All `m^d` cells containing `x`, one per grid.
    pub fn cells_containing(&self, x: &[f64]) -> Vec<CellAddr> {
        let fine = self.finest_indices(x);
        (0..self.num_grids()).map(|g| self.locate_fine(g, &fine)).collect()
    }

    /// Every cell of every grid. Intended for small coverings.
    pub fn all_cells(&self) -> impl Iterator<Item = CellAddr> + '_ {
        (0..self.num_grids()).flat_map(move |g| {
            let z = self.grid_z(g);
            let count: u64 = z.iter().map(|&zj| 1u64 << zj).product();
            (0..count).map(move |mut flat| {
                let mut idx = vec![0u64; self.dim];
                for j in (0..self.dim).rev() {
                    let n = 1u64 << z[j];
                    idx[j] = flat % n;
                    flat /= n;
                }
                self.cell_addr(&z, &idx)
            })
        })
    }

    /// For a partition `pi` of the domain into boxes, the disjoint subfamily of
    /// cells lying inside single boxes and jointly covering all but
    /// `O(|pi| d / 2^m)` of the mass.
    ///
    /// Each box is trimmed by dropping the finest intervals holding its
    /// endpoints, the remaining run of finest intervals is cut into canonical
    /// dyadic blocks per coordinate, and the products of blocks are returned.
    pub fn extract_subfamily(&self, pi: &[Rect]) -> Result<Vec<CellAddr>> {
        let pieces: Vec<Piece> = pi.iter().map(|r| Piece { rect: r.clone(), density: 1.0 }).collect();
        if pieces.iter().any(|p| p.rect.dim() != self.dim) {
            return Err(Error::NotAPartition("box dimension differs from the covering".into()));
        }
        validate(self.dim, Domain::UnitCube, &pieces).map_err(|e| Error::NotAPartition(e.to_string()))?;

        let top = self.m - 1;
        let last = (1u64 << top) - 1;
        let mut out = Vec::new();
        for r in pi {
            let mut blocks: Vec<Vec<(u32, u64)>> = Vec::with_capacity(self.dim);
            for j in 0..self.dim {
                let start = self.parts.finest_index(j, r.lo[j]) + 1;
                let end = if r.hi[j] >= 1.0 { last } else { self.parts.finest_index(j, r.hi[j]) };
                blocks.push(dyadic_blocks(start, end, top));
            }
            if blocks.iter().any(Vec::is_empty) {
                continue;
            }
            let mut choice = vec![0usize; self.dim];
            'product: loop {
                let z: Vec<u32> = (0..self.dim).map(|j| blocks[j][choice[j]].0).collect();
                let idx: Vec<u64> = (0..self.dim).map(|j| blocks[j][choice[j]].1).collect();
                out.push(self.cell_addr(&z, &idx));
                for j in 0..self.dim {
                    choice[j] += 1;
                    if choice[j] < blocks[j].len() {
                        continue 'product;
                    }
                    choice[j] = 0;
                }
                break;
            }
        }
        Ok(out)
    }

    /// JSON dump of the per-coordinate cuts at every level.
    pub fn to_json(&self) -> Result<String> {
        let levels = (0..self.dim).map(|j| (0..self.m).map(|i| self.parts.cuts(j, i)).collect()).collect();
        let dump = CoveringDump { m: self.m, dim: self.dim, ell: self.ell(), j: self.j(), levels };
        Ok(serde_json::to_string_pretty(&dump)?)
    }
}

/// Canonical decomposition of finest intervals `[start, end)` into aligned
/// dyadic blocks, as `(level, index)` pairs, with `top` the finest level.
fn dyadic_blocks(mut start: u64, end: u64, top: u32) -> Vec<(u32, u64)> {
    let mut out = Vec::new();
    while start < end {
        let mut t = if start == 0 { top } else { start.trailing_zeros().min(top) };
        while start + (1u64 << t) > end {
            t -= 1;
        }
        out.push((top - t, start >> t));
        start += 1u64 << t;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::histogram::Domain;

    fn left_heavy() -> Histogram {
        Histogram::new(1, Domain::UnitCube, vec![Piece::new(vec![0.0], vec![0.5], 2.0), Piece::new(vec![0.5], vec![1.0], 0.0)])
            .unwrap()
    }

    #[test]
    fn level_count_examples() {
        assert_eq!(levels_for(4, 1, 1.0).unwrap(), 4);
        assert_eq!(levels_for(1, 1, 1.0).unwrap(), 2);
        assert_eq!(levels_for(32, 2, 0.125).unwrap(), 11);
        assert_eq!(levels_for(3, 1, 0.5).unwrap(), 5);
        assert!(levels_for(4, 1, 0.0).is_err());
    }

    #[test]
    fn uniform_cuts() {
        let parts = DyadicMarginalPartitions::build(&Histogram::uniform(1), 2).unwrap();
        assert!(parts.cuts(0, 0).is_empty());
        assert_eq!(parts.cuts(0, 1), vec![0.5]);
    }

    #[test]
    fn cuts_follow_mass() {
        let parts = DyadicMarginalPartitions::build(&left_heavy(), 2).unwrap();
        assert!((parts.cuts(0, 1)[0] - 0.25).abs() < 1e-15);
        let deep = DyadicMarginalPartitions::build(&left_heavy(), 4).unwrap();
        for level in 1..4 {
            let coarse = deep.cuts(0, level - 1);
            let fine = deep.cuts(0, level);
            assert!(coarse.iter().all(|c| fine.contains(c)));
        }
    }

    #[test]
    fn plateau_cut_is_leftmost() {
        let h = Histogram::new(
            1,
            Domain::UnitCube,
            vec![
                Piece::new(vec![0.0], vec![0.25], 2.0),
                Piece::new(vec![0.25], vec![0.75], 0.0),
                Piece::new(vec![0.75], vec![1.0], 2.0),
            ],
        )
        .unwrap();
        let parts = DyadicMarginalPartitions::build(&h, 2).unwrap();
        assert!((parts.cuts(0, 1)[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn counts_and_parameters() {
        let c = Covering::build(&Histogram::uniform(1), 4, 1.0).unwrap();
        assert_eq!((c.m(), c.ell(), c.total_cells()), (4, 4, 15));
        assert_eq!(c.all_cells().count(), 15);
        let c2 = Covering::with_levels(&Histogram::uniform(2), 2).unwrap();
        assert_eq!((c2.ell(), c2.j(), c2.total_cells()), (4, 16, 9));
        let per_grid: Vec<usize> =
            (0..4).map(|g| c2.all_cells().filter(|cell| cell.grid == g).count()).collect();
        assert_eq!(per_grid, vec![1, 2, 2, 4]);
    }

    #[test]
    fn locate_examples() {
        let c = Covering::with_levels(&Histogram::uniform(2), 2).unwrap();
        let cell = c.locate(&[1, 1], &[0.7, 0.2]);
        assert_eq!(c.cell_indices(&cell), vec![1, 0]);
        let on_cut = c.locate(&[1, 0], &[0.5, 0.5]);
        assert_eq!(c.cell_indices(&on_cut), vec![1, 0]);
        let r = c.cell_rect(&cell);
        assert_eq!(r, Rect::new(vec![0.5, 0.0], vec![1.0, 0.5]));
    }

    #[test]
    fn subfamily_trace() {
        let c = Covering::with_levels(&Histogram::uniform(1), 3).unwrap();
        let cells = c.extract_subfamily(&[Rect::new(vec![0.0], vec![0.125]), Rect::new(vec![0.125], vec![0.875]), Rect::new(vec![0.875], vec![1.0])]).unwrap();
        let rects: Vec<Rect> = cells.iter().map(|cell| c.cell_rect(cell)).collect();
        assert_eq!(rects, vec![Rect::new(vec![0.25], vec![0.5]), Rect::new(vec![0.5], vec![0.75])]);
    }

    #[test]
    fn subfamily_rejects_non_partition() {
        let c = Covering::with_levels(&Histogram::uniform(1), 3).unwrap();
        assert!(matches!(c.extract_subfamily(&[Rect::new(vec![0.0], vec![0.5])]), Err(Error::NotAPartition(_))));
    }

    #[test]
    fn dyadic_block_decomposition() {
        assert_eq!(dyadic_blocks(0, 8, 3), vec![(0, 0)]);
        assert_eq!(dyadic_blocks(1, 7, 3), vec![(3, 1), (2, 1), (2, 2), (3, 6)]);
        assert_eq!(dyadic_blocks(2, 4, 2), vec![(1, 1)]);
        assert!(dyadic_blocks(3, 3, 2).is_empty());
    }

    #[test]
    fn dump_lists_cuts() {
        let c = Covering::with_levels(&Histogram::uniform(1), 2).unwrap();
        let v: serde_json::Value = serde_json::from_str(&c.to_json().unwrap()).unwrap();
        assert_eq!(v["levels"][0][1][0], 0.5);
    }
}
