//! Splitting a covering cell into equal-volume halves: the half where `p` is
//! heaviest and the half where it is lightest.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::histogram::{l1_distance_on, Histogram, Piece, Rect};

/// A cell `S` cut into `S1` (heavy) and `S2` (light) of volume `vol(S)/2` each.
/// Both halves are stored as fragments of `p`'s pieces, carrying `p`'s density.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitCell {
    pub region: Rect,
    pub heavy: Vec<Piece>,
    pub light: Vec<Piece>,
}

impl SplitCell {
    pub fn heavy_mass(&self) -> f64 {
        self.heavy.iter().map(Piece::mass).sum()
    }

    pub fn light_mass(&self) -> f64 {
        self.light.iter().map(Piece::mass).sum()
    }

    pub fn heavy_rects(&self) -> Vec<Rect> {
        self.heavy.iter().map(|p| p.rect.clone()).collect()
    }

    pub fn light_rects(&self) -> Vec<Rect> {
        self.light.iter().map(|p| p.rect.clone()).collect()
    }

    /// Whether a point of the cell falls in the heavy half.
    pub fn in_heavy(&self, x: &[f64]) -> bool {
        self.heavy.iter().any(|p| p.rect.contains(x))
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

/// Splits `s` by `p`'s density: fragments of `s` sorted by decreasing density
/// (ties by lower corner) fill the heavy half up to `vol(s)/2`, and the
/// fragment that crosses the target is cut along axis 0.
pub fn split_cell(p: &Histogram, s: &Rect) -> SplitCell {
    let mut frags = p.fragments(s);
    frags.sort_by(|a, b| b.density.total_cmp(&a.density).then_with(|| lex_cmp(&a.rect.lo, &b.rect.lo)));
    let target = s.volume() / 2.0;
    let mut acc = 0.0;
    let mut heavy = Vec::new();
    let mut light = Vec::new();
    for f in frags {
        let v = f.rect.volume();
        if acc >= target {
            light.push(f);
        } else if acc + v <= target {
            acc += v;
            heavy.push(f);
        } else {
            let (lo0, hi0) = (f.rect.lo[0], f.rect.hi[0]);
            let cut = lo0 + (target - acc) / (v / (hi0 - lo0));
            acc = target;
            if cut <= lo0 {
                light.push(f);
            } else if cut >= hi0 {
                heavy.push(f);
            } else {
                let mut left = f.clone();
                left.rect.hi[0] = cut;
                let mut right = f;
                right.rect.lo[0] = cut;
                heavy.push(left);
                light.push(right);
            }
        }
    }
    SplitCell { region: s.clone(), heavy, light }
}

/// `(|int_S1 (p - q)|, |int_S2 (p - q)|, int_S |p - q|)`, all exact.
///
/// Fails with [`Error::NotConstantOnCell`] unless `q` is constant on the cell.
pub fn split_discrepancy(p: &Histogram, q: &Histogram, sc: &SplitCell) -> Result<(f64, f64, f64)> {
    let on_cell = q.fragments(&sc.region);
    if let Some(first) = on_cell.first() {
        let tol = 1e-12 * first.density.abs().max(1.0);
        if on_cell.iter().any(|f| (f.density - first.density).abs() > tol) {
            return Err(Error::NotConstantOnCell);
        }
    }
    let heavy = sc.heavy_rects();
    let light = sc.light_rects();
    let a = (p.mass_on(&heavy) - q.mass_on(&heavy)).abs();
    let b = (p.mass_on(&light) - q.mass_on(&light)).abs();
    let total = l1_distance_on(p, q, &sc.region)?;
    Ok((a, b, total))
}
