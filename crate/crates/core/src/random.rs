//! Random instances: rectangle partitions, histograms and discrete
//! distributions. Used by tests, benchmarks and the covering checker.

use rand::Rng;

use crate::error::Result;
use crate::histogram::{DiscreteDist, Domain, Histogram, Piece, Rect};

/// A guillotine partition of `[0,1]^d` into exactly `k` boxes: repeatedly
/// cut a uniformly chosen box along a random axis at a random interior point.
pub fn random_partition<R: Rng + ?Sized>(d: usize, k: usize, rng: &mut R) -> Vec<Rect> {
    let mut boxes = vec![Rect::unit(d)];
    while boxes.len() < k.max(1) {
        let i = rng.random_range(0..boxes.len());
        let axis = rng.random_range(0..d);
        let r = boxes[i].clone();
        let cut = r.lo[axis] + r.width(axis) * rng.random_range(0.2..0.8);
        let mut left = r.clone();
        left.hi[axis] = cut;
        let mut right = r;
        right.lo[axis] = cut;
        boxes[i] = left;
        boxes.push(right);
    }
    boxes
}

/// A random `k`-histogram: a random partition with random masses. About one
/// piece in eight gets density zero.
pub fn random_histogram<R: Rng + ?Sized>(d: usize, k: usize, rng: &mut R) -> Result<Histogram> {
    let boxes = random_partition(d, k, rng);
    histogram_on(boxes, rng)
}

/// Random densities on the given partition.
pub fn histogram_on<R: Rng + ?Sized>(boxes: Vec<Rect>, rng: &mut R) -> Result<Histogram> {
    let d = boxes[0].dim();
    let mut weights: Vec<f64> = boxes.iter().map(|_| if rng.random_range(0..8) == 0 { 0.0 } else { rng.random_range(0.05..1.0) }).collect();
    if weights.iter().all(|&w| w == 0.0) {
        weights[0] = 1.0;
    }
    let total: f64 = weights.iter().sum();
    let pieces = boxes
        .into_iter()
        .zip(weights)
        .map(|(rect, w)| {
            let density = w / total / rect.volume();
            Piece { rect, density }
        })
        .collect();
    Histogram::new(d, Domain::UnitCube, pieces)
}

/// Random distribution on `n` elements with uniform random weights.
pub fn random_discrete<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DiscreteDist {
    let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    DiscreteDist::from_weights(&w).expect("positive weights")
}
