#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sparse_sensing::pod::{compute_pod, PodBasis, SnapshotMatrix};

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

/// Orthonormal `n x r` basis from the SVD of a random matrix.
pub fn random_basis(n: usize, r: usize, seed: u64) -> PodBasis {
    compute_pod(&SnapshotMatrix::new(gaussian(n, n.max(r) + 5, seed)).unwrap(), r).unwrap()
}

/// Businger-Golub pivoting with modified Gram-Schmidt: at each step take the
/// residual column of largest norm (lowest index on ties) and orthogonalize
/// every other residual column against it. Returns the pivot sequence.
pub fn textbook_pivots(w: &DMatrix<f64>, count: usize) -> Vec<usize> {
    let mut residual = w.clone();
    let n = w.ncols();
    let mut chosen = vec![false; n];
    let mut pivots = Vec::with_capacity(count);
    for _ in 0..count {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if chosen[j] {
                continue;
            }
            let norm = residual.column(j).norm();
            if best.is_none_or(|(_, b)| norm > b) {
                best = Some((j, norm));
            }
        }
        let (p, norm) = best.expect("a column remains");
        chosen[p] = true;
        pivots.push(p);
        let q = residual.column(p) / norm;
        for j in 0..n {
            if !chosen[j] {
                let proj = q.dot(&residual.column(j));
                let update = &q * proj;
                let mut col = residual.column_mut(j);
                col -= update;
            }
        }
    }
    pivots
}
