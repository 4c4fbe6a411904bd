#![allow(dead_code)]

use ewca_core::rng::{self, Purpose};
use ewca_core::{center, qf, DataMatrix, Mat, StiefelBasis};

pub fn gaussian(seed: u64, rows: usize, cols: usize) -> Mat<f64> {
    let mut r = rng::stream(seed, Purpose::Synthetic, 1000);
    Mat::from_fn(rows, cols, |_, _| rng::standard_normal(&mut r))
}

/// Gaussian data with per-feature standard deviations `scales`, centered.
pub fn anisotropic(seed: u64, scales: &[f64], n: usize) -> DataMatrix {
    let g = gaussian(seed, scales.len(), n);
    center(&DataMatrix::new(Mat::from_fn(scales.len(), n, |i, j| scales[i] * g[(i, j)])).unwrap())
}

pub fn random_basis(seed: u64, d: usize, k: usize) -> StiefelBasis {
    qf(gaussian(seed, d, k).as_ref()).unwrap()
}

pub fn is_non_increasing(trace: &[f64], slack: f64) -> bool {
    trace.windows(2).all(|w| w[1] <= w[0] + slack)
}
