//! Seeded inputs shared by the benchmarks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use widelearn_core::synth;
use widelearn_core::{CovarianceModel, LabeledDataset, Provenance};

/// `n` generated rectangle images (784 binary pixels, two classes).
pub fn rectangles(n: usize) -> LabeledDataset {
    synth::rectangles(n, 17).expect("generated data is valid")
}

/// Sparse binary data with `n` rows of dimension `d`, about a fifth of the pixels on.
pub fn binary_data(n: usize, d: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    Array2::from_shape_simple_fn((n, d), || f64::from(u8::from(rng.random::<f64>() < 0.2)))
}

/// A well-conditioned SPD covariance of order `d`.
pub fn covariance(d: usize) -> CovarianceModel {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let a = Array2::from_shape_simple_fn((d, d), || rng.random::<f64>() - 0.5);
    let mut s = a.dot(&a.t()) / d as f64;
    for i in 0..d {
        s[[i, i]] += 0.1;
    }
    CovarianceModel::new(s, Provenance::Manual).expect("SPD by construction")
}
