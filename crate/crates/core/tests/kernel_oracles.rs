//! Arc-cosine kernels against Monte-Carlo estimates of the defining Gaussian
//! integral and against closed-form Gaussian moments.

mod common;

use common::{cholesky, mc_kernel, normal_vec, random_spd};
use ndarray::{array, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use widelearn_core::arc_kernels::{arc_cosine, covariance_arc_cosine, gram, KernelDescriptor};
use widelearn_core::{CovarianceModel, Degree, Provenance};

const SAMPLES: usize = 200_000;
const SIGMAS: f64 = 4.0;

fn degrees() -> [(Degree, i32); 3] {
    [(Degree::Zero, 0), (Degree::One, 1), (Degree::Two, 2)]
}

#[test]
fn identity_kernel_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let eye = Array2::<f64>::eye(3);
    for _ in 0..4 {
        let x = normal_vec(3, &mut rng);
        let y = normal_vec(3, &mut rng);
        for (degree, n) in degrees() {
            let k = arc_cosine(x.view(), y.view(), degree).unwrap();
            let (mean, se) = mc_kernel(x.view(), y.view(), eye.view(), n, SAMPLES, &mut rng);
            assert!((k - mean).abs() <= SIGMAS * se, "n={n}: {k} vs {mean} ± {se}");
        }
    }
}

#[test]
fn covariance_kernel_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..4 {
        let sigma = random_spd(4, 0.1, &mut rng);
        let l = cholesky(sigma.view());
        let model = CovarianceModel::new(sigma, Provenance::Manual).unwrap();
        let x = normal_vec(4, &mut rng);
        let y = normal_vec(4, &mut rng);
        for (degree, n) in degrees() {
            let k = covariance_arc_cosine(x.view(), y.view(), &model, degree).unwrap();
            let (mean, se) = mc_kernel(x.view(), y.view(), l.view(), n, SAMPLES, &mut rng);
            assert!((k - mean).abs() <= SIGMAS * se, "n={n}: {k} vs {mean} ± {se}");
        }
    }
}

#[test]
fn self_similarity_is_a_half_gaussian_moment() {
    // E[H(u) u^{2n}] for u ~ N(0, s²) is half the 2n-th moment: s^{2n}(2n-1)!!/2
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..10 {
        let x = normal_vec(5, &mut rng);
        let s2 = x.dot(&x);
        let k0 = arc_cosine(x.view(), x.view(), Degree::Zero).unwrap();
        let k1 = arc_cosine(x.view(), x.view(), Degree::One).unwrap();
        let k2 = arc_cosine(x.view(), x.view(), Degree::Two).unwrap();
        approx::assert_relative_eq!(k0, 0.5, max_relative = 1e-14);
        approx::assert_relative_eq!(k1, s2 / 2.0, max_relative = 1e-14);
        approx::assert_relative_eq!(k2, 3.0 * s2 * s2 / 2.0, max_relative = 1e-14);
    }
    // the covariance kernel's diagonal is the same moment under s² = xᵀΣx
    let sigma = random_spd(5, 0.1, &mut rng);
    let model = CovarianceModel::new(sigma.clone(), Provenance::Manual).unwrap();
    for _ in 0..10 {
        let x = normal_vec(5, &mut rng);
        let s2 = x.dot(&sigma.dot(&x));
        let k0 = covariance_arc_cosine(x.view(), x.view(), &model, Degree::Zero).unwrap();
        let k1 = covariance_arc_cosine(x.view(), x.view(), &model, Degree::One).unwrap();
        approx::assert_relative_eq!(k0, 0.5, max_relative = 1e-14);
        approx::assert_relative_eq!(k1, s2 / 2.0, max_relative = 1e-13);
    }
    // and the Monte-Carlo integral agrees at x = y for n = 2
    let x = array![0.6, -0.8, 0.3];
    let (mean, se) = mc_kernel(x.view(), x.view(), Array2::<f64>::eye(3).view(), 2, SAMPLES, &mut rng);
    let k2 = arc_cosine(x.view(), x.view(), Degree::Two).unwrap();
    assert!((k2 - mean).abs() <= SIGMAS * se, "{k2} vs {mean} ± {se}");
}

#[test]
fn orthogonal_and_antiparallel_inputs() {
    let x = array![2.0, 0.0];
    let y = array![0.0, 3.0];
    // θ = π/2: J0 = π/2, J1 = 1, J2 = π/2
    approx::assert_relative_eq!(
        arc_cosine(x.view(), y.view(), Degree::Zero).unwrap(),
        0.25,
        max_relative = 1e-15
    );
    approx::assert_relative_eq!(
        arc_cosine(x.view(), y.view(), Degree::One).unwrap(),
        6.0 / (2.0 * std::f64::consts::PI),
        max_relative = 1e-15
    );
    approx::assert_relative_eq!(
        arc_cosine(x.view(), y.view(), Degree::Two).unwrap(),
        9.0,
        max_relative = 1e-14
    );
    // H(w·x)H(-w·x) = 0 for every w
    let z = -&x;
    for (degree, _) in degrees() {
        assert_eq!(arc_cosine(x.view(), z.view(), degree).unwrap(), 0.0);
    }
}

#[test]
fn gram_of_sqrt_sigma_features_matches_covariance_gram() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let sigma = random_spd(3, 0.2, &mut rng);
    let root = common::sqrtm(sigma.view());
    let x = Array2::from_shape_fn((6, 3), |_| {
        rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng)
    });
    let mapped = x.dot(&root);
    let model = CovarianceModel::new(sigma, Provenance::Manual).unwrap();
    for depth in [0, 3] {
        let a = gram(
            x.view(),
            &KernelDescriptor::with_covariance(Degree::One, model.clone()).layers(depth),
        )
        .unwrap();
        let b = gram(mapped.view(), &KernelDescriptor::identity(Degree::One).layers(depth)).unwrap();
        for (u, v) in a.values.iter().zip(b.values.iter()) {
            approx::assert_relative_eq!(*u, *v, max_relative = 1e-9, epsilon = 1e-12);
        }
    }
}
