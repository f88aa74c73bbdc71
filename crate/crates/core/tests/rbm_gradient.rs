//! CD-p with a long chain against the exact log-likelihood gradient of a
//! tiny RBM, where the partition function is a sum over 8 states.

mod common;

use common::mean_se;
use ndarray::{array, Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use widelearn_core::rbm::{cd_step, CdConfig, RbmParams, UnitType};

const CHAINS: usize = 100_000;
const SIGMAS: f64 = 4.0;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `∂ log p(x0) / ∂(W, a, b)` by enumeration.
fn exact_gradient(
    w: &Array2<f64>,
    a: &Array1<f64>,
    b: &Array1<f64>,
    x0: &Array1<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let mut z = 0.0;
    let mut exw = Array2::<f64>::zeros((2, 1));
    let mut ex = Array1::<f64>::zeros(2);
    let mut eh = Array1::<f64>::zeros(1);
    for bits in 0..8u32 {
        let x = array![f64::from(bits & 1), f64::from((bits >> 1) & 1)];
        let h = array![f64::from((bits >> 2) & 1)];
        let energy = -(x[0] * w[[0, 0]] * h[0] + x[1] * w[[1, 0]] * h[0] + a.dot(&x) + b.dot(&h));
        let p = (-energy).exp();
        z += p;
        for i in 0..2 {
            exw[[i, 0]] += p * x[i] * h[0];
            ex[i] += p * x[i];
        }
        eh[0] += p * h[0];
    }
    let h0 = sigmoid(x0.dot(&w.column(0)) + b[0]);
    let gw = Array2::from_shape_fn((2, 1), |(i, _)| x0[i] * h0 - exw[[i, 0]] / z);
    let ga = x0 - &(ex / z);
    let gb = array![h0 - eh[0] / z];
    (gw, ga, gb)
}

#[test]
fn long_chain_cd_matches_the_likelihood_gradient() {
    let w = array![[0.8], [-0.5]];
    let a = array![0.2, -0.3];
    let b = array![0.1];
    let x0 = array![1.0, 0.0];
    let params = RbmParams::new(w.clone(), a.clone(), b.clone(), UnitType::Binary).unwrap();
    let config = CdConfig {
        learning_rate: 1.0,
        cd_steps: 50,
        ..CdConfig::default()
    };
    let (gw, ga, gb) = exact_gradient(&w, &a, &b, &x0);

    // running sums for the 5 parameters: W00, W10, a0, a1, b0
    let mut s = [0.0; 5];
    let mut s2 = [0.0; 5];
    for seed in 0..CHAINS as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cd_step(x0.view(), &params, &config, &mut rng).unwrap();
        let v = [
            d.weights[[0, 0]],
            d.weights[[1, 0]],
            d.visible_bias[0],
            d.visible_bias[1],
            d.hidden_bias[0],
        ];
        for k in 0..5 {
            s[k] += v[k];
            s2[k] += v[k] * v[k];
        }
    }
    let exact = [gw[[0, 0]], gw[[1, 0]], ga[0], ga[1], gb[0]];
    for k in 0..5 {
        let (mean, se) = mean_se(s[k], s2[k], CHAINS);
        assert!(
            (mean - exact[k]).abs() <= SIGMAS * se,
            "parameter {k}: CD mean {mean} vs exact {} (se {se})",
            exact[k]
        );
        // the gradients here are well away from zero, so the sign is meaningful
        assert!(exact[k].abs() > 10.0 * se);
        assert_eq!(mean.signum(), exact[k].signum(), "parameter {k}");
    }
}
