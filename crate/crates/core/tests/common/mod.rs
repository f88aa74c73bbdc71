//! Independent oracles for integration and acceptance tests. Nothing here
//! calls into the library's linear algebra.
#![allow(dead_code)]

use std::path::PathBuf;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn mnist_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

pub fn normal_vec(n: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || StandardNormal.sample(rng))
}

/// `AAᵀ/d + ridge·I` with standard normal `A`, exactly symmetric.
pub fn random_spd(d: usize, ridge: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let a: Array2<f64> = Array2::from_shape_simple_fn((d, d), || StandardNormal.sample(rng));
    let mut s = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        for j in 0..=i {
            let v: f64 = (0..d).map(|k| a[[i, k]] * a[[j, k]]).sum::<f64>() / d as f64;
            s[[i, j]] = v;
            s[[j, i]] = v;
        }
        s[[i, i]] += ridge;
    }
    s
}

pub fn random_binary(d: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    Array1::from_shape_simple_fn(d, || f64::from(u8::from(rng.random::<bool>())))
}

/// Lower Cholesky factor by the textbook recurrence.
pub fn cholesky(a: ArrayView2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[[i, k]] * l[[j, k]]).sum();
            if i == j {
                l[[i, i]] = (a[[i, i]] - s).sqrt();
            } else {
                l[[i, j]] = (a[[i, j]] - s) / l[[j, j]];
            }
        }
    }
    l
}

/// Cyclic Jacobi eigenvalue iteration: (eigenvalues, eigenvectors as columns).
pub fn jacobi_eigen(a: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut m = a.to_owned();
    let mut v = Array2::<f64>::eye(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[[i, j]] * m[[i, j]])
            .sum();
        let scale: f64 = m.iter().map(|x| x * x).sum();
        if off <= 1e-30 * scale.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[[p, q]] == 0.0 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * m[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[[k, p]], m[[k, q]]);
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[[p, k]], m[[q, k]]);
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    (m.diag().to_owned(), v)
}

pub fn jacobi_min_eigenvalue(a: ArrayView2<f64>) -> f64 {
    jacobi_eigen(a).0.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Symmetric square root through the Jacobi eigendecomposition.
pub fn sqrtm(a: ArrayView2<f64>) -> Array2<f64> {
    let (vals, vecs) = jacobi_eigen(a);
    let n = vals.len();
    Array2::from_shape_fn((n, n), |(i, j)| {
        (0..n)
            .map(|k| vecs[[i, k]] * vals[k].max(0.0).sqrt() * vecs[[j, k]])
            .sum()
    })
}

/// Sample mean and standard error.
pub fn mean_se(sum: f64, sum_sq: f64, m: usize) -> (f64, f64) {
    let mf = m as f64;
    let mean = sum / mf;
    let var = (sum_sq / mf - mean * mean).max(0.0) * mf / (mf - 1.0);
    (mean, (var / mf).sqrt())
}

/// Monte-Carlo estimate of `E[H(wᵀx)H(wᵀy)(wᵀx)ⁿ(wᵀy)ⁿ]` for `w = L z`,
/// `z` standard normal: returns (mean, standard error).
pub fn mc_kernel(
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
    chol: ArrayView2<f64>,
    n: i32,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, f64) {
    let d = x.len();
    let (mut s, mut s2) = (0.0, 0.0);
    let mut z = vec![0.0; d];
    for _ in 0..samples {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(rng);
        }
        let (mut wx, mut wy) = (0.0, 0.0);
        for i in 0..d {
            let wi: f64 = (0..=i).map(|k| chol[[i, k]] * z[k]).sum();
            wx += wi * x[i];
            wy += wi * y[i];
        }
        if wx > 0.0 && wy > 0.0 {
            let f = (wx * wy).powi(n);
            s += f;
            s2 += f * f;
        }
    }
    mean_se(s, s2, samples)
}
