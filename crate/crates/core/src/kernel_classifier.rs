//! Regularized least-squares kernel classifier with a one-vs-one reduction,
//! working on precomputed Gram and cross-Gram matrices.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::container::ModelContainer;
use crate::data_io::as_index;
use crate::error::{Error, Result};
use crate::linalg::Cholesky;

pub const DEFAULT_LAMBDA: f64 = 1e-4;
pub const DEFAULT_LAMBDA_GRID: [f64; 6] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1];
/// Required `‖(K+λI)α − y‖ / ‖y‖`.
pub const RESIDUAL_TOL: f64 = 1e-8;
const JITTER: f64 = 1e-10;
const REFINEMENT_STEPS: usize = 3;

/// One binary problem of the ensemble. `rows` index the training set the
/// ensemble was fitted on; `alpha[i]` belongs to `rows[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairModel {
    pub class_a: usize,
    pub class_b: usize,
    pub alpha: Array1<f64>,
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlsEnsemble {
    pairs: Vec<PairModel>,
    lambda: f64,
    num_classes: usize,
    train_size: usize,
}

fn residual_norm(a: ArrayView2<f64>, x: &Array1<f64>, y: ArrayView1<f64>) -> (Array1<f64>, f64) {
    let r = &y - &a.dot(x);
    let norm = r.dot(&r).sqrt();
    (r, norm)
}

/// Solves `(K + λI) α = y` by Cholesky, retrying once with extra diagonal
/// jitter of `1e-10 · trace(K)/N`, then refining until the relative residual
/// is below [`RESIDUAL_TOL`].
pub fn fit_pair(k: ArrayView2<f64>, y: ArrayView1<f64>, lambda: f64) -> Result<Array1<f64>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Argument(format!(
            "ridge parameter must be positive, got {lambda}"
        )));
    }
    let n = k.nrows();
    if k.ncols() != n || y.len() != n {
        return Err(Error::Argument(format!(
            "kernel {:?} and labels of length {} do not match",
            k.dim(),
            y.len()
        )));
    }
    if n == 0 {
        return Ok(Array1::zeros(0));
    }
    let mut a = k.to_owned();
    a.diag_mut().mapv_inplace(|v| v + lambda);
    let chol = match Cholesky::factor(a.view()) {
        Ok(c) => c,
        Err(_) => {
            let jitter = JITTER * k.diag().sum().abs() / n as f64;
            log::warn!("kernel system not positive definite; retrying with jitter {jitter:e}");
            let mut shifted = a.clone();
            shifted.diag_mut().mapv_inplace(|v| v + jitter);
            Cholesky::factor(shifted.view())?
        }
    };
    let y_norm = y.dot(&y).sqrt();
    let mut alpha = chol.solve(y)?;
    let (mut r, mut res) = residual_norm(a.view(), &alpha, y);
    for _ in 0..REFINEMENT_STEPS {
        if res <= RESIDUAL_TOL * y_norm {
            break;
        }
        alpha += &chol.solve(r.view())?;
        (r, res) = residual_norm(a.view(), &alpha, y);
    }
    if alpha.iter().any(|v| !v.is_finite()) || res > RESIDUAL_TOL * y_norm {
        return Err(Error::Numerical(format!(
            "RLS residual {res:.3e} exceeds {RESIDUAL_TOL:e} x |y| = {:.3e}",
            RESIDUAL_TOL * y_norm
        )));
    }
    Ok(alpha)
}

/// `Σ α_i k_i`.
pub fn decision(k_row: ArrayView1<f64>, alpha: ArrayView1<f64>) -> Result<f64> {
    if k_row.len() != alpha.len() {
        return Err(Error::Argument(format!(
            "kernel row of length {} against {} coefficients",
            k_row.len(),
            alpha.len()
        )));
    }
    Ok(k_row.dot(&alpha))
}

/// Winner of a binary decision: positive picks `class_a`, negative `class_b`,
/// exactly zero the lower class id.
pub fn pair_winner(f: f64, class_a: usize, class_b: usize) -> usize {
    if f > 0.0 {
        class_a
    } else if f < 0.0 {
        class_b
    } else {
        class_a.min(class_b)
    }
}

/// Majority vote over pair decisions; ties go to the class with the larger
/// summed `|f|` over the pairs it won, then to the lowest id.
pub fn vote(pairs: &[PairModel], decisions: ArrayView1<f64>, num_classes: usize) -> usize {
    let mut votes = vec![0usize; num_classes];
    let mut margin = vec![0.0f64; num_classes];
    for (p, &f) in pairs.iter().zip(decisions.iter()) {
        let w = pair_winner(f, p.class_a, p.class_b);
        votes[w] += 1;
        margin[w] += f.abs();
    }
    let mut best = 0;
    for c in 1..num_classes {
        if votes[c] > votes[best] || (votes[c] == votes[best] && margin[c] > margin[best]) {
            best = c;
        }
    }
    best
}

/// One [`fit_pair`] per unordered class pair `a < b`, on the rows of those two
/// classes with targets `+1` for `a` and `-1` for `b`.
pub fn fit_ovo(k: ArrayView2<f64>, labels: &[usize], num_classes: usize, lambda: f64) -> Result<RlsEnsemble> {
    let n = labels.len();
    if k.dim() != (n, n) {
        return Err(Error::Argument(format!("Gram {:?} for {n} labels", k.dim())));
    }
    if num_classes < 2 {
        return Err(Error::Argument("need at least two classes".into()));
    }
    let mut members = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::Argument(format!("label {l} outside {num_classes} classes")));
        }
        members[l].push(i);
    }
    if let Some(c) = members.iter().position(Vec::is_empty) {
        return Err(Error::Argument(format!("class {c} has no training instances")));
    }
    let jobs: Vec<(usize, usize)> = (0..num_classes)
        .flat_map(|a| (a + 1..num_classes).map(move |b| (a, b)))
        .collect();
    let pairs = jobs
        .par_iter()
        .map(|&(a, b)| {
            let rows: Vec<usize> = merge_sorted(&members[a], &members[b]);
            let sub = k.select(Axis(0), &rows).select(Axis(1), &rows);
            let y = Array1::from_iter(rows.iter().map(|&r| if labels[r] == a { 1.0 } else { -1.0 }));
            let alpha = fit_pair(sub.view(), y.view(), lambda).map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("pair ({a}, {b}): {m}")),
                other => other,
            })?;
            Ok(PairModel {
                class_a: a,
                class_b: b,
                alpha,
                rows,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RlsEnsemble {
        pairs,
        lambda,
        num_classes,
        train_size: n,
    })
}

fn merge_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out.sort_unstable();
    out
}

impl RlsEnsemble {
    pub fn new(pairs: Vec<PairModel>, lambda: f64, num_classes: usize, train_size: usize) -> Result<Self> {
        if num_classes < 2 || pairs.len() != num_classes * (num_classes - 1) / 2 {
            return Err(Error::Argument(format!(
                "{} pairs do not cover {num_classes} classes",
                pairs.len()
            )));
        }
        for p in &pairs {
            if p.class_a >= p.class_b || p.class_b >= num_classes {
                return Err(Error::Argument(format!(
                    "bad class pair ({}, {})",
                    p.class_a, p.class_b
                )));
            }
            if p.alpha.len() != p.rows.len() || p.rows.iter().any(|&r| r >= train_size) {
                return Err(Error::Argument(format!(
                    "pair ({}, {}) coefficients do not match its rows",
                    p.class_a, p.class_b
                )));
            }
            if p.alpha.iter().any(|v| !v.is_finite()) {
                return Err(Error::Argument(format!(
                    "pair ({}, {}) has non-finite coefficients",
                    p.class_a, p.class_b
                )));
            }
        }
        Ok(Self {
            pairs,
            lambda,
            num_classes,
            train_size,
        })
    }

    pub fn pairs(&self) -> &[PairModel] {
        &self.pairs
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn train_size(&self) -> usize {
        self.train_size
    }

    /// Pair decisions for every test row (tests × pairs).
    pub fn decisions(&self, cross: ArrayView2<f64>) -> Result<Array2<f64>> {
        if cross.ncols() != self.train_size {
            return Err(Error::Argument(format!(
                "cross-Gram has {} columns, ensemble was trained on {} rows",
                cross.ncols(),
                self.train_size
            )));
        }
        let mut out = Array2::zeros((cross.nrows(), self.pairs.len()));
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(cross.axis_iter(Axis(0)))
            .for_each(|(mut row, k)| {
                for (slot, p) in row.iter_mut().zip(&self.pairs) {
                    *slot = p.rows.iter().zip(p.alpha.iter()).map(|(&r, &a)| k[r] * a).sum();
                }
            });
        Ok(out)
    }

    pub fn predict(&self, cross: ArrayView2<f64>) -> Result<Vec<usize>> {
        let d = self.decisions(cross)?;
        Ok(d.axis_iter(Axis(0))
            .map(|row| vote(&self.pairs, row, self.num_classes))
            .collect())
    }

    pub fn to_container(&self) -> Result<ModelContainer> {
        let mut c = ModelContainer::new();
        c.push_scalar("lambda", self.lambda)?;
        c.push_scalar("num_classes", self.num_classes as f64)?;
        c.push_scalar("train_size", self.train_size as f64)?;
        for p in &self.pairs {
            let tag = format!("pair.{}.{}", p.class_a, p.class_b);
            c.push_vector(format!("{tag}.alpha"), &p.alpha)?;
            let rows = Array1::from_iter(p.rows.iter().map(|&r| r as f64));
            c.push_vector(format!("{tag}.rows"), &rows)?;
        }
        Ok(c)
    }

    pub fn from_container(c: &ModelContainer) -> Result<Self> {
        let lambda = c.scalar("lambda")?;
        let num_classes = as_index(c.scalar("num_classes")?, "class count")?;
        let train_size = as_index(c.scalar("train_size")?, "training size")?;
        let mut pairs = Vec::new();
        for a in 0..num_classes {
            for b in a + 1..num_classes {
                let tag = format!("pair.{a}.{b}");
                let alpha = c.vector(&format!("{tag}.alpha"))?;
                let rows = c
                    .vector(&format!("{tag}.rows"))?
                    .iter()
                    .map(|&v| as_index(v, "row index"))
                    .collect::<Result<Vec<_>>>()?;
                pairs.push(PairModel {
                    class_a: a,
                    class_b: b,
                    alpha,
                    rows,
                });
            }
        }
        Self::new(pairs, lambda, num_classes, train_size).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Shorthand for [`RlsEnsemble::predict`].
pub fn predict(ensemble: &RlsEnsemble, cross: ArrayView2<f64>) -> Result<Vec<usize>> {
    ensemble.predict(cross)
}

/// Fraction of positions where the two label vectors differ.
pub fn error_rate(predicted: &[usize], actual: &[usize]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Argument("error rate of an empty prediction set".into()));
    }
    let wrong = predicted.iter().zip(actual).filter(|(p, a)| p != a).count();
    Ok(wrong as f64 / predicted.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arc_kernels::{gram, Degree, KernelDescriptor};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let a = Array2::from_shape_simple_fn((n, n), || rng.random::<f64>() - 0.5);
        a.dot(&a.t()) + Array2::<f64>::eye(n) * 0.1
    }

    /// Gaussian elimination with partial pivoting.
    fn brute_force_solve(mut a: Array2<f64>, mut b: Array1<f64>) -> Array1<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))
                .unwrap();
            for j in 0..n {
                a.swap([col, j], [piv, j]);
            }
            b.swap(col, piv);
            for row in col + 1..n {
                let f = a[[row, col]] / a[[col, col]];
                for j in col..n {
                    a[[row, j]] -= f * a[[col, j]];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = Array1::zeros(n);
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| a[[i, j]] * x[j]).sum();
            x[i] = (b[i] - s) / a[[i, i]];
        }
        x
    }

    #[test]
    fn fit_pair_examples() {
        let alpha = fit_pair(Array2::eye(2).view(), array![1.0, -1.0].view(), 1.0).unwrap();
        assert_abs_diff_eq!(alpha[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(alpha[1], -0.5, epsilon = 1e-15);
        let y = array![0.3, -2.0, 5.0];
        let alpha = fit_pair(Array2::zeros((3, 3)).view(), y.view(), 1.0).unwrap();
        for (a, b) in alpha.iter().zip(y.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        assert!(fit_pair(Array2::eye(2).view(), array![1.0, -1.0].view(), 0.0).is_err());
    }

    #[test]
    fn fit_pair_matches_elimination() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = random_spd(10, &mut rng);
        let y = Array1::from_shape_simple_fn(10, || rng.random::<f64>() - 0.5);
        let alpha = fit_pair(k.view(), y.view(), 0.1).unwrap();
        let oracle = brute_force_solve(&k + &(Array2::<f64>::eye(10) * 0.1), y.clone());
        for (a, b) in alpha.iter().zip(oracle.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn fit_pair_rejects_indefinite() {
        let k = array![[1.0, 3.0], [3.0, 1.0]];
        assert!(matches!(
            fit_pair(k.view(), array![1.0, -1.0].view(), 1e-4),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn decision_examples() {
        assert_eq!(decision(array![1.0, 2.0].view(), array![0.0, 0.0].view()).unwrap(), 0.0);
        assert_eq!(pair_winner(0.0, 1, 4), 1);
        assert_eq!(
            decision(array![0.0, 1.0, 0.0].view(), array![3.0, -7.5, 2.0].view()).unwrap(),
            -7.5
        );
        assert!(decision(array![1.0].view(), array![1.0, 2.0].view()).is_err());
    }

    #[test]
    fn decision_interpolates_training_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let k = random_spd(8, &mut rng);
        let y = array![1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0];
        let alpha = fit_pair(k.view(), y.view(), 1e-8).unwrap();
        for i in 0..8 {
            let f = decision(k.row(i), alpha.view()).unwrap();
            assert_eq!(f.signum(), y[i]);
        }
    }

    #[test]
    fn ovo_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = random_spd(6, &mut rng);
        let two = fit_ovo(k.view(), &[0, 1, 0, 1, 1, 0], 2, 0.1).unwrap();
        assert_eq!(two.pairs().len(), 1);
        let y = array![1.0, -1.0, 1.0, -1.0, -1.0, 1.0];
        assert_eq!(two.pairs()[0].alpha, fit_pair(k.view(), y.view(), 0.1).unwrap());
        let three = fit_ovo(k.view(), &[0, 1, 2, 0, 1, 2], 3, 0.1).unwrap();
        assert_eq!(three.pairs().len(), 3);
        assert!(matches!(
            fit_ovo(k.view(), &[0, 0, 2, 0, 2, 2], 3, 0.1),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn separable_toy_has_zero_training_error() {
        let mut x = Vec::new();
        let mut labels = Vec::new();
        let centers = [(3.0, 0.0), (0.0, 3.0), (-3.0, -3.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (c, &(cx, cy)) in centers.iter().enumerate() {
            for _ in 0..10 {
                x.push(cx + rng.random::<f64>() - 0.5);
                x.push(cy + rng.random::<f64>() - 0.5);
                labels.push(c);
            }
        }
        let x = Array2::from_shape_vec((30, 2), x).unwrap();
        let k = gram(x.view(), &KernelDescriptor::identity(Degree::One)).unwrap();
        let ens = fit_ovo(k.values.view(), &labels, 3, 1e-4).unwrap();
        let pred = ens.predict(k.values.view()).unwrap();
        assert_eq!(error_rate(&pred, &labels).unwrap(), 0.0);
    }

    fn counting_oracle(pairs: &[PairModel], decisions: &[f64], c: usize) -> usize {
        let mut votes = vec![0; c];
        let mut margin = vec![0.0; c];
        for (p, &f) in pairs.iter().zip(decisions) {
            let w = if f >= 0.0 { p.class_a } else { p.class_b };
            votes[w] += 1;
            margin[w] += f.abs();
        }
        let top = *votes.iter().max().unwrap();
        let tied: Vec<usize> = (0..c).filter(|&i| votes[i] == top).collect();
        let best_margin = tied.iter().map(|&i| margin[i]).fold(f64::NEG_INFINITY, f64::max);
        *tied.iter().find(|&&i| margin[i] == best_margin).unwrap()
    }

    #[test]
    fn predict_matches_vote_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let c = rng.random_range(2..6);
            let train = 12;
            let mut pairs = Vec::new();
            for a in 0..c {
                for b in a + 1..c {
                    let rows: Vec<usize> = (0..train).filter(|_| rng.random::<bool>()).collect();
                    let alpha = Array1::from_shape_simple_fn(rows.len(), || rng.random::<f64>() - 0.5);
                    pairs.push(PairModel {
                        class_a: a,
                        class_b: b,
                        alpha,
                        rows,
                    });
                }
            }
            let ens = RlsEnsemble::new(pairs, 0.1, c, train).unwrap();
            let cross = Array2::from_shape_simple_fn((7, train), || rng.random::<f64>());
            let pred = ens.predict(cross.view()).unwrap();
            for (t, &p) in pred.iter().enumerate() {
                let ds: Vec<f64> = ens
                    .pairs()
                    .iter()
                    .map(|pm| {
                        pm.rows
                            .iter()
                            .zip(pm.alpha.iter())
                            .map(|(&r, &a)| cross[[t, r]] * a)
                            .sum()
                    })
                    .collect();
                assert_eq!(p, counting_oracle(ens.pairs(), &ds, c));
            }
        }
    }

    #[test]
    fn unanimous_pairs_and_two_class_sign() {
        let pairs = vec![
            PairModel {
                class_a: 0,
                class_b: 1,
                alpha: array![1.0],
                rows: vec![0],
            },
            PairModel {
                class_a: 0,
                class_b: 2,
                alpha: array![1.0],
                rows: vec![0],
            },
            PairModel {
                class_a: 1,
                class_b: 2,
                alpha: array![1.0],
                rows: vec![0],
            },
        ];
        let ens = RlsEnsemble::new(pairs, 1.0, 3, 1).unwrap();
        assert_eq!(ens.predict(array![[2.0]].view()).unwrap(), vec![0]);
        let two = RlsEnsemble::new(
            vec![PairModel {
                class_a: 0,
                class_b: 1,
                alpha: array![1.0],
                rows: vec![0],
            }],
            1.0,
            2,
            1,
        )
        .unwrap();
        assert_eq!(two.predict(array![[-0.5], [0.5]].view()).unwrap(), vec![1, 0]);
        assert!(two.predict(array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn vote_tie_breaks() {
        let pairs = vec![
            PairModel {
                class_a: 0,
                class_b: 1,
                alpha: array![1.0],
                rows: vec![0],
            },
            PairModel {
                class_a: 0,
                class_b: 2,
                alpha: array![1.0],
                rows: vec![0],
            },
            PairModel {
                class_a: 1,
                class_b: 2,
                alpha: array![1.0],
                rows: vec![0],
            },
        ];
        // 0 beats 1, 2 beats 0, 1 beats 2: one vote each, margins 0.1, 0.5, 0.3
        assert_eq!(vote(&pairs, array![0.1, -0.5, 0.3].view(), 3), 2);
        assert_eq!(vote(&pairs, array![0.2, -0.2, 0.2].view(), 3), 0);
    }

    #[test]
    fn error_rate_examples() {
        assert_eq!(error_rate(&[1, 2, 3], &[1, 2, 3]).unwrap(), 0.0);
        assert_eq!(error_rate(&[0, 0], &[1, 1]).unwrap(), 1.0);
        let actual: Vec<usize> = (0..100).map(|i| i % 3).collect();
        let mut pred = actual.clone();
        for p in pred.iter_mut().take(5) {
            *p += 1;
        }
        assert_eq!(error_rate(&pred, &actual).unwrap(), 0.05);
        assert!(error_rate(&[], &[]).is_err());
    }

    #[test]
    fn scale_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let k = random_spd(9, &mut rng);
        let labels = [0, 1, 2, 0, 1, 2, 0, 1, 2];
        let cross = Array2::from_shape_simple_fn((5, 9), || rng.random::<f64>());
        let base = fit_ovo(k.view(), &labels, 3, 0.05).unwrap();
        let c = 7.5;
        let scaled = fit_ovo((&k * c).view(), &labels, 3, 0.05 * c).unwrap();
        let d0 = base.decisions(cross.view()).unwrap();
        let d1 = scaled.decisions((&cross * c).view()).unwrap();
        for (a, b) in d0.iter().zip(d1.iter()) {
            assert_eq!(a.signum(), b.signum());
        }
    }

    #[test]
    fn predict_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = random_spd(9, &mut rng);
        let ens = fit_ovo(k.view(), &[0, 1, 2, 0, 1, 2, 0, 1, 2], 3, 0.05).unwrap();
        let cross = Array2::from_shape_simple_fn((6, 9), || rng.random::<f64>());
        let perm = [3, 0, 5, 1, 4, 2];
        let permuted = cross.select(Axis(0), &perm);
        let p0 = ens.predict(cross.view()).unwrap();
        let p1 = ens.predict(permuted.view()).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            assert_eq!(p1[i], p0[src]);
        }
    }

    #[test]
    fn ensemble_container_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let k = random_spd(9, &mut rng);
        let ens = fit_ovo(k.view(), &[0, 1, 2, 0, 1, 2, 0, 1, 2], 3, 0.05).unwrap();
        let back = RlsEnsemble::from_container(&ens.to_container().unwrap()).unwrap();
        assert_eq!(back, ens);
    }
}
