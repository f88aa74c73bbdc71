//! Dense symmetric linear algebra on `ndarray` matrices.
//!
//! Factorizations are delegated to `faer`; everything else is plain ndarray.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Matrices up to this order get an exact eigenvalue check; larger ones are
/// certified PSD through a shifted Cholesky factorization.
pub const EIGEN_CHECK_LIMIT: usize = 1500;

fn to_faer(a: ArrayView2<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn square(a: ArrayView2<f64>, what: &str) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(Error::Argument(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(a.nrows())
}

/// Cholesky factor of a symmetric positive definite matrix, reusable for
/// several right-hand sides.
pub struct Cholesky {
    llt: faer::linalg::solvers::Llt<f64>,
    n: usize,
}

impl Cholesky {
    pub fn factor(a: ArrayView2<f64>) -> Result<Self> {
        let n = square(a, "system matrix")?;
        let llt = to_faer(a)
            .llt(Side::Lower)
            .map_err(|e| Error::Numerical(format!("Cholesky factorization failed: {e:?}")))?;
        Ok(Self { llt, n })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: ArrayView1<f64>) -> Result<Array1<f64>> {
        if b.len() != self.n {
            return Err(Error::Argument(format!(
                "right-hand side has length {}, expected {}",
                b.len(),
                self.n
            )));
        }
        let rhs = Mat::from_fn(self.n, 1, |i, _| b[i]);
        let x = self.llt.solve(&rhs);
        Ok(Array1::from_shape_fn(self.n, |i| x[(i, 0)]))
    }
}

/// Solves `a x = b` for symmetric positive definite `a`.
pub fn cholesky_solve(a: ArrayView2<f64>, b: ArrayView1<f64>) -> Result<Array1<f64>> {
    Cholesky::factor(a)?.solve(b)
}

/// Returns true when the Cholesky factorization of `a` succeeds.
pub fn is_positive_definite(a: ArrayView2<f64>) -> bool {
    a.nrows() == a.ncols() && to_faer(a).llt(Side::Lower).is_ok()
}

/// Eigenvalues (ascending) and eigenvectors (columns) of a symmetric matrix.
pub fn symmetric_eigen(a: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = square(a, "matrix")?;
    let evd = to_faer(a)
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let s = evd.S();
    let u = evd.U();
    let values = Array1::from_shape_fn(n, |i| s[i]);
    let vectors = Array2::from_shape_fn((n, n), |(i, j)| u[(i, j)]);
    Ok((values, vectors))
}

pub fn min_eigenvalue(a: ArrayView2<f64>) -> Result<f64> {
    square(a, "matrix")?;
    if a.is_empty() {
        return Ok(0.0);
    }
    let values = to_faer(a)
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigenvalue computation failed: {e:?}")))?;
    Ok(values.into_iter().fold(f64::INFINITY, f64::min))
}

/// Principal square root of a symmetric PSD matrix; negative eigenvalues
/// from rounding are clamped to zero.
pub fn psd_sqrt(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (values, vectors) = symmetric_eigen(a)?;
    let roots = values.mapv(|v| v.max(0.0).sqrt());
    let scaled = &vectors * &roots.view().insert_axis(ndarray::Axis(0));
    Ok(scaled.dot(&vectors.t()))
}

pub fn max_diag(a: ArrayView2<f64>) -> f64 {
    a.diag().iter().copied().fold(0.0, f64::max)
}

/// Largest |a_ij - a_ji| relative to the largest |a_ij|.
pub fn relative_asymmetry(a: ArrayView2<f64>) -> f64 {
    let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let n = a.nrows().min(a.ncols());
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[[i, j]] - a[[j, i]]).abs());
        }
    }
    worst / scale
}

/// Replaces `a` by `(a + a^T) / 2`.
pub fn symmetrize(a: &mut Array2<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = m;
            a[[j, i]] = m;
        }
    }
}

/// Outcome of a numerical positive-semidefiniteness check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdReport {
    /// Exact minimum eigenvalue, when the matrix was small enough to compute it.
    pub min_eigenvalue: Option<f64>,
    pub max_diag: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl PsdReport {
    /// `min_eigenvalue / max_diag` when both are available.
    pub fn ratio(&self) -> Option<f64> {
        match self.min_eigenvalue {
            Some(m) if self.max_diag > 0.0 => Some(m / self.max_diag),
            _ => None,
        }
    }
}

/// Checks `min eig(a) >= -rel_tol * max diag(a)`.
///
/// Small matrices are checked through their eigenvalues. Above
/// [`EIGEN_CHECK_LIMIT`] the check factorizes `a + rel_tol * max_diag * I`:
/// the factorization exists exactly when every eigenvalue exceeds the bound.
pub fn check_psd(a: ArrayView2<f64>, rel_tol: f64) -> Result<PsdReport> {
    let n = square(a, "matrix")?;
    let max_diag = max_diag(a);
    let shift = rel_tol * max_diag;
    if n <= EIGEN_CHECK_LIMIT {
        let min = min_eigenvalue(a)?;
        return Ok(PsdReport {
            min_eigenvalue: Some(min),
            max_diag,
            tolerance: rel_tol,
            passed: min >= -shift,
        });
    }
    let mut shifted = to_faer(a);
    for i in 0..n {
        shifted[(i, i)] += shift;
    }
    Ok(PsdReport {
        min_eigenvalue: None,
        max_diag,
        tolerance: rel_tol,
        passed: shifted.llt(Side::Lower).is_ok(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn cholesky_solve_diagonal() {
        let a = array![[2.0, 0.0], [0.0, 4.0]];
        let x = cholesky_solve(a.view(), array![1.0, 1.0].view()).unwrap();
        assert_abs_diff_eq!(x[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(x[1], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(matches!(
            cholesky_solve(a.view(), array![1.0, 0.0].view()),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn sqrt_squares_back() {
        let a = array![[4.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 2.0]];
        let r = psd_sqrt(a.view()).unwrap();
        let back = r.dot(&r);
        for (x, y) in back.iter().zip(a.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn psd_check_both_routes() {
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        let report = check_psd(a.view(), 1e-8).unwrap();
        assert!(report.passed);
        assert_abs_diff_eq!(report.min_eigenvalue.unwrap(), 0.0, epsilon = 1e-14);

        let n = EIGEN_CHECK_LIMIT + 1;
        let mut big = Array2::<f64>::eye(n);
        assert!(check_psd(big.view(), 1e-8).unwrap().passed);
        big[[0, 0]] = -1.0;
        assert!(!check_psd(big.view(), 1e-8).unwrap().passed);
    }

    #[test]
    fn symmetrize_averages() {
        let mut a = array![[1.0, 2.0], [4.0, 1.0]];
        assert_abs_diff_eq!(relative_asymmetry(a.view()), 0.5);
        symmetrize(&mut a);
        assert_eq!(a, array![[1.0, 3.0], [3.0, 1.0]]);
    }
}
