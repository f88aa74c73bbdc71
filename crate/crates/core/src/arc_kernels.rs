//! Arc-cosine kernels of degree 0, 1 and 2, their covariance form, and
//! composition of identity-covariance layers on top of a Gram matrix.
//!
//! For inputs with norms `‖x‖`, `‖y‖` and angle `θ`,
//! `K_n(x, y) = c ‖x‖ⁿ ‖y‖ⁿ J_n(θ)` with `c = 1/(2π)` by default. With this
//! prefactor `K_n(x, y) = E[H(wᵀx) H(wᵀy) (wᵀx)ⁿ (wᵀy)ⁿ]` for `w ~ N(0, I)`.
//!
//! The covariance kernel replaces `w ~ N(0, I)` by `w ~ N(0, Σ)`, which equals
//! `K_n(Σ^{1/2} x, Σ^{1/2} y)`. It is evaluated from the bilinear forms
//! `xᵀΣx`, `yᵀΣy`, `xᵀΣy`, never forming a matrix square root.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};
use crate::wide_learn::CovarianceModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Degree {
    Zero,
    One,
    Two,
}

impl Degree {
    pub fn as_u32(self) -> u32 {
        match self {
            Degree::Zero => 0,
            Degree::One => 1,
            Degree::Two => 2,
        }
    }
}

impl TryFrom<u32> for Degree {
    type Error = Error;

    fn try_from(n: u32) -> Result<Self> {
        match n {
            0 => Ok(Degree::Zero),
            1 => Ok(Degree::One),
            2 => Ok(Degree::Two),
            other => Err(Error::UnsupportedDegree(other)),
        }
    }
}

/// Global scale in front of `‖x‖ⁿ‖y‖ⁿJ_n(θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Prefactor {
    /// `1/(2π)`: the kernel is the plain expectation over `w`.
    #[default]
    TwoPi,
    /// `1/π`, the normalization common in the arc-cosine kernel literature.
    Pi,
}

impl Prefactor {
    pub fn value(self) -> f64 {
        match self {
            Prefactor::TwoPi => 1.0 / (2.0 * PI),
            Prefactor::Pi => 1.0 / PI,
        }
    }
}

/// How a composed layer turns the previous layer's self-similarity into a magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormRule {
    /// `m(x) = sqrt(K(x, x))`, the feature-space norm. Composing a linear
    /// kernel this way reproduces the closed form exactly.
    #[default]
    Norm,
    /// `m(x) = K(x, x)`, the self-similarity used as is.
    Literal,
}

/// `J_n(θ)` for `n ∈ {0, 1, 2}`; `θ` is clamped to `[0, π]`.
pub fn j_n(theta: f64, n: u32) -> Result<f64> {
    Ok(j(PI - theta.clamp(0.0, PI), Degree::try_from(n)?))
}

/// Below this supplement angle the power series replaces the closed form,
/// which loses digits to cancellation as `θ → π`.
const SERIES_CUTOFF: f64 = 0.5;

/// `J_n` as a function of the supplement `φ = π − θ`. Antiparallel inputs
/// (`φ = 0`) give exactly 0 for every degree.
#[inline]
fn j(phi: f64, degree: Degree) -> f64 {
    let phi = phi.clamp(0.0, PI);
    if phi < SERIES_CUTOFF && degree != Degree::Zero {
        return j_series(phi, degree);
    }
    let (s, c) = phi.sin_cos();
    match degree {
        Degree::Zero => phi,
        Degree::One => s - phi * c,
        Degree::Two => phi * (1.0 + 2.0 * c * c) - 3.0 * s * c,
    }
}

// J1 = Σ_{k≥1} (−1)^{k+1} 2k φ^{2k+1} / (2k+1)!
// J2 = Σ_{k≥2} (−1)^k (k−1) u^{2k+1} / (2k+1)!,  u = 2φ
fn j_series(phi: f64, degree: Degree) -> f64 {
    let (u, first, weight): (f64, u32, fn(u32) -> f64) = match degree {
        Degree::Two => (2.0 * phi, 2, |k| f64::from(k - 1)),
        _ => (phi, 1, |k| f64::from(2 * k)),
    };
    let u2 = u * u;
    // u^{2k+1}/(2k+1)! for k = first
    let mut power = u;
    for m in 2..=2 * first + 1 {
        power *= u / f64::from(m);
    }
    let mut sum = 0.0;
    let mut k = first;
    loop {
        let term = weight(k) * power;
        sum += if (k - first) % 2 == 0 { term } else { -term };
        if term <= f64::EPSILON * 1e-3 * sum.abs() || k > first + 30 {
            break;
        }
        power *= u2 / f64::from((2 * k + 2) * (2 * k + 3));
        k += 1;
    }
    sum
}

/// Kernel value from the squared magnitudes `xx`, `yy` and the inner product `xy`.
///
/// Zero magnitudes give 0 for `n ≥ 1`; for `n = 0` the angle is taken as `π/2`.
#[inline]
pub fn from_inner_products(xx: f64, yy: f64, xy: f64, degree: Degree, prefactor: Prefactor) -> f64 {
    let (xx, yy) = (xx.max(0.0), yy.max(0.0));
    // sqrt(xx·yy) rounds to exactly xx when x = y, so a vector's angle with
    // itself is exactly 0; sqrt(xx)·sqrt(yy) can be off by an ulp
    let d = (xx * yy).sqrt();
    let d = if d.is_finite() && (d > 0.0 || xx == 0.0 || yy == 0.0) {
        d
    } else {
        xx.sqrt() * yy.sqrt()
    };
    with_magnitudes(d, xy, degree, prefactor)
}

/// Kernel value from the magnitude product `d = m(x)·m(y)` and the inner product.
#[inline]
fn with_magnitudes(d: f64, xy: f64, degree: Degree, prefactor: Prefactor) -> f64 {
    let c = prefactor.value();
    if d == 0.0 {
        return match degree {
            Degree::Zero => c * (PI - PI / 2.0),
            _ => 0.0,
        };
    }
    let phi = (-xy / d).clamp(-1.0, 1.0).acos();
    let scale = match degree {
        Degree::Zero => 1.0,
        Degree::One => d,
        Degree::Two => d * d,
    };
    c * scale * j(phi, degree)
}

/// One composed layer evaluated on previous-layer values `k(x,y)`, `k(x,x)`, `k(y,y)`.
#[inline]
pub fn compose_entry(kxy: f64, kxx: f64, kyy: f64, degree: Degree, rule: NormRule, prefactor: Prefactor) -> f64 {
    match rule {
        NormRule::Norm => from_inner_products(kxx, kyy, kxy, degree, prefactor),
        NormRule::Literal => {
            let norms = (kxx.max(0.0) * kyy.max(0.0)).sqrt();
            if norms == 0.0 {
                return with_magnitudes(0.0, kxy, degree, prefactor);
            }
            let phi = (-kxy / norms).clamp(-1.0, 1.0).acos();
            let m = kxx * kyy;
            let scale = match degree {
                Degree::Zero => 1.0,
                Degree::One => m,
                Degree::Two => m * m,
            };
            prefactor.value() * scale * j(phi, degree)
        }
    }
}

fn check_dims(x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Argument(format!(
            "vectors have lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(())
}

/// `K_n(x, y)` with the default `1/(2π)` prefactor.
pub fn arc_cosine(x: ArrayView1<f64>, y: ArrayView1<f64>, degree: Degree) -> Result<f64> {
    check_dims(x, y)?;
    Ok(from_inner_products(
        x.dot(&x),
        y.dot(&y),
        x.dot(&y),
        degree,
        Prefactor::TwoPi,
    ))
}

/// Covariance arc-cosine kernel `K_{Σ,n}(x, y)`.
pub fn covariance_arc_cosine(
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
    sigma: &CovarianceModel,
    degree: Degree,
) -> Result<f64> {
    covariance_arc_cosine_with(x, y, sigma, degree, Prefactor::TwoPi)
}

pub fn covariance_arc_cosine_with(
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
    sigma: &CovarianceModel,
    degree: Degree,
    prefactor: Prefactor,
) -> Result<f64> {
    check_dims(x, y)?;
    if x.len() != sigma.dim() {
        return Err(Error::Argument(format!(
            "vectors of length {} against a {1}x{1} covariance",
            x.len(),
            sigma.dim()
        )));
    }
    let (xx, yy, xy) = bilinear_forms(x, y, sigma.sigma().view());
    Ok(from_inner_products(xx, yy, xy, degree, prefactor))
}

/// `(xᵀΣx, yᵀΣy, xᵀΣy)`.
pub fn bilinear_forms(x: ArrayView1<f64>, y: ArrayView1<f64>, sigma: ArrayView2<f64>) -> (f64, f64, f64) {
    let sx = sigma.dot(&x);
    let sy = sigma.dot(&y);
    (x.dot(&sx), y.dot(&sy), 0.5 * (y.dot(&sx) + x.dot(&sy)))
}

/// What a Gram matrix was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelDescriptor {
    pub degree: Degree,
    /// `None` means the identity covariance.
    pub covariance: Option<CovarianceModel>,
    /// Number of identity-covariance layers composed on top of the base kernel.
    pub composition_depth: usize,
    pub prefactor: Prefactor,
    pub norm_rule: NormRule,
}

impl KernelDescriptor {
    pub fn identity(degree: Degree) -> Self {
        Self {
            degree,
            covariance: None,
            composition_depth: 0,
            prefactor: Prefactor::TwoPi,
            norm_rule: NormRule::Norm,
        }
    }

    pub fn with_covariance(degree: Degree, covariance: CovarianceModel) -> Self {
        Self {
            covariance: Some(covariance),
            ..Self::identity(degree)
        }
    }

    pub fn layers(mut self, depth: usize) -> Self {
        self.composition_depth = depth;
        self
    }

    /// Evaluates the full descriptor, composed layers included, on one pair.
    pub fn evaluate(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
        check_dims(x, y)?;
        let (xx, yy, xy) = match &self.covariance {
            Some(c) => {
                if c.dim() != x.len() {
                    return Err(Error::Argument(format!(
                        "vectors of length {} against a {1}x{1} covariance",
                        x.len(),
                        c.dim()
                    )));
                }
                bilinear_forms(x, y, c.sigma().view())
            }
            None => (x.dot(&x), y.dot(&y), x.dot(&y)),
        };
        let mut k = (xx, yy, xy);
        for _ in 0..=self.composition_depth {
            k = self.layer((k.0, k.1, k.2));
        }
        Ok(k.2)
    }

    fn layer(&self, (xx, yy, xy): (f64, f64, f64)) -> (f64, f64, f64) {
        (self.apply(xx, xx, xx), self.apply(yy, yy, yy), self.apply(xy, xx, yy))
    }

    /// Base layer always uses feature-space norms; composed layers follow `norm_rule`.
    fn apply(&self, kxy: f64, kxx: f64, kyy: f64) -> f64 {
        compose_entry(kxy, kxx, kyy, self.degree, NormRule::Norm, self.prefactor)
    }

    fn apply_composed(&self, kxy: f64, kxx: f64, kyy: f64) -> f64 {
        compose_entry(kxy, kxx, kyy, self.degree, self.norm_rule, self.prefactor)
    }

    fn check_input_dim(&self, d: usize) -> Result<()> {
        match &self.covariance {
            Some(c) if c.dim() != d => Err(Error::Argument(format!(
                "instances of dimension {d} against a {0}x{0} covariance",
                c.dim()
            ))),
            _ => Ok(()),
        }
    }
}

/// Symmetric N×N kernel matrix with the descriptor that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub values: Array2<f64>,
    pub descriptor: KernelDescriptor,
}

impl GramMatrix {
    pub fn order(&self) -> usize {
        self.values.nrows()
    }

    pub fn diag(&self) -> Array1<f64> {
        self.values.diag().to_owned()
    }
}

/// Linear (or Σ-weighted) inner products between the rows of `a` and `b`,
/// plus the squared magnitudes of each row.
fn base_inner_products(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    sigma: Option<&CovarianceModel>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let quad = |m: ArrayView2<f64>, weighted: &Array2<f64>| {
        Zip::from(weighted.rows()).and(m.rows()).map_collect(|w, x| w.dot(&x))
    };
    match sigma {
        Some(c) => {
            let aw = a.dot(c.sigma());
            let bw = b.dot(c.sigma());
            let inner = aw.dot(&b.t());
            let da = quad(a, &aw);
            let db = quad(b, &bw);
            (inner, da, db)
        }
        None => {
            let inner = a.dot(&b.t());
            let da = a.rows().into_iter().map(|r| r.dot(&r)).collect();
            let db = b.rows().into_iter().map(|r| r.dot(&r)).collect();
            (inner, da, db)
        }
    }
}

fn transform_block(
    values: &mut Array2<f64>,
    row_diag: &Array1<f64>,
    col_diag: &Array1<f64>,
    f: impl Fn(f64, f64, f64) -> f64 + Sync,
) {
    Zip::from(values.rows_mut()).and(row_diag).par_for_each(|mut row, &dr| {
        for (v, &dc) in row.iter_mut().zip(col_diag.iter()) {
            *v = f(*v, dr, dc);
        }
    });
}

fn mirror_upper(values: &mut Array2<f64>) {
    let n = values.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            values[[j, i]] = values[[i, j]];
        }
    }
}

/// Gram matrix of `desc` over the rows of `x`.
pub fn gram(x: ArrayView2<f64>, desc: &KernelDescriptor) -> Result<GramMatrix> {
    desc.check_input_dim(x.ncols())?;
    let (mut values, diag, _) = base_inner_products(x, x, desc.covariance.as_ref());
    for i in 0..values.nrows() {
        values[[i, i]] = diag[i];
    }
    mirror_upper(&mut values);
    transform_block(&mut values, &diag, &diag, |v, a, b| desc.apply(v, a, b));
    let mut d = diag.mapv(|v| desc.apply(v, v, v));
    for _ in 0..desc.composition_depth {
        transform_block(&mut values, &d, &d, |v, a, b| desc.apply_composed(v, a, b));
        d.mapv_inplace(|v| desc.apply_composed(v, v, v));
    }
    Ok(GramMatrix {
        values,
        descriptor: desc.clone(),
    })
}

/// Kernel values between test rows and training rows (N_test×N_train).
pub fn cross_gram(x_test: ArrayView2<f64>, x_train: ArrayView2<f64>, desc: &KernelDescriptor) -> Result<Array2<f64>> {
    if x_test.ncols() != x_train.ncols() {
        return Err(Error::Argument(format!(
            "test dimension {} differs from training dimension {}",
            x_test.ncols(),
            x_train.ncols()
        )));
    }
    desc.check_input_dim(x_train.ncols())?;
    let (mut values, mut dt, mut dr) = base_inner_products(x_test, x_train, desc.covariance.as_ref());
    transform_block(&mut values, &dt, &dr, |v, a, b| desc.apply(v, a, b));
    dt.mapv_inplace(|v| desc.apply(v, v, v));
    dr.mapv_inplace(|v| desc.apply(v, v, v));
    for _ in 0..desc.composition_depth {
        transform_block(&mut values, &dt, &dr, |v, a, b| desc.apply_composed(v, a, b));
        dt.mapv_inplace(|v| desc.apply_composed(v, v, v));
        dr.mapv_inplace(|v| desc.apply_composed(v, v, v));
    }
    Ok(values)
}

/// One degree-1 arc-cosine layer on top of a Gram matrix, using its
/// descriptor's prefactor and norm rule.
pub fn compose_layer(k: &GramMatrix) -> Result<GramMatrix> {
    let d = &k.descriptor;
    let values = compose_block(
        k.values.view(),
        k.values.diag(),
        k.values.diag(),
        Degree::One,
        d.norm_rule,
        d.prefactor,
    )?;
    let mut descriptor = d.clone();
    descriptor.composition_depth += 1;
    Ok(GramMatrix { values, descriptor })
}

/// Composition on a rectangular block whose row and column self-similarities
/// are supplied separately.
pub fn compose_block(
    block: ArrayView2<f64>,
    row_diag: ArrayView1<f64>,
    col_diag: ArrayView1<f64>,
    degree: Degree,
    rule: NormRule,
    prefactor: Prefactor,
) -> Result<Array2<f64>> {
    if block.nrows() != row_diag.len() || block.ncols() != col_diag.len() {
        return Err(Error::Argument(format!(
            "{}x{} block with diagonals of length {} and {}",
            block.nrows(),
            block.ncols(),
            row_diag.len(),
            col_diag.len()
        )));
    }
    if let Some(bad) = row_diag.iter().chain(col_diag.iter()).find(|v| v.is_nan() || **v < 0.0) {
        return Err(Error::InvalidKernel(format!("negative self-similarity {bad}")));
    }
    let mut values = block.to_owned();
    let (rd, cd) = (row_diag.to_owned(), col_diag.to_owned());
    transform_block(&mut values, &rd, &cd, |v, a, b| {
        compose_entry(v, a, b, degree, rule, prefactor)
    });
    Ok(values)
}

/// Row-wise self-similarities of a descriptor: the diagonal of its Gram matrix
/// without building the matrix.
pub fn self_similarities(x: ArrayView2<f64>, desc: &KernelDescriptor) -> Result<Array1<f64>> {
    desc.check_input_dim(x.ncols())?;
    Ok(x.axis_iter(Axis(0))
        .map(|row| desc.evaluate(row, row).expect("dimensions checked"))
        .collect())
}
