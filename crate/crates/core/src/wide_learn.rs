//! Learning the covariance of the weight distribution behind a covariance
//! arc-cosine kernel.
//!
//! * [`inexact_fit`] estimates `Σ = WWᵀ/M` from trained RBM weights.
//! * [`exact_train`] runs the stochastic recursion on `Σ` directly: one
//!   [`sigma_gibbs_chain`] per instance followed by an [`exact_step`].
//! * [`deepwide_step`] / [`deepwide_train`] run the same recursion on kernel
//!   matrices, where `Σ` lives in the (possibly infinite) feature space of a
//!   previous layer and only inner products `K̃_Σ` are tracked.
//!
//! The recursion for a chain pair `(x0, xp)` with learning rate `η`:
//!
//! ```text
//! Σ' = Σ + η/2 (Σx0x0ᵀ - Σxpxpᵀ + x0x0ᵀΣ - xpxpᵀΣ)
//!        + η² (K(x0,x0) x0x0ᵀ + K(xp,xp) xpxpᵀ - K(x0,xp) x0xpᵀ - K(xp,x0) xpx0ᵀ)
//! ```
//!
//! where `K` is the degree-1 covariance arc-cosine kernel under `Σ`. The result
//! is the second moment of `w + η(x0 h(x0) - xp h(xp))` with `h(x) = (wᵀx)₊`,
//! so it stays positive semidefinite.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::arc_kernels::{self, compose_entry, Degree, GramMatrix, KernelDescriptor, NormRule, Prefactor};
use crate::container::ModelContainer;
use crate::data_io::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::rbm::{sigmoid, RbmParams};

/// Relative tolerance for the symmetry of a covariance matrix.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// `min eig ≥ -PSD_TOL · max diag`.
pub const PSD_TOL: f64 = 1e-8;
/// [`exact_train`] aborts once any `|Σ_ij|` exceeds this.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Inexact,
    Exact,
    Manual,
}

impl Provenance {
    fn code(self) -> f64 {
        match self {
            Provenance::Inexact => 0.0,
            Provenance::Exact => 1.0,
            Provenance::Manual => 2.0,
        }
    }

    fn from_code(v: f64) -> Result<Self> {
        match v {
            0.0 => Ok(Provenance::Inexact),
            1.0 => Ok(Provenance::Exact),
            2.0 => Ok(Provenance::Manual),
            other => Err(Error::Format(format!("unknown provenance code {other}"))),
        }
    }
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Provenance::Inexact => "inexact",
            Provenance::Exact => "exact",
            Provenance::Manual => "manual",
        })
    }
}

/// Symmetric positive semidefinite `Σ` (d×d) and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceModel {
    sigma: Array2<f64>,
    provenance: Provenance,
}

impl CovarianceModel {
    /// Validates symmetry and numerical PSD; the stored matrix is exactly symmetric.
    pub fn new(mut sigma: Array2<f64>, provenance: Provenance) -> Result<Self> {
        if sigma.nrows() != sigma.ncols() {
            return Err(Error::InvalidCovariance(format!(
                "covariance must be square, got {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCovariance("non-finite entry".into()));
        }
        let asym = linalg::relative_asymmetry(sigma.view());
        if asym > SYMMETRY_TOL {
            return Err(Error::InvalidCovariance(format!(
                "relative asymmetry {asym:.3e} exceeds {SYMMETRY_TOL:e}"
            )));
        }
        linalg::symmetrize(&mut sigma);
        let report = linalg::check_psd(sigma.view(), PSD_TOL)?;
        if !report.passed {
            return Err(Error::InvalidCovariance(format!(
                "minimum eigenvalue {:?} below -{PSD_TOL:e} x max diagonal {}",
                report.min_eigenvalue, report.max_diag
            )));
        }
        Ok(Self { sigma, provenance })
    }

    /// Skips validation; callers guarantee symmetry.
    pub(crate) fn new_unchecked(sigma: Array2<f64>, provenance: Provenance) -> Self {
        Self { sigma, provenance }
    }

    pub fn identity(d: usize) -> Self {
        Self::new_unchecked(Array2::eye(d), Provenance::Manual)
    }

    pub fn scaled_identity(d: usize, c: f64) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::InvalidCovariance(format!("scale {c} must be non-negative")));
        }
        Ok(Self::new_unchecked(Array2::eye(d) * c, Provenance::Manual))
    }

    pub fn sigma(&self) -> &Array2<f64> {
        &self.sigma
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.sigma
    }

    /// Smallest and largest eigenvalue.
    pub fn eigen_extrema(&self) -> Result<(f64, f64)> {
        let (values, _) = linalg::symmetric_eigen(self.sigma.view())?;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok((min, max))
    }

    pub fn to_container(&self) -> Result<ModelContainer> {
        let mut c = ModelContainer::new();
        c.push("sigma", self.sigma.clone())?;
        c.push_scalar("provenance", self.provenance.code())?;
        Ok(c)
    }

    /// Loads and re-validates; an asymmetric or indefinite matrix is a corrupt model.
    pub fn from_container(c: &ModelContainer) -> Result<Self> {
        let provenance = match c.get("provenance") {
            Some(_) => Provenance::from_code(c.scalar("provenance")?)?,
            None => Provenance::Manual,
        };
        Self::new(c.require("sigma")?.clone(), provenance)
            .map_err(|e| Error::corrupt(0, format!("stored covariance rejected: {e}")))
    }
}

/// Starting point of the exact recursion.
#[derive(Debug, Clone, PartialEq)]
pub enum SigmaInit {
    Identity,
    ScaledIdentity(f64),
    Manual(CovarianceModel),
}

impl SigmaInit {
    pub fn build(&self, d: usize) -> Result<CovarianceModel> {
        match self {
            SigmaInit::Identity => Ok(CovarianceModel::identity(d)),
            SigmaInit::ScaledIdentity(c) => CovarianceModel::scaled_identity(d, *c),
            SigmaInit::Manual(m) if m.dim() == d => Ok(m.clone()),
            SigmaInit::Manual(m) => Err(Error::Argument(format!(
                "initial covariance is {0}x{0}, data has dimension {d}",
                m.dim()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WideConfig {
    pub learning_rate: f64,
    pub gibbs_steps: usize,
    pub epochs: usize,
    pub seed: u64,
    pub init: SigmaInit,
}

impl Default for WideConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            gibbs_steps: 1,
            epochs: 1,
            seed: 0,
            init: SigmaInit::Identity,
        }
    }
}

impl WideConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("wide.eta", "must be positive"));
        }
        if self.gibbs_steps == 0 {
            return Err(Error::config("wide.gibbs_steps", "must be at least 1"));
        }
        Ok(())
    }
}

/// `Σ = WWᵀ / M` for an RBM with `M` hidden units.
pub fn inexact_fit(params: &RbmParams) -> Result<CovarianceModel> {
    let w = params.weights();
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("RBM weights must be finite".into()));
    }
    let m = w.ncols();
    if m == 0 {
        return Err(Error::Argument("weight matrix has no columns".into()));
    }
    let mut sigma = w.dot(&w.t()) / m as f64;
    linalg::symmetrize(&mut sigma);
    Ok(CovarianceModel::new_unchecked(sigma, Provenance::Inexact))
}

/// `Σx / 2`, the limit of `(1/M) W h` for rectified linear hidden units.
pub fn mean_field_limit(sigma: &CovarianceModel, x: ArrayView1<f64>) -> Result<Array1<f64>> {
    if x.len() != sigma.dim() {
        return Err(Error::Argument(format!(
            "vector of length {} against a {1}x{1} covariance",
            x.len(),
            sigma.dim()
        )));
    }
    Ok(sigma.sigma().dot(&x) * 0.5)
}

/// Visible states for the chain: `1` where the value is at least 0.5.
pub fn binarize(x: ArrayView1<f64>) -> Array1<f64> {
    x.mapv(|v| if v >= 0.5 { 1.0 } else { 0.0 })
}

/// `p` sweeps of `x_{q+1,i} ~ Bernoulli(σ(x_qᵀΣ_i / 2))`, all components
/// drawn from the previous state.
pub fn sigma_gibbs_chain(
    x0: ArrayView1<f64>,
    sigma: &CovarianceModel,
    steps: usize,
    rng: &mut impl Rng,
) -> Result<Array1<f64>> {
    if x0.len() != sigma.dim() {
        return Err(Error::Argument(format!(
            "state of length {} against a {1}x{1} covariance",
            x0.len(),
            sigma.dim()
        )));
    }
    let mut x = x0.to_owned();
    for _ in 0..steps {
        let field = sigma.sigma().dot(&x);
        x = field.mapv(|f| f64::from(u8::from(rng.random::<f64>() < sigmoid(0.5 * f))));
    }
    Ok(x)
}

/// One exact update of `Σ` for the chain pair `(x0, xp)`; the result is validated.
pub fn exact_step(
    sigma: &CovarianceModel,
    x0: ArrayView1<f64>,
    xp: ArrayView1<f64>,
    learning_rate: f64,
) -> Result<CovarianceModel> {
    let next = exact_step_unchecked(sigma, x0, xp, learning_rate)?;
    CovarianceModel::new(next.into_inner(), Provenance::Exact)
}

/// [`exact_step`] without the eigenvalue check on the result.
pub fn exact_step_unchecked(
    sigma: &CovarianceModel,
    x0: ArrayView1<f64>,
    xp: ArrayView1<f64>,
    learning_rate: f64,
) -> Result<CovarianceModel> {
    let d = sigma.dim();
    if x0.len() != d || xp.len() != d {
        return Err(Error::Argument(format!(
            "chain pair of lengths ({}, {}) against a {d}x{d} covariance",
            x0.len(),
            xp.len()
        )));
    }
    let s = sigma.sigma();
    let u0 = s.dot(&x0);
    let up = s.dot(&xp);
    let k = |a: ArrayView1<f64>, b: ArrayView1<f64>, ua: &Array1<f64>, ub: &Array1<f64>| {
        arc_kernels::from_inner_products(a.dot(ua), b.dot(ub), b.dot(ua), Degree::One, Prefactor::TwoPi)
    };
    let k00 = k(x0, x0, &u0, &u0);
    let kpp = k(xp, xp, &up, &up);
    let k0p = k(x0, xp, &u0, &up);
    let kp0 = k(xp, x0, &up, &u0);

    let half = 0.5 * learning_rate;
    let sq = learning_rate * learning_rate;
    let mut next = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            let first = u0[i] * x0[j] - up[i] * xp[j] + x0[i] * u0[j] - xp[i] * up[j];
            let second = k00 * x0[i] * x0[j] + kpp * xp[i] * xp[j] - k0p * x0[i] * xp[j] - kp0 * xp[i] * x0[j];
            next[[i, j]] = s[[i, j]] + half * first + sq * second;
        }
    }
    linalg::symmetrize(&mut next);
    Ok(CovarianceModel::new_unchecked(next, Provenance::Exact))
}

/// Binarized `(x0, xp)` chain pairs in the order they were used.
pub type ChainTrace = Vec<(Array1<f64>, Array1<f64>)>;

/// Exact wide learning over a dataset; see [`exact_train_traced`].
pub fn exact_train(ds: &LabeledDataset, config: &WideConfig) -> Result<CovarianceModel> {
    exact_train_traced(ds, config).map(|(model, _)| model)
}

/// Runs the Σ recursion and also returns every binarized `(x0, xp)` pair used,
/// in order. Each epoch visits the instances in a seeded shuffled order.
pub fn exact_train_traced(ds: &LabeledDataset, config: &WideConfig) -> Result<(CovarianceModel, ChainTrace)> {
    config.validate()?;
    let mut sigma = config.init.build(ds.dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs * ds.len());
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let x0 = binarize(ds.instances().row(i));
            let xp = sigma_gibbs_chain(x0.view(), &sigma, config.gibbs_steps, &mut rng)?;
            sigma = exact_step_unchecked(&sigma, x0.view(), xp.view(), config.learning_rate)?;
            let peak = sigma.sigma().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if peak.is_nan() || peak > DIVERGENCE_LIMIT {
                return Err(Error::Divergence(format!(
                    "max |Σ| = {peak:e} in epoch {} exceeds {DIVERGENCE_LIMIT:e}",
                    epoch + 1
                )));
            }
            trace.push((x0, xp));
        }
        log::info!("exact wide learning: epoch {} done", epoch + 1);
    }
    let sigma = CovarianceModel::new(sigma.into_inner(), Provenance::Exact)?;
    Ok((sigma, trace))
}

/// Everything [`deepwide_step`] needs to know about a chain pair: its columns
/// in the base kernel `K̃` and in the current learned kernel `K̃_Σ`, and the
/// learned kernel's values on the pair itself.
#[derive(Debug, Clone, PartialEq)]
pub struct PairColumns {
    pub base_x0: Array1<f64>,
    pub base_xp: Array1<f64>,
    pub learned_x0: Array1<f64>,
    pub learned_xp: Array1<f64>,
    pub learned_x0x0: f64,
    pub learned_xpxp: f64,
    pub learned_x0xp: f64,
}

impl PairColumns {
    /// Columns for a pair of points that both belong to the kernel matrices.
    pub fn from_indices(base: ArrayView2<f64>, learned: ArrayView2<f64>, x0: usize, xp: usize) -> Result<Self> {
        let n = base.nrows();
        if x0 >= n || xp >= n {
            return Err(Error::Argument(format!("pair ({x0}, {xp}) outside {n} points")));
        }
        Ok(Self {
            base_x0: base.column(x0).to_owned(),
            base_xp: base.column(xp).to_owned(),
            learned_x0: learned.column(x0).to_owned(),
            learned_xp: learned.column(xp).to_owned(),
            learned_x0x0: learned[[x0, x0]],
            learned_xpxp: learned[[xp, xp]],
            learned_x0xp: learned[[x0, xp]],
        })
    }
}

/// One kernel-space update of the whole learned matrix `K̃_Σ`.
///
/// Mirrors [`exact_step`] pre- and post-multiplied by the previous layer's
/// features; the kernel scalars `K_Σ(·,·)` are composed from `K̃_Σ` entries.
pub fn deepwide_step(
    base: ArrayView2<f64>,
    learned: ArrayView2<f64>,
    pair: &PairColumns,
    learning_rate: f64,
) -> Result<Array2<f64>> {
    let n = base.nrows();
    if base.ncols() != n || learned.dim() != (n, n) {
        return Err(Error::Argument(format!(
            "base {:?} and learned {:?} kernels must be square of the same order",
            base.dim(),
            learned.dim()
        )));
    }
    let cols = [&pair.base_x0, &pair.base_xp, &pair.learned_x0, &pair.learned_xp];
    if cols.iter().any(|c| c.len() != n) {
        return Err(Error::Argument(format!("kernel columns must have length {n}")));
    }
    let compose = |xy: f64, xx: f64, yy: f64| compose_entry(xy, xx, yy, Degree::One, NormRule::Norm, Prefactor::TwoPi);
    let (l00, lpp, l0p) = (pair.learned_x0x0, pair.learned_xpxp, pair.learned_x0xp);
    let k00 = compose(l00, l00, l00);
    let kpp = compose(lpp, lpp, lpp);
    let k0p = compose(l0p, l00, lpp);
    let kp0 = compose(l0p, lpp, l00);

    let (b0, bp, s0, sp) = (&pair.base_x0, &pair.base_xp, &pair.learned_x0, &pair.learned_xp);
    let half = 0.5 * learning_rate;
    let sq = learning_rate * learning_rate;
    let mut next = Array2::<f64>::zeros((n, n));
    for a in 0..n {
        for b in 0..n {
            let first = s0[a] * b0[b] - sp[a] * bp[b] + b0[a] * s0[b] - bp[a] * sp[b];
            let second = k00 * b0[a] * b0[b] + kpp * bp[a] * bp[b] - k0p * b0[a] * bp[b] - kp0 * bp[a] * b0[b];
            next[[a, b]] = learned[[a, b]] + half * first + sq * second;
        }
    }
    linalg::symmetrize(&mut next);
    Ok(next)
}

/// Folds [`deepwide_step`] over pairs of point indices and returns the final
/// learned `K̃_Σ` (before composition).
pub fn deepwide_learn(
    base: ArrayView2<f64>,
    pairs: impl IntoIterator<Item = (usize, usize)>,
    learning_rate: f64,
    init: Array2<f64>,
) -> Result<Array2<f64>> {
    let n = base.nrows();
    if base.ncols() != n || init.dim() != (n, n) {
        return Err(Error::Argument(format!(
            "base {:?} and initial {:?} kernels must be square of the same order",
            base.dim(),
            init.dim()
        )));
    }
    if linalg::relative_asymmetry(init.view()) > SYMMETRY_TOL {
        return Err(Error::InvalidKernel("initial learned kernel is not symmetric".into()));
    }
    let mut learned = init;
    for (x0, xp) in pairs {
        let cols = PairColumns::from_indices(base, learned.view(), x0, xp)?;
        learned = deepwide_step(base, learned.view(), &cols, learning_rate)?;
    }
    Ok(learned)
}

/// Kernel-space wide learning: learn `K̃_Σ`, then compose one degree-1
/// arc-cosine layer on it to get the next layer's kernel matrix.
pub fn deepwide_train(
    base: ArrayView2<f64>,
    pairs: impl IntoIterator<Item = (usize, usize)>,
    learning_rate: f64,
    init: Array2<f64>,
) -> Result<GramMatrix> {
    let learned = deepwide_learn(base, pairs, learning_rate, init)?;
    arc_kernels::compose_layer(&GramMatrix {
        values: learned,
        descriptor: KernelDescriptor::identity(Degree::One),
    })
}

/// `K̃ / d`: the learned kernel of `Σ⁰ = I/d` for a linear base kernel.
pub fn deepwide_default_init(base: ArrayView2<f64>, d: usize) -> Array2<f64> {
    base.to_owned() / d.max(1) as f64
}

/// Random SPD matrix `AAᵀ / N` with standard normal `A` (N×N).
pub fn random_spd(n: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Array2::from_shape_simple_fn((n, n), || StandardNormal.sample(&mut rng));
    let mut m: Array2<f64> = a.dot(&a.t()) / n.max(1) as f64;
    linalg::symmetrize(&mut m);
    m
}

/// Augments a dataset with the chain end points of a trace so that every
/// pair can be addressed by index: returns the stacked points and index pairs.
pub fn pairs_as_points(
    data: ArrayView2<f64>,
    trace: &[(Array1<f64>, Array1<f64>)],
) -> (Array2<f64>, Vec<(usize, usize)>) {
    let n = data.nrows();
    let d = data.ncols();
    let mut points = Array2::<f64>::zeros((n + 2 * trace.len(), d));
    points.slice_mut(ndarray::s![..n, ..]).assign(&data);
    let mut pairs = Vec::with_capacity(trace.len());
    for (k, (x0, xp)) in trace.iter().enumerate() {
        let (i0, ip) = (n + 2 * k, n + 2 * k + 1);
        points.row_mut(i0).assign(x0);
        points.row_mut(ip).assign(xp);
        pairs.push((i0, ip));
    }
    (points, pairs)
}
