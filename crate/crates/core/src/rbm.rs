//! Restricted Boltzmann machine trained by contrastive divergence.
//!
//! Visible units are Bernoulli with success probability `σ(W_i h + a_i)`.
//! Hidden units are either stochastic binary (`σ(xᵀw_j + b_j)`) or rectified
//! linear, sampled from `N(max(0, xᵀw_j + b_j), 1)`.
//!
//! Energy: `E(x, h) = -(xᵀWh + aᵀx + bᵀh)`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::container::ModelContainer;
use crate::data_io::LabeledDataset;
use crate::error::{Error, Result};

/// Standard deviation of the initial weights.
pub const INIT_WEIGHT_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitType {
    Binary,
    Relu,
}

impl UnitType {
    fn code(self) -> f64 {
        match self {
            UnitType::Binary => 0.0,
            UnitType::Relu => 1.0,
        }
    }

    fn from_code(v: f64) -> Result<Self> {
        match v {
            0.0 => Ok(UnitType::Binary),
            1.0 => Ok(UnitType::Relu),
            other => Err(Error::Format(format!("unknown hidden unit code {other}"))),
        }
    }
}

impl std::str::FromStr for UnitType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(UnitType::Binary),
            "relu" => Ok(UnitType::Relu),
            other => Err(Error::Argument(format!("unknown unit type `{other}`"))),
        }
    }
}

impl std::fmt::Display for UnitType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            UnitType::Binary => "binary",
            UnitType::Relu => "relu",
        })
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Weights `W` (d×K, column `j` is hidden unit `j`), visible bias `a`, hidden bias `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct RbmParams {
    weights: Array2<f64>,
    visible_bias: Array1<f64>,
    hidden_bias: Array1<f64>,
    unit_type: UnitType,
}

impl RbmParams {
    pub fn new(
        weights: Array2<f64>,
        visible_bias: Array1<f64>,
        hidden_bias: Array1<f64>,
        unit_type: UnitType,
    ) -> Result<Self> {
        let (d, k) = weights.dim();
        if k == 0 {
            return Err(Error::Argument("an RBM needs at least one hidden unit".into()));
        }
        if visible_bias.len() != d || hidden_bias.len() != k {
            return Err(Error::Argument(format!(
                "bias lengths ({}, {}) do not match a {d}x{k} weight matrix",
                visible_bias.len(),
                hidden_bias.len()
            )));
        }
        let finite = weights
            .iter()
            .chain(&visible_bias)
            .chain(&hidden_bias)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Argument("RBM parameters must be finite".into()));
        }
        Ok(Self {
            weights,
            visible_bias,
            hidden_bias,
            unit_type,
        })
    }

    /// Weights drawn from `N(0, 0.01²)`, zero biases.
    pub fn random(visible: usize, hidden: usize, unit_type: UnitType, rng: &mut impl Rng) -> Result<Self> {
        let normal = Normal::new(0.0, INIT_WEIGHT_STD).expect("valid std");
        let weights = Array2::from_shape_simple_fn((visible, hidden), || normal.sample(rng));
        Self::new(weights, Array1::zeros(visible), Array1::zeros(hidden), unit_type)
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn visible_bias(&self) -> &Array1<f64> {
        &self.visible_bias
    }

    pub fn hidden_bias(&self) -> &Array1<f64> {
        &self.hidden_bias
    }

    pub fn unit_type(&self) -> UnitType {
        self.unit_type
    }

    pub fn visible_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weights.ncols()
    }

    fn check_visible(&self, len: usize) -> Result<()> {
        if len != self.visible_dim() {
            return Err(Error::Argument(format!(
                "visible vector has length {len}, expected {}",
                self.visible_dim()
            )));
        }
        Ok(())
    }

    fn check_hidden(&self, len: usize) -> Result<()> {
        if len != self.hidden_dim() {
            return Err(Error::Argument(format!(
                "hidden vector has length {len}, expected {}",
                self.hidden_dim()
            )));
        }
        Ok(())
    }

    /// Conditional mean of the hidden units for each row of `x` (N×d → N×K).
    pub fn hidden_means(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_visible(x.ncols())?;
        let mut pre = x.dot(&self.weights);
        pre += &self.hidden_bias;
        Ok(self.activate(pre))
    }

    fn activate(&self, mut pre: Array2<f64>) -> Array2<f64> {
        match self.unit_type {
            UnitType::Binary => pre.mapv_inplace(sigmoid),
            UnitType::Relu => pre.mapv_inplace(|v| v.max(0.0)),
        }
        pre
    }

    fn visible_probs(&self, h: ArrayView2<f64>) -> Array2<f64> {
        let mut pre = h.dot(&self.weights.t());
        pre += &self.visible_bias;
        pre.mapv_inplace(sigmoid);
        pre
    }

    fn sample_hidden_from_means(&self, means: &mut Array2<f64>, rng: &mut impl Rng) {
        match self.unit_type {
            UnitType::Binary => means.mapv_inplace(|p| f64::from(u8::from(rng.random::<f64>() < p))),
            UnitType::Relu => means.mapv_inplace(|m| {
                let z: f64 = StandardNormal.sample(rng);
                m + z
            }),
        }
    }

    pub fn to_container(&self) -> Result<ModelContainer> {
        let mut c = ModelContainer::new();
        c.push("W", self.weights.clone())?;
        c.push_vector("a", &self.visible_bias)?;
        c.push_vector("b", &self.hidden_bias)?;
        c.push_scalar("unit_type", self.unit_type.code())?;
        Ok(c)
    }

    pub fn from_container(c: &ModelContainer) -> Result<Self> {
        let unit_type = match c.get("unit_type") {
            Some(_) => UnitType::from_code(c.scalar("unit_type")?)?,
            None => UnitType::Binary,
        };
        Self::new(c.require("W")?.clone(), c.vector("a")?, c.vector("b")?, unit_type)
    }
}

/// Contrastive-divergence hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub cd_steps: usize,
    pub seed: u64,
    pub freeze_biases: bool,
    pub unit_type: UnitType,
}

impl Default for CdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.5,
            epochs: 20,
            batch_size: 100,
            cd_steps: 1,
            seed: 0,
            freeze_biases: false,
            unit_type: UnitType::Binary,
        }
    }
}

impl CdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("rbm.eta", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("rbm.momentum", "must lie in [0, 1)"));
        }
        if self.cd_steps == 0 {
            return Err(Error::config("rbm.cd_steps", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("rbm.batch_size", "must be at least 1"));
        }
        Ok(())
    }
}

/// `-(xᵀWh + aᵀx + bᵀh)`.
pub fn energy(x: ArrayView1<f64>, h: ArrayView1<f64>, params: &RbmParams) -> Result<f64> {
    params.check_visible(x.len())?;
    params.check_hidden(h.len())?;
    let interaction = x.dot(&params.weights.dot(&h));
    Ok(-(interaction + params.visible_bias.dot(&x) + params.hidden_bias.dot(&h)))
}

/// Conditional hidden means: `σ(xᵀw_j + b_j)` for binary units,
/// `max(0, xᵀw_j + b_j)` for rectified linear ones.
pub fn hidden_mean(x: ArrayView1<f64>, params: &RbmParams) -> Result<Array1<f64>> {
    let row = x.insert_axis(Axis(0));
    Ok(params.hidden_means(row)?.remove_axis(Axis(0)))
}

pub fn sample_hidden(x: ArrayView1<f64>, params: &RbmParams, rng: &mut impl Rng) -> Result<Array1<f64>> {
    let mut means = params.hidden_means(x.insert_axis(Axis(0)))?;
    params.sample_hidden_from_means(&mut means, rng);
    Ok(means.remove_axis(Axis(0)))
}

pub fn sample_visible(h: ArrayView1<f64>, params: &RbmParams, rng: &mut impl Rng) -> Result<Array1<f64>> {
    params.check_hidden(h.len())?;
    let probs = params.visible_probs(h.insert_axis(Axis(0))).remove_axis(Axis(0));
    Ok(probs.mapv(|p| f64::from(u8::from(rng.random::<f64>() < p))))
}

/// Parameter deltas of one contrastive-divergence step plus the chain end point.
#[derive(Debug, Clone, PartialEq)]
pub struct CdDelta {
    pub weights: Array2<f64>,
    pub visible_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
    pub xp: Array1<f64>,
    pub hp: Array1<f64>,
}

/// One CD-p step from `x0`.
///
/// The data term uses the conditional hidden mean at `x0`; the model term uses
/// the sampled `h_p` after `p` Gibbs sweeps. Deltas are returned, not applied.
pub fn cd_step(x0: ArrayView1<f64>, params: &RbmParams, config: &CdConfig, rng: &mut impl Rng) -> Result<CdDelta> {
    if config.cd_steps == 0 {
        return Err(Error::config("rbm.cd_steps", "must be at least 1"));
    }
    let h0 = hidden_mean(x0, params)?;
    let mut h = sample_hidden(x0, params, rng)?;
    let mut x = x0.to_owned();
    for _ in 0..config.cd_steps {
        x = sample_visible(h.view(), params, rng)?;
        h = sample_hidden(x.view(), params, rng)?;
    }
    Ok(cd_delta_from(x0, h0.view(), x, h, config.learning_rate))
}

/// `η(x0 h0ᵀ - xp hpᵀ)` and the matching bias deltas.
pub fn cd_delta_from(
    x0: ArrayView1<f64>,
    h0: ArrayView1<f64>,
    xp: Array1<f64>,
    hp: Array1<f64>,
    learning_rate: f64,
) -> CdDelta {
    let outer = |u: ArrayView1<f64>, v: ArrayView1<f64>| u.insert_axis(Axis(1)).dot(&v.insert_axis(Axis(0)));
    let weights = (outer(x0, h0) - outer(xp.view(), hp.view())) * learning_rate;
    let visible_bias = (&x0 - &xp) * learning_rate;
    let hidden_bias = (&h0 - &hp) * learning_rate;
    CdDelta {
        weights,
        visible_bias,
        hidden_bias,
        xp,
        hp,
    }
}

/// Statistics reported after every training epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean squared distance between each instance and its one-step
    /// reconstruction probabilities, averaged over the epoch.
    pub reconstruction_error: f64,
}

pub fn train(ds: &LabeledDataset, hidden: usize, config: &CdConfig) -> Result<RbmParams> {
    train_with(ds, hidden, config, |_, _| {})
}

/// Mini-batch CD-p with momentum; `observer` runs after each epoch.
///
/// With `freeze_biases` the biases stay exactly zero.
pub fn train_with(
    ds: &LabeledDataset,
    hidden: usize,
    config: &CdConfig,
    mut observer: impl FnMut(&EpochStats, &RbmParams),
) -> Result<RbmParams> {
    config.validate()?;
    if ds.is_empty() {
        return Err(Error::Argument("cannot train an RBM on an empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = RbmParams::random(ds.dim(), hidden, config.unit_type, &mut rng)?;
    let data = ds.instances();
    let n = ds.len();
    let mut vel_w = Array2::<f64>::zeros(params.weights.raw_dim());
    let mut vel_a = Array1::<f64>::zeros(params.visible_dim());
    let mut vel_b = Array1::<f64>::zeros(hidden);
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sq_err = 0.0;
        for batch in order.chunks(config.batch_size) {
            let x0 = data.select(Axis(0), batch);
            let scale = config.learning_rate / batch.len() as f64;

            let h0 = params.hidden_means(x0.view())?;
            let mut h = h0.clone();
            params.sample_hidden_from_means(&mut h, &mut rng);
            let mut x = x0.clone();
            for step in 0..config.cd_steps {
                let probs = params.visible_probs(h.view());
                if step == 0 {
                    sq_err += (&x0 - &probs).mapv(|v| v * v).sum();
                }
                x = probs.mapv(|p| f64::from(u8::from(rng.random::<f64>() < p)));
                h = params.hidden_means(x.view())?;
                params.sample_hidden_from_means(&mut h, &mut rng);
            }

            let grad_w = x0.t().dot(&h0) - x.t().dot(&h);
            Zip::from(&mut vel_w)
                .and(&grad_w)
                .for_each(|v, &g| *v = config.momentum * *v + scale * g);
            params.weights += &vel_w;
            if !config.freeze_biases {
                let grad_a = (&x0 - &x).sum_axis(Axis(0));
                let grad_b = (&h0 - &h).sum_axis(Axis(0));
                Zip::from(&mut vel_a)
                    .and(&grad_a)
                    .for_each(|v, &g| *v = config.momentum * *v + scale * g);
                Zip::from(&mut vel_b)
                    .and(&grad_b)
                    .for_each(|v, &g| *v = config.momentum * *v + scale * g);
                params.visible_bias += &vel_a;
                params.hidden_bias += &vel_b;
            }
        }
        if params.weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!(
                "RBM weights became non-finite in epoch {epoch}"
            )));
        }
        let stats = EpochStats {
            epoch,
            reconstruction_error: sq_err / n as f64,
        };
        log::info!(
            "rbm epoch {epoch}: reconstruction error {:.4}",
            stats.reconstruction_error
        );
        observer(&stats, &params);
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn params(w: Array2<f64>, a: Array1<f64>, b: Array1<f64>) -> RbmParams {
        RbmParams::new(w, a, b, UnitType::Binary).unwrap()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn energy_trivial_cases() {
        let p = params(array![[0.3], [-0.2]], array![0.5, 0.1], array![0.7]);
        assert_eq!(energy(array![0.0, 0.0].view(), array![0.0].view(), &p).unwrap(), 0.0);
        let q = params(Array2::zeros((2, 1)), array![1.0, 0.0], array![0.0]);
        assert_eq!(energy(array![1.0, 1.0].view(), array![0.4].view(), &q).unwrap(), -1.0);
        assert!(energy(array![1.0].view(), array![0.0].view(), &p).is_err());
    }

    #[test]
    fn energy_matches_per_edge_sum() {
        let mut r = rng(7);
        let (d, k) = (4, 3);
        let w = Array2::from_shape_simple_fn((d, k), || r.random::<f64>() - 0.5);
        let a = Array1::from_shape_simple_fn(d, || r.random::<f64>() - 0.5);
        let b = Array1::from_shape_simple_fn(k, || r.random::<f64>() - 0.5);
        let x = Array1::from_shape_simple_fn(d, || r.random::<f64>());
        let h = Array1::from_shape_simple_fn(k, || r.random::<f64>());
        let p = params(w.clone(), a.clone(), b.clone());
        // interaction over every edge, each bias counted once
        let mut oracle = 0.0;
        for i in 0..d {
            for j in 0..k {
                oracle -= w[[i, j]] * x[i] * h[j];
            }
            oracle -= a[i] * x[i];
        }
        for j in 0..k {
            oracle -= b[j] * h[j];
        }
        assert_abs_diff_eq!(energy(x.view(), h.view(), &p).unwrap(), oracle, epsilon = 1e-12);
        let doubled = params(&w * 2.0, &a * 2.0, &b * 2.0);
        assert_abs_diff_eq!(
            energy(x.view(), h.view(), &doubled).unwrap(),
            2.0 * oracle,
            epsilon = 1e-12
        );
    }

    #[test]
    fn hidden_mean_examples() {
        let p = params(Array2::zeros((3, 2)), Array1::zeros(3), Array1::zeros(2));
        assert_eq!(hidden_mean(array![0.2, 0.9, 1.0].view(), &p).unwrap(), array![0.5, 0.5]);
        let q = params(array![[2.0]], array![0.0], array![-1.0]);
        assert_abs_diff_eq!(
            hidden_mean(array![1.0].view(), &q).unwrap()[0],
            0.7310585786300049,
            epsilon = 1e-12
        );
        let big = params(array![[1.0]], array![0.0], array![0.0]);
        assert_eq!(hidden_mean(array![1e6].view(), &big).unwrap()[0], 1.0);
    }

    #[test]
    fn sampling_examples() {
        let saturated = params(array![[1e3]], array![1e3], array![0.0]);
        for seed in 0..20 {
            assert_eq!(
                sample_hidden(array![1.0].view(), &saturated, &mut rng(seed)).unwrap()[0],
                1.0
            );
            assert_eq!(
                sample_visible(array![1.0].view(), &saturated, &mut rng(seed)).unwrap()[0],
                1.0
            );
        }

        let relu = RbmParams::new(Array2::zeros((1, 1)), array![0.0], array![0.0], UnitType::Relu).unwrap();
        let mut r = rng(1);
        let m = 100_000;
        let mean: f64 = (0..m)
            .map(|_| sample_hidden(array![0.5].view(), &relu, &mut r).unwrap()[0])
            .sum::<f64>()
            / m as f64;
        assert!(mean.abs() < 3.0 / (m as f64).sqrt());

        let zero = params(Array2::zeros((200, 1)), Array1::zeros(200), array![0.0]);
        let v = sample_visible(array![0.0].view(), &zero, &mut rng(3)).unwrap();
        let ones = v.sum();
        assert!(v.iter().all(|&b| b == 0.0 || b == 1.0));
        assert!((ones - 100.0).abs() < 4.0 * 50f64.sqrt());
        assert_eq!(v, sample_visible(array![0.0].view(), &zero, &mut rng(3)).unwrap());
        let x = Array1::from_elem(200, 0.3);
        assert_eq!(
            sample_hidden(x.view(), &zero, &mut rng(9)).unwrap(),
            sample_hidden(x.view(), &zero, &mut rng(9)).unwrap()
        );
    }

    #[test]
    fn cd_step_trivial_cases() {
        let p = params(array![[0.4], [-0.3]], Array1::zeros(2), Array1::zeros(1));
        let cfg = CdConfig {
            learning_rate: 0.0,
            ..CdConfig::default()
        };
        let d = cd_step(array![1.0, 0.0].view(), &p, &cfg, &mut rng(0)).unwrap();
        assert!(d.weights.iter().all(|&v| v == 0.0));

        let x0 = array![1.0, 0.0];
        let h0 = array![0.6];
        let same = cd_delta_from(x0.view(), h0.view(), x0.clone(), h0.clone(), 0.1);
        assert!(same.weights.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cd_delta_matches_outer_product_difference() {
        let x0 = array![1.0, 0.0];
        let h0 = array![0.8];
        let xp = array![1.0, 1.0];
        let hp = array![1.0];
        let d = cd_delta_from(x0.view(), h0.view(), xp, hp, 0.1);
        // 0.1 * ([1,0]^T [0.8] - [1,1]^T [1])
        let expected = array![[0.1 * (0.8 - 1.0)], [0.1 * (0.0 - 1.0)]];
        for (a, b) in d.weights.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(d.visible_bias[1], -0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(d.hidden_bias[0], 0.1 * (0.8 - 1.0), epsilon = 1e-15);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let ds = LabeledDataset::new(array![[1.0, 0.0], [0.0, 1.0]], vec![0, 1]).unwrap();
        let cfg = CdConfig {
            epochs: 0,
            seed: 11,
            ..CdConfig::default()
        };
        let trained = train(&ds, 3, &cfg).unwrap();
        let init = RbmParams::random(2, 3, UnitType::Binary, &mut rng(11)).unwrap();
        assert_eq!(trained, init);
    }

    #[test]
    fn training_is_deterministic_and_frozen_biases_stay_zero() {
        let x = Array2::from_shape_fn((30, 4), |(i, j)| ((i + j) % 3) as f64 / 2.0);
        let ds = LabeledDataset::new(x, vec![0; 30]).unwrap();
        let cfg = CdConfig {
            epochs: 3,
            batch_size: 7,
            seed: 5,
            freeze_biases: true,
            ..CdConfig::default()
        };
        let a = train(&ds, 5, &cfg).unwrap();
        let b = train(&ds, 5, &cfg).unwrap();
        assert!(a
            .weights()
            .iter()
            .zip(b.weights())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.visible_bias().iter().chain(a.hidden_bias()).all(|&v| v == 0.0));
    }

    #[test]
    fn one_bit_data_drives_weight_positive() {
        let ds = LabeledDataset::new(Array2::ones((50, 1)), vec![0; 50]).unwrap();
        let cfg = CdConfig {
            epochs: 200,
            batch_size: 10,
            seed: 2,
            ..CdConfig::default()
        };
        let p = train(&ds, 1, &cfg).unwrap();
        let on = hidden_mean(array![1.0].view(), &p).unwrap()[0];
        let off = hidden_mean(array![0.0].view(), &p).unwrap()[0];
        assert!(on > off, "{on} <= {off}");
    }

    #[test]
    fn empty_dataset_rejected() {
        let ds = LabeledDataset::new(Array2::zeros((0, 2)), vec![]).unwrap();
        assert!(matches!(train(&ds, 2, &CdConfig::default()), Err(Error::Argument(_))));
    }

    #[test]
    fn container_round_trip() {
        let p = RbmParams::random(3, 2, UnitType::Relu, &mut rng(4)).unwrap();
        assert_eq!(RbmParams::from_container(&p.to_container().unwrap()).unwrap(), p);
    }
}
