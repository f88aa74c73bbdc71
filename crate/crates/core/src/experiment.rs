//! End-to-end experiment pipeline: subsample → RBM → Σ → Gram (+ composed
//! identity layers) → one-vs-one RLS with λ chosen on a held-out split → test
//! error, plus the finite- vs infinite-width learning curve.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arc_kernels::{compose_entry, cross_gram, gram, self_similarities, Degree, KernelDescriptor};
use crate::config::Config;
use crate::data_io::{self, LabelColumn, LabeledDataset};
use crate::error::{Error, Result, StageExt};
use crate::kernel_classifier::{error_rate, fit_ovo, RlsEnsemble, DEFAULT_LAMBDA_GRID};
use crate::linalg::{self, PsdReport};
use crate::rbm::{self, CdConfig, RbmParams, UnitType};
use crate::synth;
use crate::wide_learn::{self, CovarianceModel, SigmaInit, WideConfig};

/// Gram matrices must satisfy `min eig ≥ -PSD_TOL · max diag`.
pub const PSD_TOL: f64 = 1e-8;

pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte.gz",
    "train-labels-idx1-ubyte.gz",
    "test-images-idx3-ubyte.gz",
    "test-labels-idx1-ubyte.gz",
];

/// Every key an experiment config may contain.
pub const KNOWN_KEYS: &[&str] = &[
    "experiment.name",
    "experiment.finite",
    "experiment.stacked",
    "dataset.id",
    "dataset.dir",
    "dataset.train_images",
    "dataset.train_labels",
    "dataset.test_images",
    "dataset.test_labels",
    "dataset.train",
    "dataset.test",
    "dataset.label_column",
    "dataset.train_count",
    "dataset.test_count",
    "dataset.seed",
    "data.train_size",
    "data.test_size",
    "data.seed",
    "rbm.hidden",
    "rbm.eta",
    "rbm.momentum",
    "rbm.epochs",
    "rbm.batch_size",
    "rbm.cd_steps",
    "rbm.seed",
    "rbm.freeze_biases",
    "rbm.unit_type",
    "wide.mode",
    "wide.eta",
    "wide.gibbs_steps",
    "wide.epochs",
    "wide.seed",
    "wide.init_scale",
    "kernel.degree",
    "kernel.layers",
    "rls.lambda_grid",
    "rls.lambda_scale",
    "rls.holdout_fraction",
    "rls.seed",
    "curve.checkpoints",
    "out.dir",
];

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    /// IDX image/label files (optionally gzipped).
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    /// Whitespace-separated text matrices.
    Text {
        train: PathBuf,
        test: PathBuf,
        label_column: LabelColumn,
    },
    /// Datasets stored in the `WKRN` container format.
    Container { train: PathBuf, test: PathBuf },
    /// Generated rectangles images.
    Rectangles { train: usize, test: usize, seed: u64 },
}

impl DatasetSource {
    pub fn load(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        match self {
            DatasetSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                let train = data_io::load_idx(train_images, train_labels)?;
                let test = data_io::load_idx(test_images, test_labels)?;
                let c = train.num_classes().max(test.num_classes());
                Ok((
                    LabeledDataset::with_classes(train.instances().clone(), train.labels().to_vec(), c)?,
                    LabeledDataset::with_classes(test.instances().clone(), test.labels().to_vec(), c)?,
                ))
            }
            DatasetSource::Text {
                train,
                test,
                label_column,
            } => Ok((
                data_io::load_text_matrix(train, *label_column)?,
                data_io::load_text_matrix(test, *label_column)?,
            )),
            DatasetSource::Container { train, test } => Ok((LabeledDataset::load(train)?, LabeledDataset::load(test)?)),
            DatasetSource::Rectangles { train, test, seed } => Ok((
                synth::rectangles(*train, *seed)?,
                synth::rectangles(*test, seed.wrapping_add(1))?,
            )),
        }
    }

    fn describe(&self) -> String {
        match self {
            DatasetSource::Idx { train_images, .. } => format!(
                "idx ({}), pixels scaled to [0,1]",
                train_images.parent().unwrap_or(Path::new(".")).display()
            ),
            DatasetSource::Text { train, .. } => format!("text ({})", train.display()),
            DatasetSource::Container { train, .. } => format!("container ({})", train.display()),
            DatasetSource::Rectangles { train, test, seed } => {
                format!("rectangles (generated, {train} train / {test} test, seed {seed})")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WideMode {
    Inexact,
    Exact,
}

impl std::str::FromStr for WideMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "inexact" => Ok(WideMode::Inexact),
            "exact" => Ok(WideMode::Exact),
            other => Err(format!("expected `exact` or `inexact`, got `{other}`")),
        }
    }
}

impl std::fmt::Display for WideMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WideMode::Inexact => "inexact",
            WideMode::Exact => "exact",
        })
    }
}

/// How grid values of λ are turned into the ridge actually added to `K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaScale {
    /// λ is multiplied by the mean diagonal of the training Gram matrix.
    Relative,
    /// λ is used as given.
    Absolute,
}

impl std::str::FromStr for LambdaScale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "relative" => Ok(LambdaScale::Relative),
            "absolute" => Ok(LambdaScale::Absolute),
            other => Err(format!("expected `relative` or `absolute`, got `{other}`")),
        }
    }
}

impl std::fmt::Display for LambdaScale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LambdaScale::Relative => "relative",
            LambdaScale::Absolute => "absolute",
        })
    }
}

/// Ridge selection settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RlsSettings {
    pub lambda_grid: Vec<f64>,
    pub lambda_scale: LambdaScale,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for RlsSettings {
    fn default() -> Self {
        Self {
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            lambda_scale: LambdaScale::Relative,
            holdout_fraction: 0.2,
            seed: 0,
        }
    }
}

impl RlsSettings {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::config("rls.lambda_grid", "needs positive finite values"));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::config("rls.holdout_fraction", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub dataset: DatasetSource,
    pub train_size: Option<usize>,
    pub test_size: Option<usize>,
    pub subsample_seed: u64,
    pub hidden: usize,
    pub rbm: CdConfig,
    pub mode: WideMode,
    pub wide: WideConfig,
    pub degree: Degree,
    pub layers: Vec<usize>,
    pub rls: RlsSettings,
    /// Adds a row for linear RLS on the RBM's hidden activations.
    pub include_finite: bool,
    /// Adds a row for a second RBM trained on the first one's activations,
    /// with the covariance kernel built from its weights.
    pub include_stacked: bool,
    pub checkpoints: Vec<usize>,
    pub out_dir: Option<PathBuf>,
}

/// `rbm.*` keys over [`CdConfig::default`].
pub fn cd_config_from(c: &Config) -> Result<CdConfig> {
    let d = CdConfig::default();
    let config = CdConfig {
        learning_rate: c.get_or("rbm.eta", d.learning_rate)?,
        momentum: c.get_or("rbm.momentum", d.momentum)?,
        epochs: c.get_or("rbm.epochs", d.epochs)?,
        batch_size: c.get_or("rbm.batch_size", d.batch_size)?,
        cd_steps: c.get_or("rbm.cd_steps", d.cd_steps)?,
        seed: c.get_or("rbm.seed", d.seed)?,
        freeze_biases: c.get_or("rbm.freeze_biases", d.freeze_biases)?,
        unit_type: c.get::<UnitType>("rbm.unit_type")?.unwrap_or(d.unit_type),
    };
    config.validate()?;
    Ok(config)
}

/// `wide.*` keys over [`WideConfig::default`]; `wide.init_scale = c` starts from `c·I`.
pub fn wide_config_from(c: &Config) -> Result<WideConfig> {
    let w = WideConfig::default();
    Ok(WideConfig {
        learning_rate: c.get_or("wide.eta", w.learning_rate)?,
        gibbs_steps: c.get_or("wide.gibbs_steps", w.gibbs_steps)?,
        epochs: c.get_or("wide.epochs", w.epochs)?,
        seed: c.get_or("wide.seed", w.seed)?,
        init: match c.get::<f64>("wide.init_scale")? {
            Some(s) => SigmaInit::ScaledIdentity(s),
            None => SigmaInit::Identity,
        },
    })
}

/// `kernel.degree`, default 1.
pub fn degree_from(c: &Config) -> Result<Degree> {
    let degree: u32 = c.get_or("kernel.degree", 1)?;
    Degree::try_from(degree).map_err(|e| Error::config("kernel.degree", e.to_string()))
}

/// `rls.*` keys over [`RlsSettings::default`].
pub fn rls_settings_from(c: &Config) -> Result<RlsSettings> {
    let settings = RlsSettings {
        lambda_grid: c
            .get_list("rls.lambda_grid")?
            .unwrap_or_else(|| DEFAULT_LAMBDA_GRID.to_vec()),
        lambda_scale: c.get_or("rls.lambda_scale", LambdaScale::Relative)?,
        holdout_fraction: c.get_or("rls.holdout_fraction", 0.2)?,
        seed: c.get_or("rls.seed", 0)?,
    };
    settings.validate()?;
    Ok(settings)
}

impl ExperimentSpec {
    /// A spec with library defaults around the given data source.
    pub fn new(name: impl Into<String>, dataset: DatasetSource) -> Self {
        Self {
            name: name.into(),
            dataset,
            train_size: None,
            test_size: None,
            subsample_seed: 0,
            hidden: 500,
            rbm: CdConfig::default(),
            mode: WideMode::Inexact,
            wide: WideConfig::default(),
            degree: Degree::One,
            layers: vec![0],
            rls: RlsSettings::default(),
            include_finite: true,
            include_stacked: false,
            checkpoints: Vec::new(),
            out_dir: None,
        }
    }

    /// Builds a spec from a flat config; unknown keys and unknown dataset ids
    /// are config errors.
    pub fn from_config(c: &Config) -> Result<Self> {
        c.reject_unknown(KNOWN_KEYS)?;
        let id: String = c.require("dataset.id")?;
        let path = |key: &str| c.require::<String>(key).map(PathBuf::from);
        let dataset = match id.as_str() {
            "mnist" => {
                let dir = PathBuf::from(c.get_or("dataset.dir", "data/mnist".to_string())?);
                DatasetSource::Idx {
                    train_images: dir.join(MNIST_FILES[0]),
                    train_labels: dir.join(MNIST_FILES[1]),
                    test_images: dir.join(MNIST_FILES[2]),
                    test_labels: dir.join(MNIST_FILES[3]),
                }
            }
            "idx" => DatasetSource::Idx {
                train_images: path("dataset.train_images")?,
                train_labels: path("dataset.train_labels")?,
                test_images: path("dataset.test_images")?,
                test_labels: path("dataset.test_labels")?,
            },
            "text" => DatasetSource::Text {
                train: path("dataset.train")?,
                test: path("dataset.test")?,
                label_column: match c.get_or("dataset.label_column", "last".to_string())?.as_str() {
                    "last" => LabelColumn::Last,
                    "none" => LabelColumn::None,
                    other => {
                        return Err(Error::config(
                            "dataset.label_column",
                            format!("expected `last` or `none`, got `{other}`"),
                        ))
                    }
                },
            },
            "container" => DatasetSource::Container {
                train: path("dataset.train")?,
                test: path("dataset.test")?,
            },
            "rectangles" => DatasetSource::Rectangles {
                train: c.get_or("dataset.train_count", 1200)?,
                test: c.get_or("dataset.test_count", 5000)?,
                seed: c.get_or("dataset.seed", 0)?,
            },
            other => return Err(Error::config("dataset.id", format!("unknown dataset `{other}`"))),
        };
        let mut spec = Self::new(c.get_or("experiment.name", id.clone())?, dataset);
        spec.train_size = c.get("data.train_size")?;
        spec.test_size = c.get("data.test_size")?;
        spec.subsample_seed = c.get_or("data.seed", 0)?;
        spec.include_finite = c.get_or("experiment.finite", true)?;
        spec.include_stacked = c.get_or("experiment.stacked", false)?;

        spec.hidden = c.get_or("rbm.hidden", spec.hidden)?;
        spec.rbm = cd_config_from(c)?;
        spec.mode = c.get_or("wide.mode", WideMode::Inexact)?;
        spec.wide = wide_config_from(c)?;
        spec.degree = degree_from(c)?;
        spec.layers = c.get_list("kernel.layers")?.unwrap_or_else(|| vec![0]);
        spec.rls = rls_settings_from(c)?;
        spec.checkpoints = c.get_list("curve.checkpoints")?.unwrap_or_default();
        spec.out_dir = c.get::<String>("out.dir")?.map(PathBuf::from);
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::config("rbm.hidden", "must be at least 1"));
        }
        self.rbm.validate()?;
        if self.mode == WideMode::Exact {
            self.wide.validate()?;
        }
        if self.layers.is_empty() {
            return Err(Error::config("kernel.layers", "needs at least one layer count"));
        }
        self.rls.validate()
    }

    /// Loads both splits and applies the stratified subsamples.
    pub fn load_data(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        let (train, test) = self.dataset.load()?;
        let train = match self.train_size {
            Some(n) if n < train.len() => data_io::subsample(&train, n, self.subsample_seed)?,
            _ => train,
        };
        let test = match self.test_size {
            Some(n) if n < test.len() => data_io::subsample(&test, n, self.subsample_seed.wrapping_add(1))?,
            _ => test,
        };
        if train.dim() != test.dim() {
            return Err(Error::Consistency(format!(
                "training dimension {} differs from test dimension {}",
                train.dim(),
                test.dim()
            )));
        }
        Ok((train, test))
    }
}

/// Outcome of λ selection.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaChoice {
    /// Grid value picked.
    pub grid_value: f64,
    /// Ridge added to the Gram diagonal.
    pub lambda: f64,
    /// Held-out error per grid value; `None` where the fit failed.
    pub holdout_errors: Vec<(f64, Option<f64>)>,
}

/// Stratified split of `labels` into (fit, holdout) index sets.
pub fn holdout_split(labels: &[usize], num_classes: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let (mut fit, mut hold) = (Vec::new(), Vec::new());
    for members in &mut by_class {
        members.shuffle(&mut rng);
        let k = if members.len() >= 2 {
            ((members.len() as f64 * fraction).round() as usize).clamp(1, members.len() - 1)
        } else {
            0
        };
        hold.extend_from_slice(&members[..k]);
        fit.extend_from_slice(&members[k..]);
    }
    fit.sort_unstable();
    hold.sort_unstable();
    (fit, hold)
}

fn ridge_scale(k: ArrayView2<f64>, scale: LambdaScale) -> f64 {
    match scale {
        LambdaScale::Absolute => 1.0,
        LambdaScale::Relative => {
            let n = k.nrows().max(1) as f64;
            let mean = k.diag().sum() / n;
            if mean > 0.0 {
                mean
            } else {
                1.0
            }
        }
    }
}

/// Grid search on a stratified held-out split; ties go to the larger λ.
pub fn select_lambda(
    k: ArrayView2<f64>,
    labels: &[usize],
    num_classes: usize,
    settings: &RlsSettings,
) -> Result<LambdaChoice> {
    let scale = ridge_scale(k, settings.lambda_scale);
    let (fit, hold) = holdout_split(labels, num_classes, settings.holdout_fraction, settings.seed);
    let fit_labels: Vec<usize> = fit.iter().map(|&i| labels[i]).collect();
    let hold_labels: Vec<usize> = hold.iter().map(|&i| labels[i]).collect();
    let k_fit = k.select(Axis(0), &fit).select(Axis(1), &fit);
    let k_hold = k.select(Axis(0), &hold).select(Axis(1), &fit);
    let mut errors = Vec::with_capacity(settings.lambda_grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &g in &settings.lambda_grid {
        let err = if hold.is_empty() {
            Some(0.0)
        } else {
            match fit_ovo(k_fit.view(), &fit_labels, num_classes, g * scale) {
                Ok(ens) => Some(error_rate(&ens.predict(k_hold.view())?, &hold_labels)?),
                Err(Error::Numerical(m)) => {
                    log::warn!("λ = {g:e} skipped: {m}");
                    None
                }
                Err(e) => return Err(e),
            }
        };
        log::debug!("λ = {g:e}: holdout error {err:?}");
        if let Some(e) = err {
            let better = match best {
                None => true,
                Some((bg, be)) => e < be || (e == be && g > bg),
            };
            if better {
                best = Some((g, e));
            }
        }
        errors.push((g, err));
    }
    let (grid_value, _) = best.ok_or_else(|| Error::Numerical("every λ in the grid failed to produce a fit".into()))?;
    Ok(LambdaChoice {
        grid_value,
        lambda: grid_value * scale,
        holdout_errors: errors,
    })
}

/// Result of fitting and testing one kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub choice: LambdaChoice,
    pub test_error: f64,
    pub psd: PsdReport,
}

/// λ selection, refit on all training rows, test error, and the Gram PSD check.
pub fn evaluate_kernel(
    k_train: ArrayView2<f64>,
    k_cross: ArrayView2<f64>,
    train_labels: &[usize],
    test_labels: &[usize],
    num_classes: usize,
    settings: &RlsSettings,
) -> Result<(Evaluation, RlsEnsemble)> {
    let psd = linalg::check_psd(k_train, PSD_TOL)?;
    if !psd.passed {
        log::warn!(
            "Gram matrix fails the PSD check: min eigenvalue {:?}, max diagonal {}",
            psd.min_eigenvalue,
            psd.max_diag
        );
    }
    let choice = select_lambda(k_train, train_labels, num_classes, settings)?;
    let ens = fit_ovo(k_train, train_labels, num_classes, choice.lambda)?;
    let test_error = error_rate(&ens.predict(k_cross)?, test_labels)?;
    Ok((
        Evaluation {
            choice,
            test_error,
            psd,
        },
        ens,
    ))
}

/// Train Gram, test×train cross-Gram and both self-similarity vectors, which
/// can be pushed through further identity composition layers.
#[derive(Debug, Clone)]
pub struct KernelBlocks {
    pub train: Array2<f64>,
    pub cross: Array2<f64>,
    train_diag: Array1<f64>,
    test_diag: Array1<f64>,
    desc: KernelDescriptor,
}

impl KernelBlocks {
    pub fn new(x_train: ArrayView2<f64>, x_test: ArrayView2<f64>, desc: KernelDescriptor) -> Result<Self> {
        let base = desc.clone().layers(0);
        let train = gram(x_train, &base)?.values;
        let cross = cross_gram(x_test, x_train, &base)?;
        let train_diag = train.diag().to_owned();
        let test_diag = self_similarities(x_test, &base)?;
        Ok(Self {
            train,
            cross,
            train_diag,
            test_diag,
            desc: base,
        })
    }

    /// Linear kernel on precomputed features.
    pub fn linear(f_train: ArrayView2<f64>, f_test: ArrayView2<f64>) -> Self {
        let mut train = f_train.dot(&f_train.t());
        linalg::symmetrize(&mut train);
        let cross = f_test.dot(&f_train.t());
        let train_diag = train.diag().to_owned();
        let test_diag = f_test.rows().into_iter().map(|r| r.dot(&r)).collect();
        Self {
            train,
            cross,
            train_diag,
            test_diag,
            desc: KernelDescriptor::identity(Degree::One),
        }
    }

    pub fn depth(&self) -> usize {
        self.desc.composition_depth
    }

    /// Applies one more identity-covariance layer.
    pub fn compose(&mut self) {
        let d = &self.desc;
        let f = |v: f64, a: f64, b: f64| compose_entry(v, a, b, d.degree, d.norm_rule, d.prefactor);
        let (td, sd) = (&self.train_diag, &self.test_diag);
        ndarray::Zip::indexed(&mut self.train).par_for_each(|(i, j), v| *v = f(*v, td[i], td[j]));
        ndarray::Zip::indexed(&mut self.cross).par_for_each(|(i, j), v| *v = f(*v, sd[i], td[j]));
        self.train_diag.mapv_inplace(|v| f(v, v, v));
        self.test_diag.mapv_inplace(|v| f(v, v, v));
        self.desc.composition_depth += 1;
    }

    pub fn compose_to(&mut self, depth: usize) {
        while self.depth() < depth {
            self.compose();
        }
    }
}

/// One line of the experiment report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub name: String,
    pub covariance: String,
    pub layers: usize,
    pub evaluation: Evaluation,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    /// Every chosen setting, in order.
    pub header: Vec<(String, String)>,
    pub rows: Vec<ReportRow>,
}

fn fmt_ratio(p: &PsdReport) -> String {
    match p.ratio() {
        Some(r) => format!("{r:.3e}"),
        None => "n/a".into(),
    }
}

impl Report {
    pub fn row(&self, name: &str, layers: usize) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.name == name && r.layers == layers)
    }

    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("name,covariance,layers,lambda_grid,lambda,test_error,psd_min_eig_ratio,psd_passed,seconds\n");
        for r in &self.rows {
            let e = &r.evaluation;
            let _ = writeln!(
                s,
                "{},{},{},{:e},{:e},{},{},{},{:.2}",
                r.name,
                r.covariance,
                r.layers,
                e.choice.grid_value,
                e.choice.lambda,
                e.test_error,
                fmt_ratio(&e.psd),
                e.psd.passed,
                r.seconds
            );
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.header {
            let _ = writeln!(s, "# {k}: {v}");
        }
        let _ = writeln!(
            s,
            "{:<10} {:<18} {:>6} {:>10} {:>11} {:>10} {:>8}",
            "row", "covariance", "layers", "lambda", "test error", "psd ratio", "seconds"
        );
        for r in &self.rows {
            let e = &r.evaluation;
            let _ = writeln!(
                s,
                "{:<10} {:<18} {:>6} {:>10.0e} {:>10.2}% {:>10} {:>8.1}",
                r.name,
                r.covariance,
                r.layers,
                e.choice.grid_value,
                100.0 * e.test_error,
                fmt_ratio(&e.psd),
                r.seconds
            );
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [("report.txt", self.to_table()), ("report.csv", self.to_csv())] {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(p, e))?;
        }
        Ok(())
    }
}

fn header(spec: &ExperimentSpec, train: &LabeledDataset, test: &LabeledDataset) -> Vec<(String, String)> {
    let r = &spec.rbm;
    let mut h = vec![
        ("experiment".into(), spec.name.clone()),
        ("dataset".into(), spec.dataset.describe()),
        ("train size".into(), train.len().to_string()),
        ("test size".into(), test.len().to_string()),
        ("subsample".into(), format!("stratified, seed {}", spec.subsample_seed)),
        (
            "rbm".into(),
            format!(
                "{} hidden {}, eta {}, momentum {}, batch {}, CD-{}, {} epochs, seed {}, biases {}",
                spec.hidden,
                r.unit_type,
                r.learning_rate,
                r.momentum,
                r.batch_size,
                r.cd_steps,
                r.epochs,
                r.seed,
                if r.freeze_biases { "frozen at 0" } else { "trained" }
            ),
        ),
        ("sigma".into(), spec.mode.to_string()),
    ];
    if spec.mode == WideMode::Exact {
        let w = &spec.wide;
        h.push((
            "exact wide learning".into(),
            format!(
                "eta {}, {} Gibbs steps, {} epochs, seed {}, init {:?}",
                w.learning_rate, w.gibbs_steps, w.epochs, w.seed, w.init
            ),
        ));
    }
    h.extend([
        (
            "kernel".into(),
            format!(
                "arc-cosine degree {}, prefactor 1/(2*pi), composed layers use the norm rule",
                spec.degree.as_u32()
            ),
        ),
        ("layers".into(), join(&spec.layers)),
        ("lambda grid".into(), join_exp(&spec.rls.lambda_grid)),
        (
            "lambda scale".into(),
            match spec.rls.lambda_scale {
                LambdaScale::Relative => "relative to the mean Gram diagonal".into(),
                LambdaScale::Absolute => "absolute".into(),
            },
        ),
        (
            "lambda selection".into(),
            format!(
                "stratified {:.0}% holdout of the training subsample, seed {}, ties to larger lambda, refit on all training rows",
                100.0 * spec.rls.holdout_fraction,
                spec.rls.seed
            ),
        ),
        ("psd check".into(), format!("min eig >= -{PSD_TOL:e} x max diagonal")),
    ]);
    h
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn join_exp(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",")
}

/// Everything an experiment produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: Report,
    pub rbm: RbmParams,
    pub sigma: CovarianceModel,
}

pub fn fit_sigma(spec: &ExperimentSpec, train: &LabeledDataset, params: &RbmParams) -> Result<CovarianceModel> {
    let sigma = match spec.mode {
        WideMode::Inexact => wide_learn::inexact_fit(params)?,
        WideMode::Exact => wide_learn::exact_train(train, &spec.wide)?,
    };
    if let Ok((lo, hi)) = sigma.eigen_extrema() {
        log::info!("sigma ({}) eigenvalues in [{lo:.4e}, {hi:.4e}]", spec.mode);
    }
    Ok(sigma)
}

fn timed_row(
    name: &str,
    covariance: &str,
    blocks: &KernelBlocks,
    train: &LabeledDataset,
    test: &LabeledDataset,
    settings: &RlsSettings,
    start: Instant,
) -> Result<ReportRow> {
    let (evaluation, _) = evaluate_kernel(
        blocks.train.view(),
        blocks.cross.view(),
        train.labels(),
        test.labels(),
        train.num_classes().max(test.num_classes()),
        settings,
    )?;
    let row = ReportRow {
        name: name.into(),
        covariance: covariance.into(),
        layers: blocks.depth(),
        evaluation,
        seconds: start.elapsed().as_secs_f64(),
    };
    log::info!(
        "{name} (L={}): test error {:.2}%, lambda {:e}",
        row.layers,
        100.0 * row.evaluation.test_error,
        row.evaluation.choice.grid_value
    );
    Ok(row)
}

/// Rows for one descriptor at every requested layer count.
fn layer_rows(
    name: &str,
    covariance: &str,
    desc: KernelDescriptor,
    spec: &ExperimentSpec,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<Vec<ReportRow>> {
    let mut layers = spec.layers.clone();
    layers.sort_unstable();
    layers.dedup();
    let start = Instant::now();
    let mut blocks = KernelBlocks::new(train.instances().view(), test.instances().view(), desc).stage("gram")?;
    let mut rows = Vec::new();
    for l in layers {
        let t = Instant::now();
        blocks.compose_to(l);
        let origin = if rows.is_empty() { start } else { t };
        rows.push(timed_row(name, covariance, &blocks, train, test, &spec.rls, origin).stage("rls")?);
    }
    Ok(rows)
}

/// Runs the full pipeline. The report always holds a `Σ = I` baseline row next
/// to each learned-Σ row.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let (train, test) = spec.load_data().stage("data")?;
    log::info!("{}: {} train / {} test instances", spec.name, train.len(), test.len());
    let params = rbm::train(&train, spec.hidden, &spec.rbm).stage("rbm")?;
    let sigma = fit_sigma(spec, &train, &params).stage("sigma")?;

    let mut report = Report {
        header: header(spec, &train, &test),
        rows: Vec::new(),
    };
    let learned = format!("learned ({})", spec.mode);
    report.rows.extend(layer_rows(
        "identity",
        "identity",
        KernelDescriptor::identity(spec.degree),
        spec,
        &train,
        &test,
    )?);
    report.rows.extend(layer_rows(
        "learned",
        &learned,
        KernelDescriptor::with_covariance(spec.degree, sigma.clone()),
        spec,
        &train,
        &test,
    )?);
    if spec.include_finite {
        let start = Instant::now();
        let h_train = params.hidden_means(train.instances().view()).stage("finite")?;
        let h_test = params.hidden_means(test.instances().view()).stage("finite")?;
        let blocks = KernelBlocks::linear(h_train.view(), h_test.view());
        report
            .rows
            .push(timed_row("finite", "rbm activations", &blocks, &train, &test, &spec.rls, start).stage("finite")?);
    }
    if spec.include_stacked {
        report
            .rows
            .push(stacked_row(spec, &params, &train, &test).stage("stacked")?);
    }
    if let Some(dir) = &spec.out_dir {
        report.write(dir)?;
        params.to_container()?.save(dir.join("rbm.wkrn"))?;
        sigma.to_container()?.save(dir.join("sigma.wkrn"))?;
    }
    Ok(ExperimentOutcome {
        report,
        rbm: params,
        sigma,
    })
}

/// Second RBM on the first one's activations; covariance kernel from its weights.
fn stacked_row(
    spec: &ExperimentSpec,
    params: &RbmParams,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<ReportRow> {
    let start = Instant::now();
    let h_train = params.hidden_means(train.instances().view())?;
    let h_test = params.hidden_means(test.instances().view())?;
    let c = train.num_classes().max(test.num_classes());
    let h_ds = LabeledDataset::with_classes(h_train.mapv(|v| v.clamp(0.0, 1.0)), train.labels().to_vec(), c)?;
    let second = rbm::train(&h_ds, spec.hidden, &spec.rbm)?;
    let sigma2 = wide_learn::inexact_fit(&second)?;
    let blocks = KernelBlocks::new(
        h_ds.instances().view(),
        h_test.view(),
        KernelDescriptor::with_covariance(spec.degree, sigma2),
    )?;
    timed_row("stacked", "learned on features", &blocks, train, test, &spec.rls, start)
}

/// Errors of both models at one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub epoch: usize,
    pub finite: Evaluation,
    pub infinite: Evaluation,
}

impl CurvePoint {
    pub fn finite_accuracy(&self) -> f64 {
        1.0 - self.finite.test_error
    }

    pub fn infinite_accuracy(&self) -> f64 {
        1.0 - self.infinite.test_error
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
}

impl LearningCurve {
    /// `epoch,accuracy` pairs for one of the two models.
    pub fn csv(&self, infinite: bool) -> String {
        let mut s = String::from("epoch,accuracy\n");
        for p in &self.points {
            let acc = if infinite {
                p.infinite_accuracy()
            } else {
                p.finite_accuracy()
            };
            let _ = writeln!(s, "{},{acc}", p.epoch);
        }
        s
    }

    /// Both curves side by side with the λ picked for each.
    pub fn combined_csv(&self) -> String {
        let mut s = String::from(
            "epoch,finite_accuracy,infinite_accuracy,finite_lambda_grid,infinite_lambda_grid,finite_psd_ratio,infinite_psd_ratio\n",
        );
        for p in &self.points {
            let _ = writeln!(
                s,
                "{},{},{},{:e},{:e},{},{}",
                p.epoch,
                p.finite_accuracy(),
                p.infinite_accuracy(),
                p.finite.choice.grid_value,
                p.infinite.choice.grid_value,
                fmt_ratio(&p.finite.psd),
                fmt_ratio(&p.infinite.psd)
            );
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            ("curve_finite.csv", self.csv(false)),
            ("curve_infinite.csv", self.csv(true)),
            ("curve.csv", self.combined_csv()),
        ] {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(p, e))?;
        }
        Ok(())
    }
}

/// Sorted, deduplicated checkpoints (with a warning on duplicates).
pub fn normalize_checkpoints(checkpoints: &[usize]) -> Result<Vec<usize>> {
    if checkpoints.is_empty() {
        return Err(Error::config("curve.checkpoints", "needs at least one epoch"));
    }
    let mut c = checkpoints.to_vec();
    c.sort_unstable();
    c.dedup();
    if c.len() != checkpoints.len() {
        log::warn!("duplicate checkpoints removed: {checkpoints:?} -> {c:?}");
    }
    Ok(c)
}

/// Finite-width (linear RLS on hidden activations) against infinite-width
/// (covariance kernel from the same weights) at each checkpoint epoch.
/// Training runs for the largest checkpoint; `rbm.epochs` is ignored.
pub fn learning_curve(spec: &ExperimentSpec, checkpoints: &[usize]) -> Result<LearningCurve> {
    let checkpoints = normalize_checkpoints(checkpoints)?;
    let (train, test) = spec.load_data().stage("data")?;
    learning_curve_on(spec, &checkpoints, &train, &test)
}

/// [`learning_curve`] on already loaded data.
pub fn learning_curve_on(
    spec: &ExperimentSpec,
    checkpoints: &[usize],
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<LearningCurve> {
    let checkpoints = normalize_checkpoints(checkpoints)?;
    let last = *checkpoints.last().expect("nonempty");
    let cfg = CdConfig {
        epochs: last,
        ..spec.rbm.clone()
    };
    let mut snapshots: Vec<(usize, RbmParams)> = Vec::new();
    if checkpoints[0] == 0 {
        let init = rbm::train(
            train,
            spec.hidden,
            &CdConfig {
                epochs: 0,
                ..cfg.clone()
            },
        )
        .stage("rbm")?;
        snapshots.push((0, init));
    }
    rbm::train_with(train, spec.hidden, &cfg, |stats, params| {
        if checkpoints.binary_search(&stats.epoch).is_ok() {
            snapshots.push((stats.epoch, params.clone()));
        }
    })
    .stage("rbm")?;

    let c = train.num_classes().max(test.num_classes());
    let mut curve = LearningCurve::default();
    for (epoch, params) in snapshots {
        let h_train = params.hidden_means(train.instances().view()).stage("curve")?;
        let h_test = params.hidden_means(test.instances().view()).stage("curve")?;
        let finite = KernelBlocks::linear(h_train.view(), h_test.view());
        let (finite, _) = evaluate_kernel(
            finite.train.view(),
            finite.cross.view(),
            train.labels(),
            test.labels(),
            c,
            &spec.rls,
        )
        .stage("curve")?;
        let sigma = wide_learn::inexact_fit(&params).stage("curve")?;
        let blocks = KernelBlocks::new(
            train.instances().view(),
            test.instances().view(),
            KernelDescriptor::with_covariance(spec.degree, sigma),
        )
        .stage("curve")?;
        let (infinite, _) = evaluate_kernel(
            blocks.train.view(),
            blocks.cross.view(),
            train.labels(),
            test.labels(),
            c,
            &spec.rls,
        )
        .stage("curve")?;
        log::info!(
            "epoch {epoch}: finite {:.2}% / infinite {:.2}% error",
            100.0 * finite.test_error,
            100.0 * infinite.test_error
        );
        curve.points.push(CurvePoint {
            epoch,
            finite,
            infinite,
        });
    }
    if let Some(dir) = &spec.out_dir {
        curve.write(dir)?;
    }
    Ok(curve)
}
