use std::fs::{self, File};
use std::io::Read;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use widelearn_core::arc_kernels::{cross_gram, gram, KernelDescriptor};
use widelearn_core::container::MAGIC;
use widelearn_core::data_io::{self, LabelColumn};
use widelearn_core::experiment::{
    self, cd_config_from, degree_from, rls_settings_from, select_lambda, wide_config_from, ExperimentSpec, KNOWN_KEYS,
    PSD_TOL,
};
use widelearn_core::kernel_classifier::{error_rate, fit_ovo};
use widelearn_core::wide_learn::{self, CovarianceModel};
use widelearn_core::{linalg, rbm, Config, Error, LabeledDataset, ModelContainer, RbmParams, Result, RlsEnsemble};

use super::{
    Command, Common, ConvertArgs, CurveArgs, DataCommand, EvalArgs, ExperimentCommand, GramBuildArgs, GramCommand,
    ModeArg, Overrides, RbmCommand, RbmTrainArgs, RlsCommand, RlsTrainArgs, SigmaCommand, SigmaFitArgs,
};

const DEFAULT_OUT: &str = "out";

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Data(DataCommand::Convert(a)) => convert(a),
        Command::Rbm(RbmCommand::Train(a)) => rbm_train(a),
        Command::Sigma(SigmaCommand::Fit(a)) => sigma_fit(a),
        Command::Gram(GramCommand::Build(a)) => gram_build(a),
        Command::Rls(RlsCommand::Train(a)) => rls_train(a),
        Command::Eval(a) => eval(a),
        Command::Experiment(ExperimentCommand::Run(a)) => experiment_run(a.common, a.overrides),
        Command::Curve(a) => curve(a),
    }
}

/// The config file (or an empty one), with unknown keys rejected.
fn load_config(common: &Common) -> Result<Config> {
    let c = match &common.config {
        Some(p) => Config::load(p)?,
        None => Config::new(),
    };
    c.reject_unknown(KNOWN_KEYS)?;
    Ok(c)
}

fn set_seeds(c: &mut Config, seed: Option<u64>, keys: &[&str]) {
    if let Some(s) = seed {
        for k in keys {
            c.set(*k, s.to_string());
        }
    }
}

fn out_dir(common: &Common, c: &Config) -> Result<PathBuf> {
    let dir = match &common.out {
        Some(d) => d.clone(),
        None => PathBuf::from(c.get_or("out.dir", DEFAULT_OUT.to_string())?),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

/// A dataset container, recognised by its magic, or else a text matrix with
/// labels in the last column.
fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    let mut head = [0u8; 4];
    let n = File::open(path)
        .and_then(|mut f| f.read(&mut head))
        .map_err(|e| Error::io(path, e))?;
    if n == 4 && &head == MAGIC {
        LabeledDataset::load(path)
    } else {
        data_io::load_text_matrix(path, LabelColumn::Last)
    }
}

fn maybe_subsample(ds: LabeledDataset, n: Option<usize>, seed: u64) -> Result<LabeledDataset> {
    match n {
        Some(n) if n < ds.len() => data_io::subsample(&ds, n, seed),
        Some(n) => {
            if n > ds.len() {
                log::warn!("subsample of {n} requested from {} rows; keeping all", ds.len());
            }
            Ok(ds)
        }
        None => Ok(ds),
    }
}

fn labels_vector(labels: &[usize]) -> Array1<f64> {
    labels.iter().map(|&l| l as f64).collect()
}

fn labels_from(c: &ModelContainer, name: &str) -> Result<Vec<usize>> {
    c.vector(name)?
        .iter()
        .map(|&v| {
            if v.is_finite() && v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Format(format!("section `{name}` holds a non-integer label {v}")))
            }
        })
        .collect()
}

fn save(c: &ModelContainer, path: PathBuf) -> Result<()> {
    c.save(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn convert(a: ConvertArgs) -> Result<()> {
    let c = load_config(&a.common)?;
    let ds = match (&a.images, &a.labels, &a.text) {
        (Some(images), Some(labels), _) => data_io::load_idx(images, labels)?,
        (_, _, Some(text)) => {
            let column = if a.unlabeled {
                LabelColumn::None
            } else {
                LabelColumn::Last
            };
            data_io::load_text_matrix(text, column)?
        }
        _ => return Err(Error::Argument("give --images with --labels, or --text".into())),
    };
    let seed = a.common.seed.unwrap_or(c.get_or("data.seed", 0)?);
    let ds = maybe_subsample(ds, a.subsample, seed)?;
    println!(
        "{} rows, dimension {}, {} classes (counts {:?})",
        ds.len(),
        ds.dim(),
        ds.num_classes(),
        ds.class_counts()
    );
    let dir = out_dir(&a.common, &c)?;
    save(&ds.to_container()?, dir.join(format!("{}.wkrn", a.name)))
}

fn rbm_train(a: RbmTrainArgs) -> Result<()> {
    let mut c = load_config(&a.common)?;
    set_seeds(&mut c, a.common.seed, &["rbm.seed", "data.seed"]);
    let config = cd_config_from(&c)?;
    let hidden: usize = c.get_or("rbm.hidden", 500)?;
    if hidden == 0 {
        return Err(Error::config("rbm.hidden", "must be at least 1"));
    }
    let ds = maybe_subsample(load_dataset(&a.data)?, a.subsample, c.get_or("data.seed", 0)?)?;
    let dir = out_dir(&a.common, &c)?;
    println!(
        "training {}x{hidden} {} RBM on {} rows for {} epochs",
        ds.dim(),
        config.unit_type,
        ds.len(),
        config.epochs
    );
    let params = rbm::train_with(&ds, hidden, &config, |stats, _| {
        println!(
            "epoch {} reconstruction_error {:.6}",
            stats.epoch, stats.reconstruction_error
        );
    })?;
    save(&params.to_container()?, dir.join("rbm.wkrn"))
}

fn sigma_fit(a: SigmaFitArgs) -> Result<()> {
    let mut c = load_config(&a.common)?;
    set_seeds(&mut c, a.common.seed, &["wide.seed", "data.seed"]);
    let sigma = match a.mode {
        ModeArg::Inexact => {
            let path = a
                .rbm
                .as_ref()
                .ok_or_else(|| Error::config("--rbm", "inexact mode needs an RBM container"))?;
            wide_learn::inexact_fit(&RbmParams::from_container(&ModelContainer::load(path)?)?)?
        }
        ModeArg::Exact => {
            let path = a
                .data
                .as_ref()
                .ok_or_else(|| Error::config("--data", "exact mode needs training data"))?;
            let ds = maybe_subsample(load_dataset(path)?, a.subsample, c.get_or("data.seed", 0)?)?;
            wide_learn::exact_train(&ds, &wide_config_from(&c)?)?
        }
    };
    let (lo, hi) = sigma.eigen_extrema()?;
    log::info!("sigma eigenvalues in [{lo:e}, {hi:e}]");
    println!(
        "sigma {0}x{0} ({1}): min eigenvalue {lo:e}, max eigenvalue {hi:e}",
        sigma.dim(),
        sigma.provenance()
    );
    let dir = out_dir(&a.common, &c)?;
    save(&sigma.to_container()?, dir.join("sigma.wkrn"))
}

fn gram_build(a: GramBuildArgs) -> Result<()> {
    let c = load_config(&a.common)?;
    let degree = degree_from(&c)?;
    let layers = match a.layers {
        Some(l) => l,
        None => match c.get_list::<usize>("kernel.layers")?.as_deref() {
            None => 0,
            Some([l]) => *l,
            Some(_) => return Err(Error::config("kernel.layers", "gram build takes a single depth")),
        },
    };
    let train = load_dataset(&a.data)?;
    let desc = match &a.sigma {
        Some(p) => {
            KernelDescriptor::with_covariance(degree, CovarianceModel::from_container(&ModelContainer::load(p)?)?)
        }
        None => KernelDescriptor::identity(degree),
    }
    .layers(layers);

    let g = gram(train.instances().view(), &desc)?;
    let psd = linalg::check_psd(g.values.view(), PSD_TOL)?;
    println!(
        "gram {0}x{0}, degree {1}, {layers} composed layers; PSD check {2} (min eigenvalue {3}, max diagonal {4:e})",
        g.order(),
        degree.as_u32(),
        if psd.passed { "passed" } else { "FAILED" },
        psd.min_eigenvalue
            .map_or("not computed".to_string(), |m| format!("{m:e}")),
        psd.max_diag
    );

    let mut out = ModelContainer::new();
    let mut num_classes = train.num_classes();
    out.push("train", g.values)?;
    out.push_vector("train_labels", &labels_vector(train.labels()))?;
    if let Some(p) = &a.test {
        let test = load_dataset(p)?;
        num_classes = num_classes.max(test.num_classes());
        out.push(
            "cross",
            cross_gram(test.instances().view(), train.instances().view(), &desc)?,
        )?;
        out.push_vector("test_labels", &labels_vector(test.labels()))?;
    }
    out.push_scalar("num_classes", num_classes as f64)?;
    out.push_scalar("degree", f64::from(degree.as_u32()))?;
    out.push_scalar("layers", layers as f64)?;
    let dir = out_dir(&a.common, &c)?;
    save(&out, dir.join("gram.wkrn"))
}

fn train_block(g: &ModelContainer) -> Result<(&Array2<f64>, Vec<usize>, usize)> {
    let k = g.require("train")?;
    let labels = labels_from(g, "train_labels")?;
    let num_classes = labels_from(g, "num_classes")?[0];
    if k.nrows() != labels.len() {
        return Err(Error::Consistency(format!(
            "gram of order {} with {} labels",
            k.nrows(),
            labels.len()
        )));
    }
    Ok((k, labels, num_classes))
}

fn rls_train(a: RlsTrainArgs) -> Result<()> {
    let mut c = load_config(&a.common)?;
    set_seeds(&mut c, a.common.seed, &["rls.seed"]);
    if let Some(grid) = &a.lambda_grid {
        c.set("rls.lambda_grid", grid.clone());
    }
    let settings = rls_settings_from(&c)?;
    let g = ModelContainer::load(&a.gram)?;
    let (k, labels, num_classes) = train_block(&g)?;
    let choice = select_lambda(k.view(), &labels, num_classes, &settings)?;
    for (grid, err) in &choice.holdout_errors {
        match err {
            Some(e) => println!("lambda {grid:e}: holdout error {:.4}%", 100.0 * e),
            None => println!("lambda {grid:e}: fit failed"),
        }
    }
    println!("selected lambda {:e} (ridge {:e})", choice.grid_value, choice.lambda);
    let ens = fit_ovo(k.view(), &labels, num_classes, choice.lambda)?;
    let dir = out_dir(&a.common, &c)?;
    save(&ens.to_container()?, dir.join("rls.wkrn"))
}

fn eval(a: EvalArgs) -> Result<()> {
    let g = ModelContainer::load(&a.gram)?;
    let cross = g.get("cross").ok_or_else(|| {
        Error::Format(format!(
            "{} has no `cross` section; build it with `gram build --test`",
            a.gram.display()
        ))
    })?;
    let labels = labels_from(&g, "test_labels")?;
    let ens = RlsEnsemble::from_container(&ModelContainer::load(&a.model)?)?;
    if cross.ncols() != ens.train_size() {
        return Err(Error::Consistency(format!(
            "cross-Gram has {} columns but the model was trained on {} rows",
            cross.ncols(),
            ens.train_size()
        )));
    }
    let predicted = ens.predict(cross.view())?;
    let err = error_rate(&predicted, &labels)?;
    let wrong = predicted.iter().zip(&labels).filter(|(p, l)| p != l).count();
    let line = format!("test error {:.4}% ({wrong} of {})", 100.0 * err, labels.len());
    println!("{line}");
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join("eval.txt");
        fs::write(&p, format!("{line}\n")).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// Config with command-line overrides applied, as an experiment spec.
fn experiment_spec(common: &Common, o: &Overrides) -> Result<ExperimentSpec> {
    let mut c = load_config(common)?;
    set_seeds(&mut c, common.seed, &["data.seed", "rbm.seed", "wide.seed", "rls.seed"]);
    if let Some(n) = o.subsample {
        c.set("data.train_size", n.to_string());
    }
    if let Some(m) = o.mode {
        c.set("wide.mode", experiment::WideMode::from(m).to_string());
    }
    if let Some(l) = &o.layers {
        c.set("kernel.layers", l.clone());
    }
    if let Some(g) = &o.lambda_grid {
        c.set("rls.lambda_grid", g.clone());
    }
    let mut spec = ExperimentSpec::from_config(&c)?;
    spec.out_dir = Some(out_dir(common, &c)?);
    Ok(spec)
}

fn experiment_run(common: Common, o: Overrides) -> Result<()> {
    let spec = experiment_spec(&common, &o)?;
    let outcome = experiment::run_experiment(&spec)?;
    print!("{}", outcome.report.to_table());
    if let Some(dir) = &spec.out_dir {
        println!(
            "wrote report.txt, report.csv, rbm.wkrn, sigma.wkrn to {}",
            dir.display()
        );
    }
    Ok(())
}

fn curve(a: CurveArgs) -> Result<()> {
    let spec = experiment_spec(&a.common, &a.overrides)?;
    let checkpoints = match &a.checkpoints {
        Some(list) => widelearn_core::config::parse_list("curve.checkpoints", list)?,
        None => spec.checkpoints.clone(),
    };
    let curve = experiment::learning_curve(&spec, &checkpoints)?;
    println!("{:>6} {:>16} {:>16}", "epoch", "finite acc (%)", "infinite acc (%)");
    for p in &curve.points {
        println!(
            "{:>6} {:>16.2} {:>16.2}",
            p.epoch,
            100.0 * p.finite_accuracy(),
            100.0 * p.infinite_accuracy()
        );
    }
    if let Some(dir) = &spec.out_dir {
        curve.write(dir)?;
        println!(
            "wrote curve_finite.csv, curve_infinite.csv, curve.csv to {}",
            dir.display()
        );
    }
    Ok(())
}
