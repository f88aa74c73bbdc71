//! Covariance arc-cosine kernels learned from RBM weights or by stochastic
//! wide learning, composed into deep kernels and evaluated with a one-vs-one
//! regularized least-squares classifier.
//!
//! The pipeline, bottom to top:
//!
//! * [`data_io`] loads IDX and text datasets and draws stratified subsamples.
//! * [`rbm`] trains restricted Boltzmann machines with CD-p.
//! * [`wide_learn`] turns RBM weights into a covariance `Σ` (inexact), learns
//!   `Σ` directly (exact), or learns kernel matrices in feature space.
//! * [`arc_kernels`] evaluates (covariance) arc-cosine kernels, Gram matrices
//!   and layer compositions.
//! * [`kernel_classifier`] fits and applies one-vs-one RLS on Gram matrices.
//! * [`experiment`] wires everything into reproducible experiments.

pub mod arc_kernels;
pub mod config;
pub mod container;
pub mod data_io;
pub mod error;
pub mod experiment;
pub mod kernel_classifier;
pub mod linalg;
pub mod rbm;
pub mod synth;
pub mod wide_learn;

pub use arc_kernels::{
    arc_cosine, compose_layer, covariance_arc_cosine, cross_gram, gram, Degree, GramMatrix, KernelDescriptor, NormRule,
    Prefactor,
};
pub use config::Config;
pub use container::ModelContainer;
pub use data_io::{load_idx, subsample, LabeledDataset};
pub use error::{Error, Result, StageExt};
pub use experiment::{learning_curve, run_experiment, ExperimentSpec, LambdaScale, Report, WideMode};
pub use kernel_classifier::{error_rate, fit_ovo, fit_pair, RlsEnsemble};
pub use rbm::{CdConfig, RbmParams, UnitType};
pub use wide_learn::{exact_step, exact_train, inexact_fit, mean_field_limit, CovarianceModel, Provenance, WideConfig};
