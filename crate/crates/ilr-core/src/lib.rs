//! Infinite mixture of Bayesian local polynomial regressors.
//!
//! A Dirichlet-process mixture, truncated for variational inference, in which
//! every component pairs a Normal-Wishart gate over the input space with a
//! Matrix-Normal-Wishart linear expert in feature space. Fitting runs
//! coordinate-ascent variational EM (full batch, minibatch, or sequential
//! Bayesian updates over data batches); prediction yields full mixture-of-
//! Student-t posterior predictive distributions, so the model reports how
//! uncertain it is away from the data.
//!
//! Modules:
//! - [`dist`]: special functions and conjugate parameter blocks
//! - [`features`]: polynomial feature maps and input/output standardization
//! - [`model`]: hyperparameters, posterior state, serialization
//! - [`vbem`]: variational EM fitting, minibatch variant, sequential updates
//! - [`predict`]: posterior predictive evaluation
//! - [`data`]: synthetic benchmark generators and CSV I/O
//! - [`metrics`]: evaluation metrics and reports

pub mod data;
pub mod dist;
pub mod error;
pub mod features;
pub mod metrics;
pub mod model;
pub mod predict;
pub mod vbem;

mod serde_mat;

pub use error::{Error, Result};
pub use features::{FeatureMap, Standardizer};
pub use metrics::EvalReport;
pub use model::{
    ComponentPosterior, FitMeta, GatingPriorKind, Hyperparams, MixturePosterior, ModelDims,
};
pub use predict::{GatingKind, PredictOptions, Prediction, Predictor};
pub use vbem::{FitConfig, InitKind, Responsibilities};
