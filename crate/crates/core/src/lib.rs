//! Machine unlearning toolkit: gradient ascent with generalized label
//! smoothing (UGradSL / UGradSL+), the usual baselines, an exact
//! influence-function verifier for convex models, a label-LDP calculator and
//! the evaluation metrics used to compare unlearned models against retraining.

pub mod data;
pub mod error;
pub mod influence;
pub mod metrics;
pub mod models;
pub mod numcore;
pub mod privacy;
pub mod smoothing;
pub mod unlearn;

pub use data::{ForgetSplit, LabeledDataset, Paradigm};
pub use error::{Error, ErrorKind, Result};
pub use influence::TheoryReport;
pub use metrics::MetricsReport;
pub use models::{Model, ModelKind, TrainConfig};
pub use numcore::{Matrix, RngStream};
pub use privacy::{LdpParams, LdpReport};
pub use smoothing::SmoothingPolicy;
pub use unlearn::{Method, UnlearnConfig, UnlearnResult};
