//! Experiment configuration, metrics, persistence and drivers.

pub mod bundle;
pub mod config;
pub mod experiments;
pub mod metrics;
pub mod qmat;

pub use bundle::{load_bundle, save_bundle, Bundle};
pub use config::{ExperimentConfig, ParamSetSpec};
pub use metrics::{evaluate_testset, relative_error, ResultRow, TestTruth, VariantErrors, CSV_HEADER};
