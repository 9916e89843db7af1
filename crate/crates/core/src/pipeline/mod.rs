//! Experiment orchestration: configuration, the training loop, the
//! robustness / causal / sensitivity suites, and the gradient-audit battery
//! behind the `gradcheck` subcommand.

pub mod audits;
pub mod config;
pub mod suites;
pub mod train;

pub use config::{ExperimentConfig, GraphSource, HyperParams, ModuleFlags};
pub use suites::{
    run_causal_suite, run_robustness_suite, run_sensitivity_grid, CausalReport, RobustnessReport,
    RobustnessRow, SensitivityRow,
};
pub use train::{
    evaluate, infer, majority_baseline, mc_inference, run_training, run_training_with_graph,
    InferenceOutput, RunArtifacts, TrainedModel,
};
