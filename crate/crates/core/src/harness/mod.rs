//! Desk-scale experiments: synthetic flow problems, robustness
//! perturbations, kernel training and metric reporting.

pub mod experiment;
pub mod gradcheck;
pub mod loss;
pub mod perturb;
pub mod report;
pub mod synth;

pub use experiment::{
    build_dataset, evaluate, run_experiment, run_experiment_with_state, train_kernel, Dataset,
    ExperimentConfig, ExperimentResult, SweepGrid,
};
pub use loss::matching_loss;
pub use perturb::{perturb, PerturbSpec};
pub use report::{report, summarize, Summary};
pub use synth::{generate, SyntheticInstance, SyntheticSpec};
