//! AUROC with stratified bootstrap intervals, FPR curves and the end-to-end
//! experiment runner.

mod experiment;
mod metrics;
mod records;

pub use experiment::{
    run_experiment, run_experiment_with, train_mixture_flow, CalibrationSummary, ExperimentConfig, ExperimentOutput,
    ExperimentSink, MethodAuroc, Report, TypeIiCheck,
};
pub use metrics::{
    alpha_grid, auroc, auroc_split, bootstrap_auroc, fpr_at, fpr_curve, fpr_curve_at, percentile, BootstrapResult,
    FprPoint, Label, DEFAULT_BOOTSTRAP_ITERATIONS, MIN_BOOTSTRAP_ITERATIONS,
};
pub use records::{bootstrap_ci, score_latents, split_scores, Method, ScoreRecord};
