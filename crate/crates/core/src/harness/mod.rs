//! Experiment configuration, the seeded runner, metrics and plot-data emission.

pub mod config;
pub mod metrics;
pub mod plots;
pub mod runner;
pub mod stats;

pub use config::{ExperimentConfig, ExperimentKind, VariantSpec};
pub use metrics::{
    penalty_events, post_penalty_advantage, running_grad_variance, window_gradient_variance, GradientWindow, LogRecord,
    PenaltyEvent, RunSeries,
};
pub use plots::{emit_plot_data, PlotBundle};
pub use runner::{load_run_log, run_experiment, ExperimentResults, Manifest, RunOutcome};
