//! Configuration, orchestration and output for experiments.

mod config;
mod experiment;
mod output;

pub use config::{
    load_config, CaseSource, CollusionConfig, DeviationConfig, ExperimentConfig, IsoChoice, Mode, OutputConfig,
    UmaxConfig,
};
pub use experiment::{
    initial_bids, run_experiment, validate_experiment, BoundValues, ExperimentOutcome, SummaryReport,
};
pub use output::{emit_plot_data, format_sig, trace_csv, PlotKind};
