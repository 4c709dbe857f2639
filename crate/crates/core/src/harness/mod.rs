//! Experiment configuration, multi-seed training sweeps and reports.

mod config;
mod report;
mod run;

pub use config::{parse_config, parse_config_str, Experiment, ExperimentSpec, DEFAULT_SEEDS};
pub use report::{
    build_report, emit_report, find_run_dirs, median, summarize_records, Aggregate,
    AlgorithmConvergence, ConfigReport, Distribution, PercentPoint, Report, ReportFormat,
    RunFigures, RunRecord, PERCENT_LEVELS,
};
pub use run::{
    resolve_jobs, run_dir, run_experiment, train_run, RunOptions, RunStatus, RunSummary,
    DIAGNOSTICS_STREAM, EVAL_STREAM, THREADS_ENV, TRAIN_STREAM,
};
