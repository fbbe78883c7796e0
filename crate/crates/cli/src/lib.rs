//! Experiment runner behind the `mve` binary: configuration merging,
//! per-seed benchmark execution, and report files.

pub mod config;
pub mod experiment;
pub mod report;
pub mod synth;

pub use config::{DataSource, ExperimentConfig, Method, SynthSpec};
pub use experiment::{run_experiment, ExperimentReport, MethodFailure};
pub use report::{aggregate_report, AggregateRow, RecordRow, TimingRow};
