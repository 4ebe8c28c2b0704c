//! Config-driven experiment runner behind the `dbforge` binary.
//!
//! Every command returns an [`ExperimentError`] whose [`exit_code`] is the
//! process exit status: 2 for config or usage problems, 3 for I/O, 4 when a
//! pipeline fails.
//!
//! [`exit_code`]: ExperimentError::exit_code

mod commands;
mod config;
mod pipeline;
mod report;

use std::path::PathBuf;

use thiserror::Error;

pub use commands::{
    cmd_eval, cmd_gen, cmd_mi, cmd_run, cmd_sweep, cmd_weights, parse_joint_csv, parse_mode_csv,
    resolve_output_dir, run_experiment, sweep, EvalReport, ModeColumns, RunOutcome, SweepParameter,
    SweepReport, SweepRow, WeightsReport, OUTPUT_DIR_ENV,
};
pub use config::{
    DatasetFiles, DatasetSection, DebiasSection, ErmSection, ExperimentConfig, ModelSection,
    MstSection,
};
pub use pipeline::{load_or_generate, run_seed, SeedData};
pub use report::{
    aggregate, read_json, to_json_string, write_json_atomic, Aggregate, DebiasRecord,
    ExperimentReport, GapRecord, GapSummary, GapsSummary, GroupReport, GroupRow, MeanStd,
    MstSummary, SeedError, SeedRecord, StageRecord, SummaryBlock, WeightRecord, SCHEMA_VERSION,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{failed} of {total} seeds failed; see `errors` in {report}")]
    Pipeline {
        failed: usize,
        total: usize,
        report: PathBuf,
    },
    #[error("pipeline failed: {0}")]
    Stage(String),
}

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Usage(_) | Self::Input { .. } => 2,
            Self::Io { .. } => 3,
            Self::Pipeline { .. } | Self::Stage(_) => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<crate::datagen::DataError> for ExperimentError {
    fn from(e: crate::datagen::DataError) -> Self {
        use crate::datagen::DataError;
        match e {
            DataError::Io { path, source } => Self::Io { path, source },
            DataError::ConfigInvalid(m) => Self::Config(m),
            other => Self::Config(other.to_string()),
        }
    }
}
