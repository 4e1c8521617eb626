//! Pipeline stages behind the `countkey` binary. Each stage reads and writes
//! plain files in a work directory so stages can be rerun independently:
//!
//! ```text
//! synth   -> dataset.tsv, schema.tsv, truth_keys.txt
//! select  -> keys.txt, candidates.tsv, models/user_<id>.forest
//! counts  -> counts_<set>.tsv (and keys_random-sparse.txt)
//! eval    -> report_<mode>_<set>.tsv (and model_batch_<set>.txt)
//! ```

pub mod commands;
pub mod config;

use std::path::Path;

use countkey::conf::ConfError;
use countkey::countstore::CountError;
use countkey::data::DataError;
use countkey::keyselect::KeyError;
use countkey::metrics::MetricsError;
use countkey::predict::PredictError;
use countkey::synth::SynthError;
use countkey::trees::TreeError;
use thiserror::Error;

pub use commands::{
    checkpoint_file, cmd_counts, cmd_eval, cmd_pipeline, cmd_select, cmd_synth, cmd_verify_bound, counts_file,
    load_dataset, report_file, CountsSummary, EvalMode, SelectSummary, SynthSummary, ALL_SETS,
};
pub use config::PipelineConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Conf(#[from] ConfError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error(transparent)]
    Count(#[from] CountError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {err}")]
    Io { path: String, err: std::io::Error },
    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            err: source,
        }
    }

    /// 1 for bad invocations or configs, 2 for data and artifact problems,
    /// 3 for failed checks.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Conf(_) | CliError::Synth(_) => 1,
            CliError::Predict(PredictError::InvalidConfig(_)) => 1,
            CliError::CheckFailed(_) => 3,
            _ => 2,
        }
    }
}
