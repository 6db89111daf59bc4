//! Front end for tangram-core: run configuration, file helpers, the
//! commands behind the `tangram` binary and the trace-collection service.
//!
//! Exit codes: 0 on success, 1 when input fails validation (bad traces,
//! configs, arguments or weights files), 2 when a file cannot be read or
//! written.

pub mod commands;
pub mod config;
pub mod files;
pub mod serve;

use std::io;
use std::path::PathBuf;

use thiserror::Error;

use tangram_core::geometry::GenerateError;
use tangram_core::nn::weights::WeightsError;
use tangram_core::pretrain::PretrainError;
use tangram_core::report::ReportError;
use tangram_core::trace::TraceError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_IO: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Trace { path: PathBuf, source: TraceError },
    #[error("{}: {source}", path.display())]
    Weights { path: PathBuf, source: WeightsError },
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Pretrain(#[from] PretrainError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::Weights { source: WeightsError::Io(_), .. } => EXIT_IO,
            CliError::Pretrain(PretrainError::Io(_)) => EXIT_IO,
            _ => EXIT_INVALID,
        }
    }
}
