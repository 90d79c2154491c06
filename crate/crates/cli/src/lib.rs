//! Library side of the `dme` command: every subcommand is a function here so
//! tests can drive the pipeline without spawning processes.

pub mod commands;
pub mod config;
pub mod plot;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use dme_core::dataset::DatasetError;
use dme_core::eval::EvalError;
use dme_core::hbd::HbdError;
use dme_core::jsonl::JsonlError;
use dme_core::planner::PlannerError;
use thiserror::Error;

pub use commands::*;
pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config {path}: {message}")]
    Config { path: String, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Hbd(#[from] HbdError),
    #[error(transparent)]
    Records(#[from] JsonlError),
    #[error("validation failed: {0}")]
    Invalid(String),
    /// A threshold gate tripped; the run itself completed.
    #[error("gate failed: {0}")]
    Gate(String),
    #[error(transparent)]
    Plot(#[from] anyhow::Error),
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    /// 0 success, 1 gate failure, 2 usage or input error, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Gate(_) => 1,
            CliError::Planner(PlannerError::NonFinite(_)) => 3,
            _ => 2,
        }
    }
}

/// Per-run log file; every line is also forwarded to `log`.
pub struct RunLog {
    file: Mutex<File>,
}

impl RunLog {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| CliError::io(path, e))?;
        Ok(RunLog { file: Mutex::new(file) })
    }

    pub fn line(&self, msg: impl AsRef<str>) {
        let msg = msg.as_ref();
        log::info!("{msg}");
        let mut f = self.file.lock().expect("run log lock");
        // A failed log write should not abort a run that already has results.
        if let Err(e) = writeln!(f, "{msg}") {
            log::warn!("run log write failed: {e}");
        }
    }
}

pub(crate) fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}
