//! Command-line front end: configuration, mode dispatch and report files.

pub mod config;
pub mod modes;
pub mod report;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::Mode;

#[derive(Error, Debug)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("{0}")]
    Solver(String),
    #[error("verification failed: relative defect {relative:.3e} exceeds {tol:.1e}")]
    VerificationFailed { relative: f64, tol: f64 },
    #[error("cannot write {path}: {message}")]
    Output { path: PathBuf, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Solver(_) | CliError::VerificationFailed { .. } => 3,
            CliError::Output { .. } => 1,
        }
    }
}

/// Files written by one run and a one-line summary.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

/// Reads and validates the config, runs the mode and writes its reports into
/// `out` (default: `run.out_dir`, else the current directory).
pub fn run(config_path: &Path, mode: Option<Mode>, out: Option<&Path>) -> Result<Outcome, CliError> {
    let file = config::read(config_path)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let resolved = config::resolve(&file, mode, base)?;
    let out_dir = out.map(Path::to_path_buf).or_else(|| resolved.out_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::Output { path: out_dir.clone(), message: e.to_string() })?;
    modes::run(&resolved, &out_dir)
}
