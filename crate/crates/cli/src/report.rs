//! The JSON report envelope and CSV writers.

use std::path::{Path, PathBuf};

use overdet_core::modal::DEGENERACY_RATIO;
use overdet_core::outer::OuterOptions;
use overdet_core::radial::{H_MAX, R_EXTEND, R_START};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

pub const SCHEMA: &str = "overdet-report/1";

/// Every tolerance and resolution constant a run depends on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tolerances {
    pub radial_start: f64,
    pub radial_max_step: f64,
    pub radial_extend: f64,
    pub mode_degeneracy_ratio: f64,
    pub outer: OuterOptions,
    pub certification: overdet_core::forward::ForwardOptions,
    pub verify_tol: f64,
}

impl Tolerances {
    pub fn of(config: &RunConfig) -> Self {
        Tolerances {
            radial_start: R_START,
            radial_max_step: H_MAX,
            radial_extend: R_EXTEND,
            mode_degeneracy_ratio: DEGENERACY_RATIO,
            outer: config.options,
            certification: config.options.certification(),
            verify_tol: config.verify_tol,
        }
    }
}

#[derive(Serialize)]
struct Hashed<'a, T: Serialize> {
    config: &'a RunConfig,
    tolerances: &'a Tolerances,
    result: &'a T,
}

#[derive(Serialize)]
pub struct Report<'a, T: Serialize> {
    pub schema: &'static str,
    pub version: &'static str,
    pub mode: &'static str,
    pub spec_hash: String,
    pub config: &'a RunConfig,
    pub tolerances: Tolerances,
    pub result: &'a T,
    /// SHA-256 of the compact JSON of `config`, `tolerances` and `result`.
    pub content_hash: String,
}

fn write_err(path: &Path, e: impl ToString) -> CliError {
    CliError::Output { path: path.to_path_buf(), message: e.to_string() }
}

pub fn write_report<T: Serialize>(dir: &Path, config: &RunConfig, spec_hash: String, result: &T) -> Result<PathBuf, CliError> {
    let path = dir.join("report.json");
    let tolerances = Tolerances::of(config);
    let compact = serde_json::to_string(&Hashed { config, tolerances: &tolerances, result }).map_err(|e| write_err(&path, e))?;
    let report = Report {
        schema: SCHEMA,
        version: env!("CARGO_PKG_VERSION"),
        mode: config.mode.name(),
        spec_hash,
        config,
        tolerances,
        result,
        content_hash: hex::encode(Sha256::digest(compact.as_bytes())),
    };
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| write_err(&path, e))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| write_err(&path, e))?;
    Ok(path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf, CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| write_err(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| write_err(path, e))?;
    Ok(path.to_path_buf())
}

/// Shortest round-trip text of a number; empty for `None`.
pub fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<PathBuf, CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| write_err(path, e))?;
    w.write_record(header).map_err(|e| write_err(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| write_err(path, e))?;
    }
    w.flush().map_err(|e| write_err(path, e))?;
    Ok(path.to_path_buf())
}
