//! `summary.json` and CSV artifacts. Keys are written in sorted order and
//! floats in shortest round-trip form, so identical runs give identical
//! bytes (apart from the wall time in the summary).

use std::fs;
use std::path::Path;

use serde_json::json;

use crate::job::JobFile;
use crate::run::{Outcome, Table};
use crate::CliError;

pub const SUMMARY: &str = "summary.json";

fn io(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write_table(dir: &Path, t: &Table) -> Result<(), CliError> {
    let path = dir.join(&t.name);
    let mut w = csv::Writer::from_path(&path).map_err(|e| io(&path, e))?;
    w.write_record(&t.header).map_err(|e| io(&path, e))?;
    for row in &t.rows {
        w.write_record(row).map_err(|e| io(&path, e))?;
    }
    w.flush().map_err(|e| io(&path, e))
}

pub fn write(dir: &Path, job: &JobFile, outcome: &Outcome, wall_time: f64) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    for t in &outcome.tables {
        write_table(dir, t)?;
    }
    let status = if outcome.validation_failure.is_some() {
        "validation_failure"
    } else if outcome.numerical_failure.is_some() {
        "numerical_failure"
    } else {
        "ok"
    };
    let summary = json!({
        "artifacts": outcome.tables.iter().map(|t| t.name.clone()).collect::<Vec<_>>(),
        "command": job.job.name(),
        "config": job.resolved(),
        "config_sha256": job.config_hash(),
        "message": outcome.validation_failure.clone().or_else(|| outcome.numerical_failure.clone()),
        "result": outcome.result,
        "seed": job.seed,
        "status": status,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "wall_time_s": wall_time,
    });
    let path = dir.join(SUMMARY);
    let mut text = serde_json::to_string_pretty(&summary).map_err(|e| io(&path, e))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| io(&path, e))
}
