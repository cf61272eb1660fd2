//! Artifact writers.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use lowmach_core::diagnostics::{DiagnosticsRecord, CSV_HEADER};

use crate::error::CliError;

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// The only line that differs between identical runs.
pub fn timestamp_line() -> String {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    format!("# generated unix={secs}")
}

pub fn records_csv(records: &[DiagnosticsRecord]) -> String {
    let mut s = String::new();
    s.push_str(&timestamp_line());
    s.push('\n');
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}

pub fn write_csv(path: &Path, records: &[DiagnosticsRecord]) -> Result<(), CliError> {
    write_text(path, &records_csv(records))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Failed(format!("json: {e}")))?;
    write_text(path, &(text + "\n"))
}
