//! Output locations and writers.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Environment variable naming the directory for outputs without an explicit
/// path.
pub const OUT_DIR_ENV: &str = "LMP_OUT_DIR";

pub fn default_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

pub fn default_path(file: &str) -> PathBuf {
    default_dir().join(file)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("output serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::output(path, e))
}

pub fn csv_writer(path: &Path) -> CliResult<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| CliError::output(path, csv_io(e)))
}

pub fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}
