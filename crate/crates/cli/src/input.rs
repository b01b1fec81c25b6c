//! Reading loss vectors and JSON configuration files.

use std::path::Path;

use lmp_core::LossVector;
use serde::de::DeserializeOwned;

use crate::error::{CliError, CliResult};

/// Reads losses from a JSON array or from CSV with one value per line and an
/// optional header line.
pub fn read_losses(path: &Path) -> CliResult<LossVector> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
    let values = if text.trim_start().starts_with('[') {
        serde_json::from_str::<Vec<f64>>(&text).map_err(|e| CliError::input(path, format!("invalid JSON array: {e}")))?
    } else {
        parse_csv(path, &text)?
    };
    if values.is_empty() {
        return Err(CliError::input(path, "no losses found"));
    }
    LossVector::new(values).map_err(|e| match e {
        lmp_core::Error::InvalidLoss { index, value } => CliError::input(
            path,
            format!("entry {} is {value}; losses must be finite and non-negative", index + 1),
        ),
        other => CliError::input(path, other),
    })
}

fn parse_csv(path: &Path, text: &str) -> CliResult<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut values = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::input(path, e))?;
        if record.len() != 1 {
            return Err(CliError::input(
                path,
                format!("line {}: expected one value, found {}", row + 1, record.len()),
            ));
        }
        let field = &record[0];
        match field.parse::<f64>() {
            Ok(v) => values.push(v),
            Err(_) if row == 0 => {} // header
            Err(_) => {
                return Err(CliError::input(path, format!("line {}: {field:?} is not a number", row + 1)));
            }
        }
    }
    Ok(values)
}

/// Parses a JSON config file; errors name the offending key path.
pub fn read_json_config<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::params(format!("cannot read config {}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        CliError::params(format!("config {} at key `{key}`: {}", path.display(), e.inner()))
    })
}
