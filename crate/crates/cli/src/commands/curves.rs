//! `lmp weight-curves`: optimal weights against loss rank for a `(p, m)` grid.

use std::path::PathBuf;

use lmp_core::config::parse_p;
use lmp_core::curves::{synthetic_losses, weight_curves, LossDistribution, WeightCurves};
use lmp_core::MSpec;
use serde::Deserialize;

use crate::error::{CliError, CliResult};
use crate::format;
use crate::input::read_json_config;
use crate::output::{csv_io, csv_writer, default_path};

/// The p-grid of the classic weight-profile figure.
pub const DEFAULT_P_GRID: &str = "1,1.2,1.4,1.7,2,3,4,10,inf";

#[derive(Debug, Clone, Default)]
pub struct CurvesArgs {
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub distribution: Option<String>,
    pub p: Option<String>,
    pub m: Option<String>,
    pub output: Option<PathBuf>,
    pub config: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CurvesFile {
    n: Option<usize>,
    seed: Option<u64>,
    distribution: Option<LossDistribution>,
    p: Option<Vec<serde_json::Value>>,
    m: Option<Vec<serde_json::Value>>,
    output: Option<PathBuf>,
}

/// Parses `m` as `"25%"`, `"25"` or `"n/3"` (a fraction `1/3`).
pub fn parse_m(s: &str) -> CliResult<MSpec> {
    let s = s.trim();
    if let Some(k) = s.strip_prefix("n/") {
        let k: f64 = k.parse().map_err(|_| CliError::params(format!("cannot parse m = {s:?}")))?;
        if k.is_nan() || k < 1.0 {
            return Err(CliError::params(format!("m = {s:?}: divisor must be >= 1")));
        }
        return Ok(MSpec::Fraction(1.0 / k));
    }
    s.parse::<MSpec>().map_err(CliError::params)
}

fn split_list(s: &str) -> Vec<&str> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty()).collect()
}

fn value_to_string(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn run(args: &CurvesArgs) -> CliResult<WeightCurves> {
    let file: CurvesFile = match &args.config {
        Some(path) => read_json_config(path)?,
        None => CurvesFile::default(),
    };
    let n = args.n.or(file.n).unwrap_or(100);
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let distribution = match &args.distribution {
        Some(s) => s.parse().map_err(CliError::params)?,
        None => file.distribution.unwrap_or_default(),
    };
    let p_list: Vec<String> = match (&args.p, &file.p) {
        (Some(s), _) => split_list(s).into_iter().map(String::from).collect(),
        (None, Some(v)) => v.iter().map(value_to_string).collect(),
        (None, None) => split_list(DEFAULT_P_GRID).into_iter().map(String::from).collect(),
    };
    let m_list: Vec<String> = match (&args.m, &file.m) {
        (Some(s), _) => split_list(s).into_iter().map(String::from).collect(),
        (None, Some(v)) => v.iter().map(value_to_string).collect(),
        (None, None) => vec!["n/3".to_string()],
    };
    let output = args.output.clone().or(file.output).unwrap_or_else(|| default_path("weight_curves.csv"));

    if n == 0 {
        return Err(CliError::params("n must be at least 1"));
    }
    let ps = p_list.iter().map(|s| parse_p(s).map_err(CliError::params)).collect::<CliResult<Vec<_>>>()?;
    let ms = m_list.iter().map(|s| parse_m(s)).collect::<CliResult<Vec<_>>>()?;
    if ps.is_empty() || ms.is_empty() {
        return Err(CliError::params("p and m grids must be non-empty"));
    }
    let grid: Vec<(f64, MSpec)> = ps.iter().flat_map(|&p| ms.iter().map(move |&m| (p, m))).collect();

    let losses = synthetic_losses(n, distribution, seed).map_err(CliError::params)?;
    let curves = weight_curves(&losses, &grid).map_err(CliError::params)?;
    write_csv(&output, &curves)?;

    println!("{:<28} {:>8} {:>14} {:>9}", "column", "support", "dist_uniform", "monotone");
    for col in &curves.columns {
        println!(
            "{:<28} {:>8} {:>14} {:>9}",
            col.label(),
            col.support(),
            format::human(col.distance_to_uniform()),
            col.is_monotone()
        );
    }
    Ok(curves)
}

fn write_csv(path: &std::path::Path, curves: &WeightCurves) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    let fail = |e: csv::Error| CliError::output(path, csv_io(e));
    let mut header = vec!["pixel_rank".to_string(), "loss".to_string()];
    header.extend(curves.columns.iter().map(|c| c.label()));
    w.write_record(&header).map_err(fail)?;
    for (i, loss) in curves.losses.iter().enumerate() {
        let mut row = vec![(i + 1).to_string(), format::exact(*loss)];
        row.extend(curves.columns.iter().map(|c| format::exact(c.weights[i])));
        w.write_record(&row).map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::output(path, e))
}
