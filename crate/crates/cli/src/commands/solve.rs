//! `lmp solve`: pool one loss vector.

use std::path::{Path, PathBuf};

use lmp_core::config::{p_serde, parse_p};
use lmp_core::{solve_pool, MSpec, PoolingConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::format;
use crate::input::{read_json_config, read_losses};
use crate::output::{default_path, write_json};

#[derive(Debug, Clone, Default)]
pub struct SolveArgs {
    pub losses: PathBuf,
    pub p: Option<String>,
    pub m: Option<String>,
    pub output: Option<PathBuf>,
    pub config: Option<PathBuf>,
}

/// Keys accepted in a `solve` config file; flags take precedence.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolveFile {
    #[serde(default, with = "p_serde::option")]
    p: Option<f64>,
    #[serde(default)]
    m: Option<MSpec>,
    #[serde(default)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutput {
    pub pooled_loss: f64,
    pub alpha_star: f64,
    pub support_indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub dual: Vec<f64>,
    #[serde(with = "p_serde")]
    pub p: f64,
    /// `m` resolved against the number of losses.
    pub m: f64,
    pub n: usize,
    #[serde(with = "p_serde")]
    pub q: f64,
    pub gamma: f64,
    pub tau: f64,
}

/// Solves the instance, writes the JSON result and returns it.
pub fn run(args: &SolveArgs) -> CliResult<SolveOutput> {
    let file: SolveFile = match &args.config {
        Some(path) => read_json_config(path)?,
        None => SolveFile::default(),
    };
    let p = match &args.p {
        Some(s) => parse_p(s).map_err(CliError::params)?,
        None => file.p.ok_or_else(|| CliError::params("p is required (flag --p or config key `p`)"))?,
    };
    let m = match &args.m {
        Some(s) => s.parse::<MSpec>().map_err(CliError::params)?,
        None => file.m.ok_or_else(|| CliError::params("m is required (flag --m or config key `m`)"))?,
    };
    let output = args
        .output
        .clone()
        .or(file.output)
        .unwrap_or_else(|| default_path("solve.json"));
    check_parent(&output)?;
    let config = PoolingConfig::new(p, m).map_err(CliError::params)?;
    let losses = read_losses(&args.losses)?;
    let out = solve_pool(&losses, &config).map_err(CliError::params)?;

    let result = SolveOutput {
        pooled_loss: out.pooled_loss,
        alpha_star: out.alpha_star,
        support_indices: out.support,
        weights: out.weights,
        dual: out.dual,
        p: out.params.p,
        m: out.params.m,
        n: out.params.n,
        q: out.params.q,
        gamma: out.params.gamma,
        tau: out.params.tau,
    };
    write_json(&output, &result)?;
    println!("{}", format::human(result.pooled_loss));
    Ok(result)
}

fn check_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(CliError::params(format!(
            "output directory {} does not exist",
            dir.display()
        ))),
        _ => Ok(()),
    }
}
