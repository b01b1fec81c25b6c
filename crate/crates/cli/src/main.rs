use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use lmp_cli::commands::{audit, curves, demo, solve};
use lmp_cli::CliError;

#[derive(Parser)]
#[command(name = "lmp", version, about = "Loss max-pooling: solve, sweep, audit and train")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pool one loss vector and write the optimal weights as JSON.
    Solve(SolveCmd),
    /// Tabulate optimal weights against loss rank over a (p, m) grid.
    WeightCurves(CurvesCmd),
    /// Compare the solver with the reference oracles on random instances.
    OracleAudit(AuditCmd),
    /// Train uniform / weighted / pooled losses on the synthetic long-tail task.
    TrainDemo(DemoCmd),
}

#[derive(Args)]
struct SolveCmd {
    /// JSON array or one-column CSV of non-negative losses.
    #[arg(long)]
    losses: PathBuf,
    /// Norm exponent, >= 1 or "inf".
    #[arg(long)]
    p: Option<String>,
    /// Budget: absolute ("25") or a fraction of n ("25%").
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// JSON config with keys p, m, output.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct CurvesCmd {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// uniform, exponential or lognormal.
    #[arg(long)]
    distribution: Option<String>,
    /// Comma-separated p values.
    #[arg(long)]
    p: Option<String>,
    /// Comma-separated m values ("10", "25%", "n/3").
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct AuditCmd {
    #[arg(long, default_value_t = 500)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overrides every tolerance below.
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    duality_tol: Option<f64>,
    #[arg(long)]
    kkt_tol: Option<f64>,
    #[arg(long)]
    eta_tol: Option<f64>,
    #[arg(long)]
    feas_tol: Option<f64>,
    /// Write the audit table as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct DemoCmd {
    /// JSON config with keys dataset, train, modes, seeds.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated loss modes: uniform, inverse_median_freq, lmp.
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<String>>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    p: Option<String>,
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    sequential: bool,
}

fn audit_args(cmd: AuditCmd) -> audit::AuditArgs {
    let mut tol = audit::Tolerances::default();
    if let Some(v) = cmd.rel_tol {
        tol.oracle_gap = v;
    }
    if let Some(v) = cmd.duality_tol {
        tol.duality_gap = v;
    }
    if let Some(v) = cmd.kkt_tol {
        tol.kkt = v;
    }
    if let Some(v) = cmd.eta_tol {
        tol.eta = v;
    }
    if let Some(v) = cmd.feas_tol {
        tol.feasibility = v;
    }
    if let Some(v) = cmd.tolerance {
        tol = audit::Tolerances::uniform(v);
    }
    audit::AuditArgs {
        instances: cmd.instances,
        seed: cmd.seed,
        tolerances: tol,
        report: cmd.report,
        sequential: cmd.sequential,
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Solve(c) => {
            solve::run(&solve::SolveArgs {
                losses: c.losses,
                p: c.p,
                m: c.m,
                output: c.output,
                config: c.config,
            })?;
        }
        Command::WeightCurves(c) => {
            curves::run(&curves::CurvesArgs {
                n: c.n,
                seed: c.seed,
                distribution: c.distribution,
                p: c.p,
                m: c.m,
                output: c.output,
                config: c.config,
            })?;
        }
        Command::OracleAudit(c) => {
            let report = audit::run(&audit_args(c))?;
            if !report.passed {
                return Err(CliError::Failed("oracle audit failed".into()).into());
            }
        }
        Command::TrainDemo(c) => {
            demo::run(&demo::DemoArgs {
                config: c.config,
                seeds: c.seeds,
                modes: c.modes,
                iterations: c.iterations,
                p: c.p,
                m: c.m,
                out_dir: c.out_dir,
                sequential: c.sequential,
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<CliError>().map_or(1, CliError::exit_code);
            ExitCode::from(code)
        }
    }
}
