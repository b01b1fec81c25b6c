//! `lmp oracle-audit`: randomized solver-vs-oracle comparison.

use std::path::PathBuf;

use lmp_core::par::{self, Execution};
use lmp_core::{dual_objective, eta, solve_pool, LossVector, MSpec, PoolingConfig};
use lmp_oracle::{kkt_residual, maximize_primal, scan_dual_alpha, Problem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::format;
use crate::output::write_json;

pub const P_GRID: [f64; 5] = [1.1, 1.3, 1.7, 2.0, 4.0];
pub const MAX_N: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub losses: Vec<f64>,
    pub p: f64,
    pub m: f64,
}

/// `count` instances with `n <= 50`, losses from `U(0, 1)` or a standard
/// lognormal (alternating), `p` from [`P_GRID`] and `m` uniform in `[1, n]`.
pub fn generate_instances(count: usize, seed: u64) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lognormal = LogNormal::new(0.0, 1.0).expect("valid parameters");
    (0..count)
        .map(|k| {
            let n = rng.random_range(1..=MAX_N);
            let losses = if k % 2 == 0 {
                (0..n).map(|_| rng.random::<f64>()).collect()
            } else {
                (0..n).map(|_| lognormal.sample(&mut rng)).collect()
            };
            let p = P_GRID[rng.random_range(0..P_GRID.len())];
            let m = if n == 1 { 1.0 } else { rng.random_range(1.0..=n as f64) };
            Instance { losses, p, m }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Relative gap to each oracle.
    pub oracle_gap: f64,
    /// Relative gap between the dual objective at `lambda*` and the pooled loss.
    pub duality_gap: f64,
    /// Sup-norm residual of the fixed point `lambda = max(l - threshold, 0)`.
    pub kkt: f64,
    /// `|eta(alpha*)|` on max-normalized losses.
    pub eta: f64,
    /// Absolute constraint violation of the solver and oracle weights.
    pub feasibility: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            oracle_gap: 1e-4,
            duality_gap: 1e-6,
            kkt: 1e-6,
            eta: 1e-7,
            feasibility: 1e-8,
        }
    }
}

impl Tolerances {
    pub fn uniform(tol: f64) -> Self {
        Self {
            oracle_gap: tol,
            duality_gap: tol,
            kkt: tol,
            eta: tol,
            feasibility: tol,
        }
    }
}

/// Measurements for one instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceCheck {
    pub pooled_loss: f64,
    pub mean: f64,
    pub primal_gap: f64,
    pub dual_scan_gap: f64,
    pub duality_gap: f64,
    pub kkt_residual: f64,
    pub eta_residual: f64,
    pub support: usize,
    pub m: f64,
    pub solver_violation: f64,
    pub oracle_violation: f64,
    pub oracle_converged: bool,
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-9)
}

fn violation(w: &[f64], p: f64, gamma: f64, tau: f64) -> f64 {
    let norm = w.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p);
    let boxed = w.iter().map(|&x| (-x).max(x - tau)).fold(0.0, f64::max);
    (norm - gamma).max(boxed).max(0.0)
}

pub fn check_instance(inst: &Instance) -> CliResult<InstanceCheck> {
    let bad = |e: lmp_core::Error| CliError::Failed(format!("solver rejected an audit instance: {e}"));
    let losses = LossVector::new(inst.losses.clone()).map_err(bad)?;
    let config = PoolingConfig::new(inst.p, MSpec::Absolute(inst.m)).map_err(bad)?;
    let out = solve_pool(&losses, &config).map_err(bad)?;
    let params = out.params;
    let oracle_err = |e: lmp_oracle::OracleError| CliError::Failed(format!("oracle rejected an audit instance: {e}"));
    let problem = Problem::new(&inst.losses, inst.p, inst.m).map_err(oracle_err)?;
    let primal = maximize_primal(&problem, 5000, 1.0);
    let scan = scan_dual_alpha(&problem, 2001);

    let dual = dual_objective(&out.dual, &losses, &params).map_err(bad)?;
    let top = losses.max();
    let (kkt, eta_residual) = if top > 0.0 {
        let normalized: Vec<f64> = inst.losses.iter().map(|l| l / top).collect();
        let lambda: Vec<f64> = out.dual.iter().map(|y| y / top).collect();
        let scaled = Problem::new(&normalized, inst.p, inst.m).map_err(oracle_err)?;
        (
            kkt_residual(&lambda, &scaled).map_err(oracle_err)?,
            eta(out.alpha_star / top, &normalized, params.q, params.m).abs(),
        )
    } else {
        (0.0, 0.0)
    };

    Ok(InstanceCheck {
        pooled_loss: out.pooled_loss,
        mean: losses.mean(),
        primal_gap: rel(out.pooled_loss, primal.value),
        dual_scan_gap: rel(out.pooled_loss, scan.value),
        duality_gap: rel(dual, out.pooled_loss),
        kkt_residual: kkt,
        eta_residual,
        support: out.support.len(),
        m: params.m,
        solver_violation: violation(&out.weights, params.p, params.gamma, params.tau),
        oracle_violation: primal.max_constraint_violation,
        oracle_converged: primal.converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub metric: String,
    pub worst: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub instances: usize,
    pub seed: u64,
    pub tolerances: Tolerances,
    pub rows: Vec<AuditRow>,
    pub passed: bool,
}

impl AuditReport {
    pub fn row(&self, metric: &str) -> Option<&AuditRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<26} {:>16} {:>12}  result\n", "metric", "worst", "tolerance");
        for r in &self.rows {
            s += &format!(
                "{:<26} {:>16} {:>12}  {}\n",
                r.metric,
                format::human(r.worst),
                format::human(r.tolerance),
                if r.pass { "PASS" } else { "FAIL" }
            );
        }
        s
    }
}

/// Runs every instance (concurrently when possible) and summarizes the
/// worst case per metric in a fixed order.
pub fn audit(instances: &[Instance], seed: u64, tol: Tolerances, exec: Execution) -> CliResult<AuditReport> {
    let checks = par::map(exec, instances, check_instance)
        .into_iter()
        .collect::<CliResult<Vec<_>>>()?;
    let worst = |f: &dyn Fn(&InstanceCheck) -> f64| checks.iter().map(f).fold(0.0, f64::max);
    let row = |metric: &str, worst: f64, tolerance: f64| AuditRow {
        metric: metric.to_string(),
        worst,
        tolerance,
        pass: worst <= tolerance,
    };
    let below_mean = worst(&|c| (c.mean - c.pooled_loss).max(0.0));
    let support_not_below_m = checks.iter().filter(|c| c.support as f64 >= c.m).count() as f64;
    let unconverged = checks.iter().filter(|c| !c.oracle_converged).count() as f64;
    let rows = vec![
        row("primal_oracle_rel_gap", worst(&|c| c.primal_gap), tol.oracle_gap),
        row("dual_scan_rel_gap", worst(&|c| c.dual_scan_gap), tol.oracle_gap),
        row("duality_rel_gap", worst(&|c| c.duality_gap), tol.duality_gap),
        row("kkt_residual", worst(&|c| c.kkt_residual), tol.kkt),
        row("eta_residual", worst(&|c| c.eta_residual), tol.eta),
        row("solver_constraint_violation", worst(&|c| c.solver_violation), tol.feasibility),
        row("oracle_constraint_violation", worst(&|c| c.oracle_violation), tol.feasibility),
        row("oracle_unconverged", unconverged, 0.0),
        row("below_mean", below_mean, 0.0),
        row("support_not_below_m", support_not_below_m, 0.0),
    ];
    let passed = rows.iter().all(|r| r.pass);
    Ok(AuditReport {
        instances: instances.len(),
        seed,
        tolerances: tol,
        rows,
        passed,
    })
}

#[derive(Debug, Clone, Default)]
pub struct AuditArgs {
    pub instances: usize,
    pub seed: u64,
    pub tolerances: Tolerances,
    pub report: Option<PathBuf>,
    pub sequential: bool,
}

/// Prints the table, optionally writes the JSON report, and returns it.
pub fn run(args: &AuditArgs) -> CliResult<AuditReport> {
    if args.instances == 0 {
        return Err(CliError::params("instances must be at least 1"));
    }
    let t = args.tolerances;
    if [t.oracle_gap, t.duality_gap, t.kkt, t.eta, t.feasibility].iter().any(|v| v.is_nan() || *v < 0.0) {
        return Err(CliError::params("tolerances must be >= 0"));
    }
    let exec = if args.sequential { Execution::Sequential } else { Execution::Parallel };
    let instances = generate_instances(args.instances, args.seed);
    let start = std::time::Instant::now();
    let report = audit(&instances, args.seed, args.tolerances, exec)?;
    log::info!("audited {} instances in {:.2} s", instances.len(), start.elapsed().as_secs_f64());
    print!("{}", report.table());
    println!(
        "{} instances, seed {}: {}",
        report.instances,
        report.seed,
        if report.passed { "PASS" } else { "FAIL" }
    );
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    Ok(report)
}
