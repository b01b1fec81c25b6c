//! Brute-force oracles for loss max-pooling.
//!
//! Nothing here uses the sorted accumulation or the closed-form weights of the
//! solver. [`maximize_primal`] runs projected gradient ascent on `w -> w . l`
//! over `{w : 0 <= w <= tau, ||w||_p <= gamma}` with an exact projection
//! ([`DykstraProjector`] computes the same projection the slow way).
//! [`scan_dual_alpha`] minimizes the dual objective along the one-parameter
//! family `lambda = max(l - alpha, 0)`. Weak duality puts the true optimum
//! between the two values.
//!
//! Only `1 < p < inf` is supported.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum OracleError {
    EmptyLosses,
    InvalidLoss { index: usize, value: f64 },
    UnsupportedP(f64),
    InvalidM { m: f64, n: usize },
    LengthMismatch { expected: usize, got: usize },
}

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleError::EmptyLosses => write!(f, "loss vector is empty"),
            OracleError::InvalidLoss { index, value } => {
                write!(f, "loss {index} is {value}; expected finite and >= 0")
            }
            OracleError::UnsupportedP(p) => write!(f, "oracle needs 1 < p < inf, got {p}"),
            OracleError::InvalidM { m, n } => write!(f, "m = {m} outside [1, {n}]"),
            OracleError::LengthMismatch { expected, got } => {
                write!(f, "expected {expected} entries, got {got}")
            }
        }
    }
}

impl std::error::Error for OracleError {}

/// One instance of the primal problem `max { w . l : ||w||_p <= gamma, 0 <= w <= tau }`.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub losses: Vec<f64>,
    pub p: f64,
    pub q: f64,
    pub m: f64,
    pub gamma: f64,
    pub tau: f64,
}

impl Problem {
    pub fn new(losses: &[f64], p: f64, m: f64) -> Result<Self, OracleError> {
        if losses.is_empty() {
            return Err(OracleError::EmptyLosses);
        }
        if let Some((index, &value)) = losses
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(OracleError::InvalidLoss { index, value });
        }
        if !(p > 1.0 && p.is_finite()) {
            return Err(OracleError::UnsupportedP(p));
        }
        let n = losses.len();
        if !(1.0..=n as f64).contains(&m) {
            return Err(OracleError::InvalidM { m, n });
        }
        let q = p / (p - 1.0);
        // gamma is the p-norm of the uniform weighting; m = (gamma / tau)^p
        let gamma = vec_p_norm(&vec![1.0 / n as f64; n], p);
        let tau = gamma / m.powf(1.0 / p);
        Ok(Self {
            losses: losses.to_vec(),
            p,
            q,
            m,
            gamma,
            tau,
        })
    }

    pub fn n(&self) -> usize {
        self.losses.len()
    }

    /// Largest amount by which `w` leaves the feasible set.
    pub fn constraint_violation(&self, w: &[f64]) -> f64 {
        let box_violation = w
            .iter()
            .map(|&x| (-x).max(x - self.tau).max(0.0))
            .fold(0.0, f64::max);
        let ball_violation = (vec_p_norm(w, self.p) - self.gamma).max(0.0);
        box_violation.max(ball_violation)
    }

    /// `g(lambda) = tau * sum(lambda) + gamma * ||l - lambda||_q`.
    pub fn dual_value(&self, lambda: &[f64]) -> f64 {
        let residual: Vec<f64> = self.losses.iter().zip(lambda).map(|(l, y)| l - y).collect();
        self.tau * lambda.iter().sum::<f64>() + self.gamma * vec_p_norm(&residual, self.q)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub value: f64,
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub max_constraint_violation: f64,
}

/// Feasibility slack accepted for a point to count as "feasible".
pub const FEASIBILITY_TOL: f64 = 1e-8;

/// Projected gradient ascent on the linear objective `w . l`.
///
/// Each step moves along `l / max(l)` by `step` and projects back onto the
/// feasible set. Stops once an iteration moves the weights by at most
/// `1e-12 * tau` in the max-norm, or after `iters` steps.
pub fn maximize_primal(problem: &Problem, iters: usize, step: f64) -> OracleReport {
    let n = problem.n();
    let scale = problem.losses.iter().copied().fold(0.0, f64::max);
    let mut w = vec![1.0 / n as f64; n];
    if scale == 0.0 {
        return OracleReport {
            value: 0.0,
            max_constraint_violation: problem.constraint_violation(&w),
            weights: w,
            iterations: 0,
            converged: true,
        };
    }
    let direction: Vec<f64> = problem.losses.iter().map(|l| l / scale).collect();
    let mut projector = BoxBallProjector::new(problem.tau, problem.p, problem.gamma);

    let mut best = (dot(&w, &problem.losses), w.clone());
    let mut converged = false;
    let mut iterations = 0;
    for k in 1..=iters {
        iterations = k;
        let shifted: Vec<f64> = w.iter().zip(&direction).map(|(x, d)| x + step * d).collect();
        let next = projector.project(&shifted);
        let movement = next
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        w = next;
        if problem.constraint_violation(&w) <= FEASIBILITY_TOL {
            let value = dot(&w, &problem.losses);
            if value > best.0 {
                best = (value, w.clone());
            }
        }
        if movement <= 1e-12 * problem.tau {
            converged = true;
            break;
        }
    }
    let (value, weights) = best;
    let max_constraint_violation = problem.constraint_violation(&weights);
    OracleReport {
        value,
        weights,
        iterations,
        converged: converged && max_constraint_violation <= FEASIBILITY_TOL,
        max_constraint_violation,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualScan {
    /// Threshold `m^(-1/q) ||l - lambda||_q` of the minimizing `lambda`.
    pub alpha: f64,
    pub value: f64,
}

/// Minimizes `g(max(l - alpha, 0))` over `alpha in [0, max l]` with a dense
/// grid followed by golden-section refinement around the best grid cell.
///
/// For `alpha >= max l` the objective is constant (`lambda = 0`), so the
/// scanned interval covers every distinct value.
pub fn scan_dual_alpha(problem: &Problem, grid_size: usize) -> DualScan {
    let top = problem.losses.iter().copied().fold(0.0, f64::max);
    let objective = |alpha: f64| problem.dual_value(&shrink(&problem.losses, alpha));
    if top == 0.0 {
        return DualScan {
            alpha: 0.0,
            value: 0.0,
        };
    }
    let grid_size = grid_size.max(2);
    let h = top / (grid_size - 1) as f64;
    let mut best_k = 0;
    let mut best_v = f64::INFINITY;
    for k in 0..grid_size {
        let v = objective(k as f64 * h);
        if v < best_v {
            best_v = v;
            best_k = k;
        }
    }
    let lo = best_k.saturating_sub(1) as f64 * h;
    let hi = ((best_k + 1).min(grid_size - 1) as f64 * h).min(top);
    let (mut alpha, mut value) = golden_section(objective, lo, hi, 1e-15 * top);
    if best_v < value {
        alpha = best_k as f64 * h;
        value = best_v;
    }
    let lambda = shrink(&problem.losses, alpha);
    let residual: Vec<f64> = problem.losses.iter().zip(&lambda).map(|(l, y)| l - y).collect();
    DualScan {
        alpha: vec_p_norm(&residual, problem.q) / problem.m.powf(1.0 / problem.q),
        value,
    }
}

/// Sup-norm residual of the fixed point
/// `lambda = max(l - m^(-1/q) ||l - lambda||_q, 0)`.
pub fn kkt_residual(lambda: &[f64], problem: &Problem) -> Result<f64, OracleError> {
    if lambda.len() != problem.n() {
        return Err(OracleError::LengthMismatch {
            expected: problem.n(),
            got: lambda.len(),
        });
    }
    let residual: Vec<f64> = problem.losses.iter().zip(lambda).map(|(l, y)| l - y).collect();
    let threshold = vec_p_norm(&residual, problem.q) / problem.m.powf(1.0 / problem.q);
    Ok(problem
        .losses
        .iter()
        .zip(lambda)
        .map(|(l, y)| (y - (l - threshold).max(0.0)).abs())
        .fold(0.0, f64::max))
}

pub fn check_kkt(lambda: &[f64], problem: &Problem, tol: f64) -> bool {
    kkt_residual(lambda, problem).is_ok_and(|r| r <= tol)
}

fn shrink(losses: &[f64], alpha: f64) -> Vec<f64> {
    losses.iter().map(|l| (l - alpha).max(0.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `||v||_p` with max-scaling.
pub fn vec_p_norm(v: &[f64], p: f64) -> f64 {
    let scale = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    if p.is_infinite() {
        return scale;
    }
    scale * v.iter().map(|x| (x.abs() / scale).powf(p)).sum::<f64>().powf(1.0 / p)
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Euclidean projection onto `{x : 0 <= x <= tau} ∩ {x : ||x||_p <= radius}`.
///
/// Given the ball multiplier `c`, coordinate `i` minimizes
/// `(x - v_i)^2 / 2 + c x^p / p` over `[0, tau]`, which is the shrinkage root
/// clipped to the box, so a single bisection on `c` gives the exact
/// projection.
#[derive(Debug, Clone)]
pub struct BoxBallProjector {
    pub tau: f64,
    search: MultiplierSearch,
}

impl BoxBallProjector {
    pub fn new(tau: f64, p: f64, radius: f64) -> Self {
        Self {
            tau,
            search: MultiplierSearch::new(p, radius),
        }
    }

    pub fn project(&mut self, v: &[f64]) -> Vec<f64> {
        let a: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
        let tau = self.tau;
        self.search.project(&a, |ai, c, p| solve_shrinkage(ai, c, p).min(tau))
    }
}

/// The same projection as [`BoxBallProjector`] by Dykstra's alternating
/// scheme, built only from the box clip and [`BallProjector`]. Much slower;
/// kept as a cross-check.
#[derive(Debug, Clone)]
pub struct DykstraProjector {
    pub tau: f64,
    /// Movement threshold that ends the alternation.
    pub tolerance: f64,
    pub max_sweeps: usize,
    ball: BallProjector,
}

impl DykstraProjector {
    pub fn new(tau: f64, p: f64, radius: f64) -> Self {
        Self {
            tau,
            tolerance: 1e-12 * tau,
            max_sweeps: 100_000,
            ball: BallProjector::new(p, radius),
        }
    }

    pub fn project(&mut self, v: &[f64]) -> Vec<f64> {
        let n = v.len();
        let mut x = v.to_vec();
        let mut box_inc = vec![0.0; n];
        let mut ball_inc = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut z = vec![0.0; n];
        for _ in 0..self.max_sweeps {
            for i in 0..n {
                y[i] = (x[i] + box_inc[i]).clamp(0.0, self.tau);
                box_inc[i] += x[i] - y[i];
            }
            for i in 0..n {
                z[i] = y[i] + ball_inc[i];
            }
            let next = self.ball.project(&z);
            let mut movement = 0.0f64;
            for i in 0..n {
                ball_inc[i] = z[i] - next[i];
                movement = movement.max((next[i] - x[i]).abs());
            }
            x = next;
            let box_gap = x
                .iter()
                .map(|&t| (-t).max(t - self.tau).max(0.0))
                .fold(0.0, f64::max);
            if movement <= self.tolerance && box_gap <= self.tolerance {
                break;
            }
        }
        // clipping a non-negative point into the box never increases its p-norm
        x.iter().map(|t| t.clamp(0.0, self.tau)).collect()
    }
}

/// Projection onto the p-norm ball of a given radius, `1 < p < inf`.
///
/// Stationarity gives `x_i + c * x_i^(p-1) = |v_i|` for a multiplier `c >= 0`.
/// Each coordinate equation is solved by safeguarded Newton, and `c` is found
/// by bisection in log space down to a relative bracket width of 1e-15.
#[derive(Debug, Clone)]
pub struct BallProjector {
    search: MultiplierSearch,
}

impl BallProjector {
    pub fn new(p: f64, radius: f64) -> Self {
        Self {
            search: MultiplierSearch::new(p, radius),
        }
    }

    pub fn project(&mut self, v: &[f64]) -> Vec<f64> {
        let a: Vec<f64> = v.iter().map(|x| x.abs()).collect();
        self.search
            .project(&a, solve_shrinkage)
            .into_iter()
            .zip(v)
            .map(|(x, s)| x.copysign(*s))
            .collect()
    }
}

/// Bisection on the ball multiplier, warm-started from the previous call.
#[derive(Debug, Clone)]
struct MultiplierSearch {
    p: f64,
    radius: f64,
    last_multiplier: Option<f64>,
}

impl MultiplierSearch {
    fn new(p: f64, radius: f64) -> Self {
        Self {
            p,
            radius,
            last_multiplier: None,
        }
    }

    /// `coord(a_i, c, p)` must be non-increasing in `c` and bounded by the
    /// unclipped shrinkage root.
    fn project(&mut self, a: &[f64], coord: impl Fn(f64, f64, f64) -> f64) -> Vec<f64> {
        let p = self.p;
        let solve = |c: f64| a.iter().map(|&ai| coord(ai, c, p)).collect::<Vec<f64>>();
        let free = solve(0.0);
        if vec_p_norm(&free, p) <= self.radius {
            return free;
        }
        let excess = |c: f64| vec_p_norm(&solve(c), p) - self.radius;

        // x_i <= (a_i / c)^(1/(p-1)) yields a multiplier that is surely large enough
        let root_norm = vec_p_norm(
            &a.iter().map(|x| x.powf(1.0 / (p - 1.0))).collect::<Vec<_>>(),
            p,
        );
        let upper = (root_norm / self.radius).powf(p - 1.0);
        let (mut lo, mut hi) = match self.last_multiplier {
            Some(c) if c > 0.0 => {
                let (mut lo, mut hi) = (c, c);
                while excess(lo) < 0.0 && lo > 1e-300 {
                    lo *= 0.5;
                }
                while excess(hi) > 0.0 && hi < upper {
                    hi *= 2.0;
                }
                (lo, hi.min(upper))
            }
            _ => (upper * 1e-30, upper),
        };
        if excess(lo) < 0.0 {
            lo = 0.0;
        }
        for _ in 0..400 {
            let mid = if lo > 0.0 {
                (lo * hi).sqrt()
            } else {
                0.5 * hi
            };
            if hi - lo <= 1e-15 * hi {
                break;
            }
            if excess(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let c = hi;
        self.last_multiplier = Some(c);
        // the upper end keeps the result inside the ball
        solve(c)
    }
}

/// Root of `x + c x^(p-1) = a` on `[0, a]`.
fn solve_shrinkage(a: f64, c: f64, p: f64) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    if c == 0.0 {
        return a;
    }
    let f = |x: f64| x + c * x.powf(p - 1.0) - a;
    let (mut lo, mut hi) = (0.0, a);
    let mut x = a.min((a / c).powf(1.0 / (p - 1.0)));
    for _ in 0..200 {
        let fx = f(x);
        if fx == 0.0 {
            return x;
        }
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let slope = 1.0 + c * (p - 1.0) * x.powf(p - 2.0);
        let mut next = x - fx / slope;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-16 * a.max(x) || hi - lo <= 1e-16 * a {
            return next;
        }
        x = next;
    }
    x
}
