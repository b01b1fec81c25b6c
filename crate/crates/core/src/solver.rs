//! Closed-form loss max-pooling.
//!
//! Given pixel losses `l` and a weight space `W = {w : ||w||_p <= gamma,
//! ||w||_inf <= tau}`, computes `L_W = max { w . l : w in W }` together with
//! the maximizing weights `w*`, the threshold `alpha*`, the set `J*` of pixels
//! whose weight is capped at `tau`, and the dual variable
//! `lambda* = max(l - alpha*, 0)` of the cap constraint.
//!
//! For `p > 1` the losses are walked in ascending order while accumulating
//! `a_i = sum_{j <= i} l(pi_j)^q` and `c_i = m - n + i`; the walk stops at the
//! first `i` with `eta_i = c_i * l(pi_i)^q - a_i > 0`, after which
//! `J* = {pi_i, .., pi_n}` and `alpha* = (a_{i-1} / c_{i-1})^(1/q)`. For
//! `p = 1` the set `J*` holds the `floor(m)` largest losses and `alpha*` is the
//! largest remaining loss.
//!
//! All entry points normalize by the largest loss before solving so that
//! `l^q` stays representable when `q` is large.

use log::{debug, warn};

use crate::config::{derive_parameters, MSpec, PoolingConfig, PoolingParams};
use crate::error::{Error, Result};
use crate::losses::LossVector;
use crate::sum::NeumaierSum;

/// Dual exponents above this are solved with the `p = 1` construction.
pub const Q_CAP: f64 = 1e4;

/// Below `1 + NEAR_ONE_MARGIN` the exponent `q` exceeds about a thousand and a
/// warning is emitted.
pub const NEAR_ONE_MARGIN: f64 = 1e-3;

/// Result of one loss max-pooling evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub alpha_star: f64,
    /// Indices of `J*` (weights capped at `tau`), ascending.
    pub support: Vec<usize>,
    pub pooled_loss: f64,
    pub weights: Vec<f64>,
    pub dual: Vec<f64>,
    /// Parameters the instance was solved with.
    pub params: PoolingParams,
}

impl SolveOutcome {
    fn zeros(params: PoolingParams) -> Self {
        let n = params.n;
        Self {
            alpha_star: 0.0,
            support: Vec::new(),
            pooled_loss: 0.0,
            weights: vec![0.0; n],
            dual: vec![0.0; n],
            params,
        }
    }
}

/// `eta(alpha) = (m - |J_alpha|) alpha^q - sum_{u not in J_alpha} l(u)^q`
/// with `J_alpha = {u : l(u) > alpha}`.
///
/// The largest root of `eta` is the dual threshold `alpha*`.
pub fn eta(alpha: f64, losses: &[f64], q: f64, m: f64) -> f64 {
    let mut above = 0usize;
    let mut below = NeumaierSum::new();
    for &l in losses {
        if l > alpha {
            above += 1;
        } else {
            below.add(l.powf(q));
        }
    }
    (m - above as f64) * alpha.powf(q) - below.value()
}

/// Solves loss max-pooling for `losses` under `config`, resolving `m` against
/// the number of losses.
pub fn solve_pool(losses: &LossVector, config: &PoolingConfig) -> Result<SolveOutcome> {
    normalize_then_solve(losses, config)
}

/// Solves with parameters that were resolved beforehand; `params.n` must equal
/// the number of losses.
pub fn solve_with_params(losses: &LossVector, params: &PoolingParams) -> Result<SolveOutcome> {
    if params.n != losses.len() {
        return Err(Error::LengthMismatch {
            what: "losses vs. resolved parameters",
            expected: params.n,
            got: losses.len(),
        });
    }
    let scale = losses.max();
    if scale == 0.0 {
        return Ok(SolveOutcome::zeros(*params));
    }
    let normalized: Vec<f64> = losses.iter().map(|&l| l / scale).collect();
    let core = solve_normalized(&normalized, params)?;
    let dual = losses
        .iter()
        .map(|&l| (l - core.alpha * scale).max(0.0))
        .collect();
    // with the full budget the optimum is the uniform weighting, whose value
    // is the mean; taking it directly avoids rounding below it
    let pooled_loss = if core.params.m == params.n as f64 {
        losses.mean()
    } else {
        core.pooled * scale
    };
    Ok(SolveOutcome {
        alpha_star: core.alpha * scale,
        support: core.support,
        pooled_loss,
        weights: core.weights,
        dual,
        params: core.params,
    })
}

/// Divides the losses by their maximum, solves, and rescales the pooled loss,
/// `alpha*` and `lambda*`. The weights are scale-invariant and returned as is.
/// All-zero losses short-circuit to the all-zero outcome.
pub fn normalize_then_solve(losses: &LossVector, config: &PoolingConfig) -> Result<SolveOutcome> {
    let params = config.resolve(losses.len())?;
    solve_with_params(losses, &params)
}

/// Uniform average pooling, the `p = inf` limit of the weight space.
pub fn uniform_pool(losses: &LossVector) -> SolveOutcome {
    let n = losses.len();
    let params = PoolingParams {
        n,
        p: f64::INFINITY,
        q: 1.0,
        gamma: 1.0 / n as f64,
        tau: 1.0 / n as f64,
        m: n as f64,
    };
    let mean = losses.mean();
    SolveOutcome {
        alpha_star: 0.0,
        support: (0..n).collect(),
        pooled_loss: mean,
        weights: vec![params.tau; n],
        dual: losses.to_vec(),
        params,
    }
}

/// Dual objective `g(lambda) = tau * sum(lambda) + gamma * ||l - lambda||_q`.
///
/// Any non-negative `lambda` gives an upper bound on the pooled loss; the
/// bound is tight at `lambda*`. For `p = 1` the norm is the max-norm.
pub fn dual_objective(lambda: &[f64], losses: &LossVector, params: &PoolingParams) -> Result<f64> {
    if lambda.len() != losses.len() {
        return Err(Error::LengthMismatch {
            what: "dual variable",
            expected: losses.len(),
            got: lambda.len(),
        });
    }
    if let Some((index, &value)) = lambda.iter().enumerate().find(|(_, v)| v.is_nan() || **v < 0.0) {
        return Err(Error::NegativeDual { index, value });
    }
    let linear = params.tau * NeumaierSum::sum_of(lambda.iter().copied());
    let residual: Vec<f64> = losses.iter().zip(lambda).map(|(l, y)| l - y).collect();
    Ok(linear + params.gamma * q_norm(&residual, params.q))
}

/// The pooled loss is differentiable in the losses wherever `J*` is locally
/// constant, with gradient `w*`. The same vector is used at the remaining
/// points.
pub fn gradient_wrt_losses(outcome: &SolveOutcome) -> Vec<f64> {
    outcome.weights.clone()
}

/// `||v||_q` evaluated with max-scaling so large `q` does not overflow.
pub fn q_norm(v: &[f64], q: f64) -> f64 {
    let scale = v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    if q.is_infinite() {
        return scale;
    }
    let s = NeumaierSum::sum_of(v.iter().map(|x| (x.abs() / scale).powf(q)));
    scale * s.powf(1.0 / q)
}

struct CoreSolution {
    alpha: f64,
    support: Vec<usize>,
    weights: Vec<f64>,
    pooled: f64,
    params: PoolingParams,
}

/// Solves on losses whose maximum is one.
fn solve_normalized(x: &[f64], params: &PoolingParams) -> Result<CoreSolution> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    // stable: ties keep their original index order
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));

    if params.p == 1.0 {
        return Ok(solve_top_k(x, &order, params));
    }
    if params.q > Q_CAP {
        debug!("q = {} exceeds {Q_CAP}, using the p = 1 construction", params.q);
        let p1 = derive_parameters(1.0, MSpec::Absolute(params.m), n)?;
        return Ok(solve_top_k(x, &order, &p1));
    }
    if params.p < 1.0 + NEAR_ONE_MARGIN {
        warn!(
            "p = {} is close to 1 (q = {:.1}); relying on normalized losses and compensated sums",
            params.p, params.q
        );
    }
    Ok(solve_smooth(x, &order, params))
}

fn solve_smooth(x: &[f64], order: &[usize], params: &PoolingParams) -> CoreSolution {
    let n = order.len();
    let (q, m, tau) = (params.q, params.m, params.tau);

    let mut acc = NeumaierSum::new();
    let mut prev_a = 0.0;
    let mut prev_c = m - n as f64;
    let mut split = None;
    for (i, &u) in order.iter().enumerate() {
        let lq = x[u].powf(q);
        prev_a = acc.value();
        prev_c = m - (n - i) as f64;
        acc.add(lq);
        let c = m - (n - i - 1) as f64;
        let eta_i = c * lq - acc.value();
        if eta_i > 0.0 {
            split = Some(i);
            break;
        }
    }

    let (alpha, support_start) = match split {
        Some(i) => {
            // |J*| < m guarantees prev_c > 0
            let alpha = if prev_c > 0.0 {
                (prev_a / prev_c).powf(1.0 / q)
            } else {
                0.0
            };
            (alpha, i)
        }
        // the walk ran through: J* is empty and c_n = m
        None => ((acc.value() / m).powf(1.0 / q), n),
    };

    let mut support: Vec<usize> = order[support_start..].to_vec();
    support.sort_unstable();

    let mut weights = vec![0.0; n];
    for &u in &order[..support_start] {
        if alpha > 0.0 {
            weights[u] = (tau * (x[u] / alpha).powf(q - 1.0)).min(tau);
        }
    }
    for &u in &support {
        weights[u] = tau;
    }

    let capped = NeumaierSum::sum_of(support.iter().map(|&u| x[u]));
    let pooled = tau * (capped + (m - support.len() as f64) * alpha);
    CoreSolution {
        alpha,
        support,
        weights,
        pooled,
        params: *params,
    }
}

/// `p = 1`: `J*` holds the `floor(m)` largest losses; the residual mass
/// `tau * (m - floor(m))` is spread uniformly over the remaining pixels whose
/// loss equals `alpha*`.
fn solve_top_k(x: &[f64], order: &[usize], params: &PoolingParams) -> CoreSolution {
    let n = order.len();
    let (m, tau) = (params.m, params.tau);
    let k = (m.floor() as usize).min(n);
    let start = n - k;
    let alpha = if start >= 1 { x[order[start - 1]] } else { 0.0 };

    let mut support: Vec<usize> = order[start..].to_vec();
    support.sort_unstable();

    let mut weights = vec![0.0; n];
    for &u in &support {
        weights[u] = tau;
    }
    let residual = m - k as f64;
    if alpha > 0.0 && residual > 0.0 {
        let ties: Vec<usize> = order[..start]
            .iter()
            .copied()
            .filter(|&u| x[u] == alpha)
            .collect();
        let share = tau * residual / ties.len() as f64;
        for u in ties {
            weights[u] = share;
        }
    }

    let capped = NeumaierSum::sum_of(support.iter().map(|&u| x[u]));
    let pooled = tau * (capped + residual * alpha);
    CoreSolution {
        alpha,
        support,
        weights,
        pooled,
        params: *params,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(v: &[f64]) -> LossVector {
        LossVector::new(v.to_vec()).unwrap()
    }

    fn solve(v: &[f64], p: f64, m: f64) -> SolveOutcome {
        solve_pool(&lv(v), &PoolingConfig::absolute(p, m).unwrap()).unwrap()
    }

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!(
            (a - b).abs() <= tol * b.abs().max(1.0),
            "{a} vs {b} (tol {tol})"
        );
    }

    #[test]
    fn full_budget_never_rounds_below_the_mean() {
        let v = [0.1, 0.7, 0.3, 0.9, 0.2, 0.6, 0.35];
        for p in [1.0, 1.1, 1.7, 2.0, 4.0, f64::INFINITY] {
            let out = solve(&v, p, v.len() as f64);
            assert_eq!(out.pooled_loss, lv(&v).mean(), "p={p}");
            assert_eq!(out.params.tau, 1.0 / v.len() as f64, "p={p}");
        }
    }

    #[test]
    fn eta_examples() {
        assert_eq!(eta(0.0, &[1.0, 2.0, 0.5], 2.0, 2.0), 0.0);
        assert_close(eta(3.0, &[1.0, 3.0], 2.0, 1.0), -1.0, 1e-15);
        assert_close(eta(10f64.sqrt(), &[1.0, 3.0], 2.0, 1.0), 0.0, 1e-14);
    }

    #[test]
    fn uniform_when_m_equals_n() {
        let o = solve(&[2.0, 4.0], 2.0, 2.0);
        assert_close(o.pooled_loss, 3.0, 1e-15);
        assert_close(o.weights[0], 0.5, 1e-15);
        assert_close(o.weights[1], 0.5, 1e-15);
    }

    #[test]
    fn two_pixels_p2_m1() {
        let o = solve(&[3.0, 1.0], 2.0, 1.0);
        assert_close(o.alpha_star, 3.162_277_660_168_379, 1e-14);
        assert!(o.support.is_empty());
        assert_close(o.pooled_loss, 2.236_067_977_499_79, 1e-14);
        assert_close(o.weights[0], 0.670_820_393_249_936_9, 1e-14);
        assert_close(o.weights[1], 0.223_606_797_749_979, 1e-14);
        assert_eq!(o.dual, vec![0.0, 0.0]);
    }

    #[test]
    fn p1_top_two() {
        let o = solve(&[4.0, 2.0, 1.0, 1.0], 1.0, 2.0);
        assert_eq!(o.support, vec![0, 1]);
        assert_eq!(o.alpha_star, 1.0);
        assert_eq!(o.params.tau, 0.5);
        assert_eq!(o.pooled_loss, 3.0);
        assert_eq!(o.weights, vec![0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn p1_fractional_m_spreads_over_ties() {
        let o = solve(&[4.0, 2.0, 1.0, 1.0], 1.0, 2.5);
        assert_eq!(o.support, vec![0, 1]);
        let tau = 1.0 / 2.5;
        assert_close(o.weights[2], tau * 0.25, 1e-15);
        assert_close(o.weights[3], tau * 0.25, 1e-15);
        assert_close(o.pooled_loss, tau * (6.0 + 0.5), 1e-15);
        assert_close(o.weights.iter().sum::<f64>(), 1.0, 1e-15);
    }

    #[test]
    fn p1_whole_set_has_zero_alpha() {
        let o = solve(&[4.0, 2.0, 1.0], 1.0, 3.0);
        assert_eq!(o.alpha_star, 0.0);
        assert_eq!(o.support, vec![0, 1, 2]);
        assert_close(o.pooled_loss, 7.0 / 3.0, 1e-15);
    }

    #[test]
    fn equal_losses_collapse_to_value() {
        for &p in &[1.1, 1.5, 2.0, 3.0, 8.0] {
            for &m in &[1.0, 2.5, 4.0, 7.0] {
                let o = solve(&[0.7; 7], p, m);
                assert_close(o.pooled_loss, 0.7, 1e-12);
            }
        }
    }

    #[test]
    fn all_zero_losses() {
        let o = solve(&[0.0, 0.0, 0.0], 1.7, 2.0);
        assert_eq!(o.pooled_loss, 0.0);
        assert_eq!(o.alpha_star, 0.0);
        assert!(o.support.is_empty());
        assert_eq!(o.weights, vec![0.0; 3]);
    }

    #[test]
    fn single_pixel() {
        for &p in &[1.0, 1.3, 2.0, f64::INFINITY] {
            let o = solve(&[0.42], p, 1.0);
            assert_close(o.pooled_loss, 0.42, 1e-15);
        }
    }

    #[test]
    fn dual_objective_examples() {
        let l = lv(&[3.0, 1.0]);
        let params = PoolingConfig::absolute(2.0, 1.0).unwrap().resolve(2).unwrap();
        let at_zero = dual_objective(&[0.0, 0.0], &l, &params).unwrap();
        assert_close(at_zero, 2.236_067_977_499_79, 1e-14);
        let at_l = dual_objective(&[3.0, 1.0], &l, &params).unwrap();
        assert_close(at_l, 2.828_427_124_746_190_3, 1e-14);
        let o = solve_pool(&l, &PoolingConfig::absolute(2.0, 1.0).unwrap()).unwrap();
        let at_opt = dual_objective(&o.dual, &l, &params).unwrap();
        assert_close(at_opt, o.pooled_loss, 1e-12);
        assert!(matches!(
            dual_objective(&[-1.0, 0.0], &l, &params),
            Err(Error::NegativeDual { index: 0, .. })
        ));
        assert!(dual_objective(&[0.0], &l, &params).is_err());
    }

    #[test]
    fn dual_objective_p1_is_tight() {
        let l = lv(&[4.0, 2.0, 1.0, 1.0]);
        let cfg = PoolingConfig::absolute(1.0, 2.5).unwrap();
        let o = solve_pool(&l, &cfg).unwrap();
        let g = dual_objective(&o.dual, &l, &o.params).unwrap();
        assert_close(g, o.pooled_loss, 1e-14);
    }

    #[test]
    fn homogeneity_exact_for_powers_of_two() {
        let a = solve(&[3.0, 1.0], 2.0, 1.0);
        let b = solve(&[6.0, 2.0], 2.0, 1.0);
        assert_eq!(b.pooled_loss, 2.0 * a.pooled_loss);
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn large_q_with_huge_losses() {
        let small = solve(&[3.0, 1.0], 1.05, 1.0);
        let big = solve(&[3e8, 1e8], 1.05, 1.0);
        assert_close(big.pooled_loss / 1e8, small.pooled_loss, 1e-9);
        assert!(big.pooled_loss.is_finite());
    }

    #[test]
    fn extreme_q_uses_top_k() {
        let o = solve(&[5.0, 1.0, 3.0], 1.0 + 1e-6, 1.0);
        assert_eq!(o.support, vec![0]);
        assert_close(o.pooled_loss, 5.0, 1e-12);
    }

    #[test]
    fn max_norm_limit_is_mean() {
        let l = lv(&[5.0, 1.0, 3.0, 0.0]);
        for &m in &[1.0, 2.0, 4.0] {
            let o = solve_pool(&l, &PoolingConfig::absolute(f64::INFINITY, m).unwrap()).unwrap();
            assert_close(o.pooled_loss, 2.25, 1e-15);
        }
        assert_close(uniform_pool(&l).pooled_loss, 2.25, 1e-15);
    }

    #[test]
    fn params_length_must_match() {
        let params = PoolingConfig::absolute(2.0, 1.0).unwrap().resolve(3).unwrap();
        assert!(matches!(
            solve_with_params(&lv(&[1.0, 2.0]), &params),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn q_norm_handles_large_exponents() {
        assert_close(q_norm(&[3.0, 4.0], 2.0), 5.0, 1e-15);
        assert_close(q_norm(&[1e300, 1e300], 2.0), 2f64.sqrt() * 1e300, 1e-15);
        assert_eq!(q_norm(&[-2.0, 1.0], f64::INFINITY), 2.0);
    }
}
