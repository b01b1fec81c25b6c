//! Optimal weights as a function of loss rank over a grid of `(p, m)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::config::{format_p, MSpec, PoolingConfig};
use crate::error::{Error, Result};
use crate::losses::LossVector;
use crate::solver::solve_pool;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossDistribution {
    /// `U(0, 1]`.
    Uniform,
    /// `Exp(1)`.
    #[default]
    Exponential,
    /// `exp(N(0, 1))`.
    LogNormal,
}

impl std::str::FromStr for LossDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "exponential" | "exp" => Ok(Self::Exponential),
            "lognormal" => Ok(Self::LogNormal),
            other => Err(Error::invalid(
                "distribution",
                format!("unknown distribution {other:?}; expected uniform, exponential or lognormal"),
            )),
        }
    }
}

/// `n` strictly positive losses, sorted ascending.
pub fn synthetic_losses(n: usize, distribution: LossDistribution, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::EmptyLosses);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut losses: Vec<f64> = match distribution {
        LossDistribution::Uniform => {
            let d = Uniform::new(0.0, 1.0).expect("valid range");
            (0..n).map(|_| 1.0 - d.sample(&mut rng)).collect()
        }
        LossDistribution::Exponential => {
            let d = Exp::new(1.0).expect("valid rate");
            (0..n).map(|_| d.sample(&mut rng)).collect()
        }
        LossDistribution::LogNormal => {
            let d = LogNormal::new(0.0, 1.0).expect("valid parameters");
            (0..n).map(|_| d.sample(&mut rng)).collect()
        }
    };
    losses.sort_by(f64::total_cmp);
    Ok(losses)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveColumn {
    pub p: f64,
    pub m: MSpec,
    /// Weights aligned with [`WeightCurves::losses`].
    pub weights: Vec<f64>,
}

impl CurveColumn {
    pub fn label(&self) -> String {
        let short = |x: f64| {
            let s = format!("{x:.4}");
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        };
        let m = match self.m {
            MSpec::Absolute(a) => short(a),
            MSpec::Fraction(f) => format!("{}%", short(f * 100.0)),
        };
        format!("w_p={}_m={m}", format_p(self.p))
    }

    /// Number of strictly positive weights.
    pub fn support(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }

    /// `max_i |w_i - 1/n|`.
    pub fn distance_to_uniform(&self) -> f64 {
        let u = 1.0 / self.weights.len() as f64;
        self.weights.iter().map(|w| (w - u).abs()).fold(0.0, f64::max)
    }

    /// Whether the weights never decrease along ascending losses.
    pub fn is_monotone(&self) -> bool {
        self.weights.windows(2).all(|w| w[0] <= w[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightCurves {
    /// Ascending.
    pub losses: Vec<f64>,
    pub columns: Vec<CurveColumn>,
}

/// Solves the pooling problem once per grid entry; `losses` are sorted
/// ascending first.
pub fn weight_curves(losses: &[f64], grid: &[(f64, MSpec)]) -> Result<WeightCurves> {
    if grid.is_empty() {
        return Err(Error::invalid("grid", "no (p, m) pairs given"));
    }
    let mut sorted = losses.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lv = LossVector::new(sorted.clone())?;
    let columns = grid
        .iter()
        .map(|&(p, m)| {
            let out = solve_pool(&lv, &PoolingConfig::new(p, m)?)?;
            Ok(CurveColumn {
                p,
                m,
                weights: out.weights,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WeightCurves {
        losses: sorted,
        columns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn losses_are_sorted_positive_and_seeded() {
        for d in [LossDistribution::Uniform, LossDistribution::Exponential, LossDistribution::LogNormal] {
            let a = synthetic_losses(200, d, 5).unwrap();
            assert!(a.windows(2).all(|w| w[0] <= w[1]));
            assert!(a.iter().all(|&l| l > 0.0));
            assert_eq!(a, synthetic_losses(200, d, 5).unwrap());
        }
        assert!(synthetic_losses(0, LossDistribution::Uniform, 0).is_err());
    }

    #[test]
    fn full_budget_is_flat() {
        let losses = synthetic_losses(100, LossDistribution::Exponential, 1).unwrap();
        let c = weight_curves(&losses, &[(1.7, MSpec::Fraction(1.0))]).unwrap();
        let col = &c.columns[0];
        assert!(col.distance_to_uniform() < 1e-15);
        assert_eq!(col.label(), "w_p=1.7_m=100%");
        let third = CurveColumn { p: f64::INFINITY, m: MSpec::Fraction(1.0 / 3.0), weights: vec![] };
        assert_eq!(third.label(), "w_p=inf_m=33.3333%");
    }

    #[test]
    fn columns_are_monotone_with_large_support() {
        let losses = synthetic_losses(100, LossDistribution::Exponential, 2).unwrap();
        let m = MSpec::Absolute(100.0 / 3.0);
        let grid: Vec<_> = [1.0, 1.2, 1.4, 1.7, 2.0, 3.0, 4.0, 10.0, f64::INFINITY]
            .iter()
            .map(|&p| (p, m))
            .collect();
        let c = weight_curves(&losses, &grid).unwrap();
        for col in &c.columns {
            assert!(col.is_monotone(), "{}", col.label());
            assert!(col.support() >= 34, "{}: {}", col.label(), col.support());
        }
        assert!(weight_curves(&losses, &[]).is_err());
    }
}
