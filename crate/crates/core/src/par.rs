//! Data-parallel map helpers.
//!
//! With the `parallel` feature (on by default) [`Execution::Parallel`] spreads
//! work over the rayon pool; without it every call runs sequentially. Results
//! always come back in input order, so any fold done by the caller is
//! deterministic regardless of scheduling.

use crate::config::PoolingConfig;
use crate::error::Result;
use crate::losses::LossVector;
use crate::solver::{solve_pool, SolveOutcome};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether parallel execution is compiled in.
    pub const fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

pub fn map_range<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Solves every crop's loss vector independently.
pub fn solve_batch(
    exec: Execution,
    crops: &[LossVector],
    config: &PoolingConfig,
) -> Vec<Result<SolveOutcome>> {
    map(exec, crops, |l| solve_pool(l, config))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_agree_in_order() {
        let seq = map_range(Execution::Sequential, 100, |i| i * i);
        let par = map_range(Execution::Parallel, 100, |i| i * i);
        assert_eq!(seq, par);
        assert_eq!(seq[7], 49);
    }

    #[test]
    fn batch_matches_single_solves() {
        let crops: Vec<LossVector> = (1..20)
            .map(|k| LossVector::new((0..k).map(|i| (i * 7 % 5) as f64 + 0.5).collect()).unwrap())
            .collect();
        let cfg = PoolingConfig::fraction(1.3, 0.25).unwrap();
        let a = solve_batch(Execution::Parallel, &crops, &cfg);
        let b = solve_batch(Execution::Sequential, &crops, &cfg);
        for (x, y) in a.into_iter().zip(b) {
            assert_eq!(x.unwrap(), y.unwrap());
        }
    }
}
