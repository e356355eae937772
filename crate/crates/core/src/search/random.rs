//! Uniform random sampling control.

use rand::Rng;

use super::SearchError;
use crate::fingerprint::Fingerprint;
use crate::metrics::{MetricsOptions, RunResult, StopReason};
use crate::oracle::{BudgetedOracle, OracleError};

/// Consecutive repeated draws tolerated before giving up on a tiny space.
pub const MAX_IDLE_DRAWS: usize = 10_000;

/// Evaluates uniformly random fingerprints until the budget is spent. The
/// pool is unused; the signature matches the other algorithms.
pub fn run_random_search<R: Rng + ?Sized>(
    oracle: &BudgetedOracle,
    _pool: &[Fingerprint],
    rng: &mut R,
) -> Result<RunResult, SearchError> {
    let len = oracle.fp_len();
    let mut idle = 0;
    let stop = loop {
        let fp = Fingerprint::from_bits((0..len).map(|_| rng.random_bool(0.5)))?;
        let before = oracle.trace_len();
        match oracle.evaluate(&fp) {
            Ok(_) => {}
            Err(OracleError::BudgetExhausted) => break StopReason::BudgetExhausted,
            Err(e) => return Err(e.into()),
        }
        if oracle.trace_len() == before {
            idle += 1;
            if idle >= MAX_IDLE_DRAWS {
                break StopReason::Stalled;
            }
        } else {
            idle = 0;
        }
    };
    Ok(RunResult::from_trace(
        oracle.trace(),
        oracle.budget(),
        stop,
        MetricsOptions::default(),
    )?)
}
