//! Search algorithms over fingerprints.
//!
//! * [`run_ga_baseline`]: elitist genetic algorithm until the budget runs out.
//! * [`run_dreinforce`]: policy-guided Metropolis-Hastings proposals, each
//!   refined by a short GA local search, with the policy trained by REINFORCE.
//! * [`run_random_search`]: uniform random sampling, as a control.
//!
//! Every algorithm spends budget only through a [`BudgetedOracle`], so the
//! trace it leaves behind is the complete record of the run.

mod dreinforce;
mod ga;
mod mh;
mod random;

pub use dreinforce::{run_dreinforce, DReinforce, DReinforceConfig, IterationReport};
pub use ga::{ga_crossover, ga_generation, ga_mutate, run_ga_baseline, GaConfig, Generation};
pub use mh::{mh_accept, mh_propose};
pub use random::run_random_search;

use std::collections::HashSet;

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

use crate::fingerprint::{Fingerprint, FingerprintError};
use crate::metrics::MetricsError;
use crate::oracle::{BudgetedOracle, OracleError};
use crate::policy::PolicyError;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
    #[error("seed pool has {have} fingerprints, need at least {need}")]
    PoolTooSmall { need: usize, have: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl SearchError {
    pub fn is_budget_exhausted(&self) -> bool {
        matches!(self, SearchError::Oracle(OracleError::BudgetExhausted))
    }
}

/// A fingerprint and its oracle score.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub fp: Fingerprint,
    pub score: f64,
}

impl Candidate {
    pub fn new(fp: Fingerprint, score: f64) -> Self {
        Self { fp, score }
    }
}

/// Up to `capacity` distinct candidates, best first.
///
/// Equal scores keep insertion order, so survivors are deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    members: Vec<Candidate>,
    capacity: usize,
}

impl Population {
    pub fn new(capacity: usize) -> Self {
        Self {
            members: Vec::with_capacity(capacity),
            capacity,
        }
    }

    pub fn from_candidates(capacity: usize, cands: impl IntoIterator<Item = Candidate>) -> Self {
        let mut p = Self::new(capacity);
        p.merge(cands);
        p
    }

    /// Adds candidates, drops duplicates of fingerprints already present, and
    /// truncates to the best `capacity`.
    pub fn merge(&mut self, cands: impl IntoIterator<Item = Candidate>) {
        let mut seen: HashSet<Fingerprint> = self.members.iter().map(|c| c.fp.clone()).collect();
        for c in cands {
            if seen.insert(c.fp.clone()) {
                self.members.push(c);
            }
        }
        self.members.sort_by(|a, b| b.score.total_cmp(&a.score));
        self.members.truncate(self.capacity);
    }

    pub fn members(&self) -> &[Candidate] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn best(&self) -> Option<&Candidate> {
        self.members.first()
    }

    pub fn best_score(&self) -> f64 {
        self.best().map_or(f64::NEG_INFINITY, |c| c.score)
    }
}

/// Samples `size` pool entries without replacement and scores them.
pub fn init_population<R: Rng + ?Sized>(
    pool: &[Fingerprint],
    size: usize,
    oracle: &BudgetedOracle,
    rng: &mut R,
) -> Result<Population, SearchError> {
    if size == 0 {
        return Err(SearchError::InvalidConfig("population size must be positive".into()));
    }
    if pool.len() < size {
        return Err(SearchError::PoolTooSmall {
            need: size,
            have: pool.len(),
        });
    }
    let picked: Vec<Fingerprint> = index::sample(rng, pool.len(), size)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect();
    let out = oracle.evaluate_batch(&picked)?;
    if out.exhausted {
        return Err(OracleError::BudgetExhausted.into());
    }
    Ok(Population::from_candidates(
        size,
        picked.into_iter().zip(out.scores).map(|(fp, s)| Candidate::new(fp, s)),
    ))
}

/// Uniformly random pool, used when no seed pool file is supplied.
pub fn random_pool<R: Rng + ?Sized>(len: usize, count: usize, density: f64, rng: &mut R) -> Vec<Fingerprint> {
    (0..count)
        .map(|_| Fingerprint::from_bits((0..len).map(|_| rng.random_bool(density))).expect("positive length"))
        .collect()
}
