//! Elitist genetic algorithm on bit strings: uniform parent choice, uniform
//! crossover, fixed-count mutation, truncation survivor selection.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{init_population, Candidate, Population, SearchError};
use crate::fingerprint::Fingerprint;
use crate::metrics::{MetricsOptions, RunResult, StopReason};
use crate::oracle::BudgetedOracle;

/// Consecutive generations without a single new evaluation before a run is
/// declared stalled. Only reachable on search spaces smaller than the budget.
pub const MAX_IDLE_GENERATIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaConfig {
    pub population_size: usize,
    pub offspring_size: usize,
    pub mutation_prob: f64,
    pub flips_per_mutation: usize,
    /// Generations per call when used as a local search; the baseline ignores
    /// it and runs until the budget is spent.
    pub n_iterations: usize,
}

impl Default for GaConfig {
    /// The baseline settings: population 16, 64 offspring, mutation
    /// probability 0.5 with 24 flips.
    fn default() -> Self {
        Self {
            population_size: 16,
            offspring_size: 64,
            mutation_prob: 0.5,
            flips_per_mutation: 24,
            n_iterations: 6,
        }
    }
}

impl GaConfig {
    /// Local-search settings: 6 generations of 256 offspring.
    pub fn local_search() -> Self {
        Self {
            offspring_size: 256,
            ..Self::default()
        }
    }

    pub fn validate(&self, fp_len: usize) -> Result<(), SearchError> {
        let bad = |m: String| Err(SearchError::InvalidConfig(m));
        if self.population_size == 0 {
            return bad("population_size must be positive".into());
        }
        if self.offspring_size == 0 {
            return bad("offspring_size must be positive".into());
        }
        if self.n_iterations == 0 {
            return bad("n_iterations must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return bad(format!("mutation_prob {} outside [0, 1]", self.mutation_prob));
        }
        if self.flips_per_mutation == 0 || self.flips_per_mutation > fp_len {
            return bad(format!(
                "flips_per_mutation {} must be in 1..={fp_len}",
                self.flips_per_mutation
            ));
        }
        Ok(())
    }
}

/// Each bit comes from `a` or `b` with probability 1/2.
pub fn ga_crossover<R: Rng + ?Sized>(
    a: &Fingerprint,
    b: &Fingerprint,
    rng: &mut R,
) -> Result<Fingerprint, SearchError> {
    if a.len() != b.len() {
        return Err(crate::fingerprint::FingerprintError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        }
        .into());
    }
    let words = a
        .words()
        .iter()
        .zip(b.words())
        .map(|(&x, &y)| {
            let mask: u64 = rng.random();
            (x & mask) | (y & !mask)
        })
        .collect();
    Ok(Fingerprint::from_words(a.len(), words))
}

/// Flips exactly `n` distinct uniformly chosen bits.
pub fn ga_mutate<R: Rng + ?Sized>(x: &Fingerprint, n: usize, rng: &mut R) -> Result<Fingerprint, SearchError> {
    if n == 0 || n > x.len() {
        return Err(SearchError::InvalidConfig(format!(
            "mutation flip count {n} must be in 1..={}",
            x.len()
        )));
    }
    let mut out = x.clone();
    for i in index::sample(rng, x.len(), n) {
        out.flip(i);
    }
    Ok(out)
}

/// Outcome of one generation.
#[derive(Debug, Clone)]
pub struct Generation {
    pub population: Population,
    /// Children that received a score, in generation order.
    pub scored: Vec<Candidate>,
    /// Budget consumed by this generation.
    pub new_evaluations: usize,
    /// The budget ran out partway; `scored` holds whatever was paid for.
    pub exhausted: bool,
}

/// Breeds `offspring_size` children from `pop`, scores them, and keeps the
/// best `population_size` of parents and children.
pub fn ga_generation<R: Rng + ?Sized>(
    pop: &Population,
    cfg: &GaConfig,
    oracle: &BudgetedOracle,
    rng: &mut R,
) -> Result<Generation, SearchError> {
    let parents = pop.members();
    if parents.is_empty() {
        return Err(SearchError::InvalidConfig("cannot breed from an empty population".into()));
    }
    let mut children = Vec::with_capacity(cfg.offspring_size);
    for _ in 0..cfg.offspring_size {
        let a = &parents[rng.random_range(0..parents.len())].fp;
        let b = &parents[rng.random_range(0..parents.len())].fp;
        let mut child = ga_crossover(a, b, rng)?;
        if rng.random_bool(cfg.mutation_prob) {
            child = ga_mutate(&child, cfg.flips_per_mutation, rng)?;
        }
        children.push(child);
    }
    let before = oracle.trace_len();
    let out = oracle.evaluate_batch(&children)?;
    let new_evaluations = oracle.trace_len() - before;
    let scored: Vec<Candidate> = children
        .into_iter()
        .zip(out.scores)
        .map(|(fp, s)| Candidate::new(fp, s))
        .collect();
    let mut population = Population::from_candidates(cfg.population_size, parents.iter().cloned());
    population.merge(scored.iter().cloned());
    Ok(Generation {
        population,
        scored,
        new_evaluations,
        exhausted: out.exhausted,
    })
}

/// Runs the GA from a sampled initial population until the budget is spent.
pub fn run_ga_baseline<R: Rng + ?Sized>(
    cfg: &GaConfig,
    oracle: &BudgetedOracle,
    pool: &[Fingerprint],
    rng: &mut R,
) -> Result<RunResult, SearchError> {
    cfg.validate(oracle.fp_len())?;
    let mut pop = init_population(pool, cfg.population_size, oracle, rng)?;
    let mut idle = 0;
    let stop = loop {
        if oracle.is_exhausted() {
            break StopReason::BudgetExhausted;
        }
        let gen = ga_generation(&pop, cfg, oracle, rng)?;
        pop = gen.population;
        if gen.exhausted {
            break StopReason::BudgetExhausted;
        }
        if gen.new_evaluations == 0 {
            idle += 1;
            if idle >= MAX_IDLE_GENERATIONS {
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
