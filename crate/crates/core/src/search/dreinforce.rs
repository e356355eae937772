//! Policy-guided search: Metropolis-Hastings proposals drawn from a Bernoulli
//! policy, each refined by a short GA local search whose best score is the
//! proposal's reward, with the policy trained by REINFORCE.
//!
//! One outer iteration:
//!
//! 1. `p = forward(policy)`.
//! 2. Every walker draws `n_repeats` proposals with [`mh_propose`].
//! 3. Each proposal seeds a GA local search on a scratch population made of
//!    the proposal and the global top `population_size - 1` as it stands when
//!    that local search starts, so later rollouts build on earlier ones.
//! 4. The proposal's reward is the best score among the proposal and the
//!    children its local search produced.
//! 5. Per walker, the `n_repeats` (proposal, reward) pairs form a REINFORCE
//!    batch; walker gradients are averaged and applied with one Adam step.
//! 6. Each walker moves to the best candidate of its best-rewarded proposal
//!    if [`mh_accept`] agrees.
//! 7. The global top population absorbs everything scored.
//!
//! Baselines are per walker. Proposals of one walker share every unflipped
//! bit, so with a per-walker mean those bits contribute exactly zero gradient.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ga::{ga_generation, GaConfig};
use super::mh::{mh_accept, mh_propose};
use super::{init_population, Candidate, Population, SearchError};
use crate::fingerprint::Fingerprint;
use crate::metrics::{MetricsOptions, RunResult, StopReason};
use crate::oracle::{BudgetedOracle, OracleError};
use crate::policy::{reinforce_gradient, ActionBatch, AdamConfig, PolicyParams};

/// Outer iterations without any new evaluation before the run counts as stalled.
pub const MAX_IDLE_ITERATIONS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DReinforceConfig {
    pub population_size: usize,
    /// Proposals (and local searches) per walker per outer iteration.
    pub n_repeats: usize,
    /// Bits flipped per proposal.
    pub mh_flip_count: usize,
    /// Inverse temperature of the acceptance rule.
    pub mh_beta: f64,
    pub learning_rate: f64,
    /// Subtract the per-walker mean reward.
    pub baseline: bool,
    /// Keys left out fall back to [`GaConfig::local_search`], not the baseline defaults.
    #[serde(deserialize_with = "local_search_overrides")]
    pub local_search: GaConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GaOverrides {
    population_size: Option<usize>,
    offspring_size: Option<usize>,
    mutation_prob: Option<f64>,
    flips_per_mutation: Option<usize>,
    n_iterations: Option<usize>,
}

fn local_search_overrides<'de, D: serde::Deserializer<'de>>(d: D) -> Result<GaConfig, D::Error> {
    let o = GaOverrides::deserialize(d)?;
    let base = GaConfig::local_search();
    Ok(GaConfig {
        population_size: o.population_size.unwrap_or(base.population_size),
        offspring_size: o.offspring_size.unwrap_or(base.offspring_size),
        mutation_prob: o.mutation_prob.unwrap_or(base.mutation_prob),
        flips_per_mutation: o.flips_per_mutation.unwrap_or(base.flips_per_mutation),
        n_iterations: o.n_iterations.unwrap_or(base.n_iterations),
    })
}

impl Default for DReinforceConfig {
    fn default() -> Self {
        Self {
            population_size: 16,
            n_repeats: 8,
            mh_flip_count: 16,
            mh_beta: 10.0,
            learning_rate: 1e-3,
            baseline: true,
            local_search: GaConfig::local_search(),
        }
    }
}

impl DReinforceConfig {
    pub fn validate(&self, fp_len: usize) -> Result<(), SearchError> {
        let bad = |m: String| Err(SearchError::InvalidConfig(m));
        if self.population_size == 0 {
            return bad("population_size must be positive".into());
        }
        if self.n_repeats == 0 {
            return bad("n_repeats must be positive".into());
        }
        if self.mh_flip_count == 0 || self.mh_flip_count > fp_len {
            return bad(format!("mh_flip_count {} must be in 1..={fp_len}", self.mh_flip_count));
        }
        if !(self.mh_beta >= 0.0 && self.mh_beta.is_finite()) {
            return bad(format!("mh_beta {} must be finite and non-negative", self.mh_beta));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be finite and non-negative", self.learning_rate));
        }
        if self.local_search.population_size != self.population_size {
            return bad(format!(
                "local_search.population_size {} must equal population_size {}",
                self.local_search.population_size, self.population_size
            ));
        }
        self.local_search.validate(fp_len).map_err(|e| match e {
            SearchError::InvalidConfig(m) => SearchError::InvalidConfig(format!("local_search.{m}")),
            other => other,
        })
    }
}

/// Summary of one outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    /// 1-based index of the iteration that just ran.
    pub iteration: usize,
    pub new_evaluations: usize,
    /// Walkers that moved.
    pub accepted: usize,
    pub mean_reward: f64,
    /// Mean per-bit policy entropy after the update.
    pub entropy: f64,
    /// Set when the iteration was cut short (or never started) for this reason.
    pub stopped: Option<StopReason>,
}

/// Stateful driver; [`run_dreinforce`] just calls [`DReinforce::step`] until it stops.
pub struct DReinforce<'o, G: Rng> {
    cfg: DReinforceConfig,
    adam: AdamConfig,
    oracle: &'o BudgetedOracle,
    rng: G,
    policy: PolicyParams,
    walkers: Vec<Candidate>,
    elite: Population,
    iterations: usize,
    idle: usize,
    stopped: Option<StopReason>,
}

struct LocalSearch {
    best: Option<Candidate>,
    exhausted: bool,
}

impl<'o, G: Rng> DReinforce<'o, G> {
    pub fn new(
        cfg: DReinforceConfig,
        oracle: &'o BudgetedOracle,
        pool: &[Fingerprint],
        mut rng: G,
    ) -> Result<Self, SearchError> {
        cfg.validate(oracle.fp_len())?;
        let elite = init_population(pool, cfg.population_size, oracle, &mut rng)?;
        let policy = PolicyParams::init(oracle.fp_len(), &mut rng);
        Ok(Self {
            adam: AdamConfig::with_lr(cfg.learning_rate),
            walkers: elite.members().to_vec(),
            cfg,
            oracle,
            rng,
            policy,
            elite,
            iterations: 0,
            idle: 0,
            stopped: None,
        })
    }

    pub fn policy(&self) -> &PolicyParams {
        &self.policy
    }

    pub fn walkers(&self) -> &[Candidate] {
        &self.walkers
    }

    /// Global top `population_size` seen so far.
    pub fn elite(&self) -> &Population {
        &self.elite
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn stopped(&self) -> Option<StopReason> {
        self.stopped
    }

    fn local_search(&mut self, proposal: Fingerprint) -> Result<LocalSearch, SearchError> {
        let score = match self.oracle.evaluate(&proposal) {
            Ok(s) => s,
            Err(OracleError::BudgetExhausted) => {
                return Ok(LocalSearch {
                    best: None,
                    exhausted: true,
                })
            }
            Err(e) => return Err(e.into()),
        };
        let mut best = Candidate::new(proposal, score);
        let elites = self
            .elite
            .members()
            .iter()
            .filter(|c| c.fp != best.fp)
            .take(self.cfg.population_size - 1)
            .cloned();
        let mut scratch = Population::from_candidates(
            self.cfg.population_size,
            std::iter::once(best.clone()).chain(elites),
        );
        self.elite.merge([best.clone()]);
        for _ in 0..self.cfg.local_search.n_iterations {
            let gen = ga_generation(&scratch, &self.cfg.local_search, self.oracle, &mut self.rng)?;
            for c in &gen.scored {
                if c.score > best.score {
                    best = c.clone();
                }
            }
            self.elite.merge(gen.scored);
            scratch = gen.population;
            if gen.exhausted {
                return Ok(LocalSearch {
                    best: Some(best),
                    exhausted: true,
                });
            }
        }
        Ok(LocalSearch {
            best: Some(best),
            exhausted: false,
        })
    }

    fn halt(&mut self, reason: StopReason, new_evaluations: usize) -> IterationReport {
        self.stopped = Some(reason);
        IterationReport {
            iteration: self.iterations,
            new_evaluations,
            accepted: 0,
            mean_reward: f64::NAN,
            entropy: self.policy.forward().mean_entropy(),
            stopped: Some(reason),
        }
    }

    /// Runs one outer iteration. Once the budget is gone the report carries
    /// `stopped` and further calls do nothing.
    pub fn step(&mut self) -> Result<IterationReport, SearchError> {
        if let Some(reason) = self.stopped {
            return Ok(self.halt(reason, 0));
        }
        if self.oracle.is_exhausted() {
            return Ok(self.halt(StopReason::BudgetExhausted, 0));
        }
        let before = self.oracle.trace_len();
        let p = self.policy.forward();

        let mut rollouts = Vec::with_capacity(self.walkers.len());
        for w in 0..self.walkers.len() {
            let mut actions = Vec::with_capacity(self.cfg.n_repeats);
            let mut rewards = Vec::with_capacity(self.cfg.n_repeats);
            let mut bests = Vec::with_capacity(self.cfg.n_repeats);
            for _ in 0..self.cfg.n_repeats {
                let proposal = mh_propose(&self.walkers[w].fp, &p, self.cfg.mh_flip_count, &mut self.rng)?;
                let ls = self.local_search(proposal.clone())?;
                if ls.exhausted {
                    let spent = self.oracle.trace_len() - before;
                    return Ok(self.halt(StopReason::BudgetExhausted, spent));
                }
                let best = ls.best.expect("completed local search has a best");
                actions.push(proposal);
                rewards.push(best.score);
                bests.push(best);
            }
            rollouts.push((ActionBatch::new(actions, rewards)?, bests));
        }

        let mut grad = vec![0.0; p.len()];
        for (batch, _) in &rollouts {
            for (g, gi) in grad.iter_mut().zip(reinforce_gradient(&p, batch, self.cfg.baseline)) {
                *g += gi;
            }
        }
        let n_walkers = rollouts.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n_walkers);
        self.policy.adam_step(&grad, &self.adam)?;

        let mut accepted = 0;
        let mut reward_sum = 0.0;
        for (w, (batch, bests)) in rollouts.into_iter().enumerate() {
            reward_sum += batch.rewards().iter().sum::<f64>();
            let (j, _) = batch
                .rewards()
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (j, &r)| if r > acc.1 { (j, r) } else { acc });
            let cand = &bests[j];
            if mh_accept(self.walkers[w].score, cand.score, self.cfg.mh_beta, &mut self.rng) {
                self.walkers[w] = cand.clone();
                accepted += 1;
            }
        }

        self.iterations += 1;
        let new_evaluations = self.oracle.trace_len() - before;
        let mut stopped = None;
        if new_evaluations == 0 {
            self.idle += 1;
            if self.idle >= MAX_IDLE_ITERATIONS {
                stopped = Some(StopReason::Stalled);
                self.stopped = stopped;
            }
        } else {
            self.idle = 0;
        }
        Ok(IterationReport {
            iteration: self.iterations,
            new_evaluations,
            accepted,
            mean_reward: reward_sum / (self.walkers.len() * self.cfg.n_repeats) as f64,
            entropy: self.policy.forward().mean_entropy(),
            stopped,
        })
    }

    /// Steps until the budget is spent, the run stalls, or `max_iterations` pass.
    pub fn run(&mut self, max_iterations: Option<usize>) -> Result<StopReason, SearchError> {
        loop {
            if let Some(reason) = self.stopped {
                return Ok(reason);
            }
            if max_iterations.is_some_and(|m| self.iterations >= m) {
                return Ok(StopReason::IterationLimit);
            }
            self.step()?;
        }
    }

    pub fn into_result(self) -> Result<RunResult, SearchError> {
        let stop = self.stopped.unwrap_or(StopReason::IterationLimit);
        Ok(RunResult::from_trace(
            self.oracle.trace(),
            self.oracle.budget(),
            stop,
            MetricsOptions::default(),
        )?)
    }
}

/// Runs the full policy-guided search until the budget is spent.
pub fn run_dreinforce<R: Rng + ?Sized>(
    cfg: &DReinforceConfig,
    oracle: &BudgetedOracle,
    pool: &[Fingerprint],
    rng: &mut R,
) -> Result<RunResult, SearchError> {
    let mut driver = DReinforce::new(cfg.clone(), oracle, pool, rng)?;
    driver.run(None)?;
    driver.into_result()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fingerprint::SimilarityKind;
    use crate::search::random_pool;
    use crate::synthetic::{make_oracle, Family, OneMax, OracleSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn small_cfg() -> DReinforceConfig {
        DReinforceConfig {
            n_repeats: 4,
            mh_flip_count: 4,
            local_search: GaConfig {
                offspring_size: 16,
                n_iterations: 2,
                flips_per_mutation: 4,
                ..GaConfig::default()
            },
            ..DReinforceConfig::default()
        }
    }

    #[test]
    fn respects_budget_and_is_deterministic() {
        let run = |seed| {
            let oracle = BudgetedOracle::new(Arc::new(OneMax::new(64)), 3000);
            let pool = random_pool(64, 64, 0.5, &mut ChaCha8Rng::seed_from_u64(0));
            run_dreinforce(&small_cfg(), &oracle, &pool, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
        };
        let a = run(3);
        assert_eq!(a.trace.len(), 3000);
        assert_eq!(a.stop_reason, StopReason::BudgetExhausted);
        assert_eq!(a, run(3));
    }

    #[test]
    fn frozen_policy_still_keeps_best_monotone() {
        let cfg = DReinforceConfig {
            learning_rate: 0.0,
            mh_beta: 0.0,
            ..small_cfg()
        };
        let oracle = BudgetedOracle::new(Arc::new(OneMax::new(64)), 2000);
        let pool = random_pool(64, 64, 0.5, &mut ChaCha8Rng::seed_from_u64(1));
        let mut d = DReinforce::new(cfg, &oracle, &pool, ChaCha8Rng::seed_from_u64(1)).unwrap();
        let init = d.policy().clone();
        let mut best = d.elite().best_score();
        while d.stopped().is_none() {
            d.step().unwrap();
            assert!(d.elite().best_score() >= best);
            best = d.elite().best_score();
        }
        assert_eq!(d.policy().logits(), init.logits());
        let r = d.into_result().unwrap();
        assert_eq!(r.best_score(), best);
    }

    #[test]
    fn entropy_drops_on_hidden_target() {
        let spec = OracleSpec::new(
            Family::HiddenTarget {
                similarity: SimilarityKind::Tanimoto,
                target_ones: None,
            },
            128,
            5,
        );
        let oracle = BudgetedOracle::new(Arc::new(make_oracle(&spec).unwrap()), 1_000_000);
        let pool = random_pool(128, 64, 0.5, &mut ChaCha8Rng::seed_from_u64(2));
        let mut d = DReinforce::new(small_cfg(), &oracle, &pool, ChaCha8Rng::seed_from_u64(2)).unwrap();
        let h0 = d.policy().forward().mean_entropy();
        for _ in 0..30 {
            d.step().unwrap();
        }
        assert!(d.policy().forward().mean_entropy() < h0);
        assert_eq!(d.iterations(), 30);
    }

    #[test]
    fn stops_cleanly_when_budget_is_tiny() {
        let oracle = BudgetedOracle::new(Arc::new(OneMax::new(64)), 20);
        let pool = random_pool(64, 32, 0.5, &mut ChaCha8Rng::seed_from_u64(0));
        let r = run_dreinforce(&DReinforceConfig::default(), &oracle, &pool, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(r.trace.len(), 20);
        assert_eq!(r.stop_reason, StopReason::BudgetExhausted);
    }

    #[test]
    fn stall_guard_terminates_tiny_spaces() {
        let cfg = DReinforceConfig {
            mh_flip_count: 1,
            local_search: GaConfig {
                flips_per_mutation: 1,
                offspring_size: 8,
                n_iterations: 1,
                ..GaConfig::default()
            },
            population_size: 4,
            ..DReinforceConfig::default()
        };
        let cfg = DReinforceConfig {
            local_search: GaConfig {
                population_size: 4,
                ..cfg.local_search.clone()
            },
            ..cfg
        };
        let oracle = BudgetedOracle::new(Arc::new(OneMax::new(4)), 1000);
        let pool = random_pool(4, 8, 0.5, &mut ChaCha8Rng::seed_from_u64(0));
        let r = run_dreinforce(&cfg, &oracle, &pool, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(r.stop_reason, StopReason::Stalled);
        assert!(r.trace.len() <= 16);
    }

    #[test]
    fn config_validation() {
        assert!(DReinforceConfig::default().validate(4096).is_ok());
        assert!(DReinforceConfig::default().validate(8).is_err());
        let mut c = DReinforceConfig {
            population_size: 8,
            ..DReinforceConfig::default()
        };
        assert!(c.validate(4096).is_err());
        c.local_search.population_size = 8;
        assert!(c.validate(4096).is_ok());
        c.mh_beta = -1.0;
        assert!(c.validate(4096).is_err());
    }
}
