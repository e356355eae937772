//! Input-free Bernoulli policy over bit patterns, trained by REINFORCE with Adam.
//!
//! The network has a single trainable layer and no input, so it reduces to a
//! vector of logits `θ`; its output is `p = sigmoid(θ)`, read as the
//! probability that each bit should be set. The log-likelihood of a bit
//! vector `a` factorizes as `Σ_i a_i ln p_i + (1 - a_i) ln(1 - p_i)`, whose
//! gradient with respect to `θ_i` is `a_i - p_i`.

use std::io::{BufRead, Write};

use rand::Rng;
use thiserror::Error;

use crate::fingerprint::Fingerprint;

/// Output probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-6;

/// Initial probabilities are drawn uniformly from this open interval.
pub const INIT_PROB_RANGE: (f64, f64) = (0.49, 0.51);

const CHECKPOINT_MAGIC: &str = "fpopt-policy";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("gradient has length {actual}, expected {expected}")]
    GradientLength { expected: usize, actual: usize },
    #[error("non-finite gradient component {value} at index {index}")]
    NonFiniteGradient { index: usize, value: f64 },
    #[error("action batch is empty")]
    EmptyBatch,
    #[error("action batch has {actions} actions but {rewards} rewards")]
    BatchArity { actions: usize, rewards: usize },
    #[error("action length {actual} does not match policy length {expected}")]
    ActionLength { expected: usize, actual: usize },
    #[error("reward {0} is not finite")]
    NonFiniteReward(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// First/second moment estimates and step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// Per-bit probabilities, each in `[PROB_EPS, 1 - PROB_EPS]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Clamps each entry into the valid range.
    pub fn new(p: Vec<f64>) -> Self {
        Self(p.into_iter().map(|x| x.clamp(PROB_EPS, 1.0 - PROB_EPS)).collect())
    }

    pub fn uniform(len: usize) -> Self {
        Self(vec![0.5; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Mean Bernoulli entropy per bit, in nats; `ln 2` at `p = 0.5`.
    pub fn mean_entropy(&self) -> f64 {
        let h = |p: f64| -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
        self.0.iter().map(|&p| h(p)).sum::<f64>() / self.0.len() as f64
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Sampled bit patterns and the rewards they earned.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionBatch {
    actions: Vec<Fingerprint>,
    rewards: Vec<f64>,
}

impl ActionBatch {
    pub fn new(actions: Vec<Fingerprint>, rewards: Vec<f64>) -> Result<Self, PolicyError> {
        if actions.is_empty() {
            return Err(PolicyError::EmptyBatch);
        }
        if actions.len() != rewards.len() {
            return Err(PolicyError::BatchArity {
                actions: actions.len(),
                rewards: rewards.len(),
            });
        }
        if let Some(&r) = rewards.iter().find(|r| !r.is_finite()) {
            return Err(PolicyError::NonFiniteReward(r));
        }
        let len = actions[0].len();
        if let Some(a) = actions.iter().find(|a| a.len() != len) {
            return Err(PolicyError::ActionLength {
                expected: len,
                actual: a.len(),
            });
        }
        Ok(Self { actions, rewards })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn actions(&self) -> &[Fingerprint] {
        &self.actions
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    /// Mean reward, computed relative to the first so equal rewards give it exactly.
    pub fn mean_reward(&self) -> f64 {
        let r0 = self.rewards[0];
        r0 + self.rewards.iter().map(|r| r - r0).sum::<f64>() / self.rewards.len() as f64
    }
}

/// Trainable logits plus optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    logits: Vec<f64>,
    adam: AdamState,
}

impl PolicyParams {
    /// Logits whose sigmoids are i.i.d. uniform on `INIT_PROB_RANGE`.
    pub fn init<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let (lo, hi) = INIT_PROB_RANGE;
        let logits = (0..len)
            .map(|_| loop {
                let u: f64 = rng.random_range(lo..hi);
                if u > lo {
                    break logit(u);
                }
            })
            .collect();
        Self::from_logits(logits)
    }

    pub fn from_logits(logits: Vec<f64>) -> Self {
        let adam = AdamState::zeros(logits.len());
        Self { logits, adam }
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn adam_state(&self) -> &AdamState {
        &self.adam
    }

    pub fn forward(&self) -> ProbVector {
        ProbVector::new(self.logits.iter().map(|&x| sigmoid(x)).collect())
    }

    /// One bias-corrected Adam descent step on `grad`.
    pub fn adam_step(&mut self, grad: &[f64], cfg: &AdamConfig) -> Result<(), PolicyError> {
        if grad.len() != self.logits.len() {
            return Err(PolicyError::GradientLength {
                expected: self.logits.len(),
                actual: grad.len(),
            });
        }
        if let Some((index, &value)) = grad.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(PolicyError::NonFiniteGradient { index, value });
        }
        let st = &mut self.adam;
        st.t += 1;
        let t = st.t as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (i, &g) in grad.iter().enumerate() {
            st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g;
            st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = st.m[i] / bc1;
            let v_hat = st.v[i] / bc2;
            self.logits[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        Ok(())
    }

    /// Text checkpoint: a versioned header, then one `theta m v` line per bit.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<(), PolicyError> {
        writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
        writeln!(out, "len {}", self.logits.len())?;
        writeln!(out, "step {}", self.adam.t)?;
        for i in 0..self.logits.len() {
            writeln!(out, "{} {} {}", self.logits[i], self.adam.m[i], self.adam.v[i])?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Self, PolicyError> {
        let bad = |msg: String| PolicyError::Checkpoint(msg);
        let mut lines = input.lines();
        let mut next = |what: &str| -> Result<String, PolicyError> {
            lines
                .next()
                .ok_or_else(|| bad(format!("missing {what}")))?
                .map_err(PolicyError::from)
        };
        let header = next("header")?;
        match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            [CHECKPOINT_MAGIC, v] if *v == CHECKPOINT_VERSION.to_string() => {}
            _ => return Err(bad(format!("unsupported header {header:?}"))),
        }
        let field = |line: String, key: &str| -> Result<u64, PolicyError> {
            line.strip_prefix(key)
                .and_then(|rest| rest.trim().parse().ok())
                .ok_or_else(|| bad(format!("expected `{key} <n>`, got {line:?}")))
        };
        let len = field(next("len")?, "len")? as usize;
        let t = field(next("step")?, "step")?;
        let mut p = Self::from_logits(vec![0.0; len]);
        p.adam.t = t;
        for i in 0..len {
            let line = next("parameter row")?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|_| bad(format!("row {}: unparsable {line:?}", i + 1)))?;
            let [theta, m, v] = vals[..] else {
                return Err(bad(format!("row {}: expected 3 values", i + 1)));
            };
            if !(theta.is_finite() && m.is_finite() && v.is_finite() && v >= 0.0) {
                return Err(bad(format!("row {}: invalid values", i + 1)));
            }
            p.logits[i] = theta;
            p.adam.m[i] = m;
            p.adam.v[i] = v;
        }
        Ok(p)
    }
}

/// Factorized Bernoulli log-likelihood of `action` under `p`.
pub fn log_prob(p: &ProbVector, action: &Fingerprint) -> f64 {
    assert_eq!(p.len(), action.len(), "action length mismatch");
    p.0.iter()
        .enumerate()
        .map(|(i, &pi)| if action.get(i) { pi.ln() } else { (1.0 - pi).ln() })
        .sum()
}

/// Gradient over the logits of the surrogate loss
/// `-(1/N) Σ_j (R_j - b) log π(a_j)`, where `b` is the batch-mean reward when
/// `baseline` is set and 0 otherwise. A descent step on it ascends reward.
pub fn reinforce_gradient(p: &ProbVector, batch: &ActionBatch, baseline: bool) -> Vec<f64> {
    let b = if baseline { batch.mean_reward() } else { 0.0 };
    let n = batch.len() as f64;
    let mut g = vec![0.0; p.len()];
    for (a, &r) in batch.actions.iter().zip(&batch.rewards) {
        assert_eq!(a.len(), p.len(), "action length mismatch");
        let adv = r - b;
        if adv == 0.0 {
            continue;
        }
        for (i, gi) in g.iter_mut().enumerate() {
            let ai = if a.get(i) { 1.0 } else { 0.0 };
            *gi -= adv * (ai - p.0[i]);
        }
    }
    g.iter_mut().for_each(|gi| *gi /= n);
    g
}
