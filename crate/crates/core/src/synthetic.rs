//! In-process objectives over binary strings, all scaled to `[0, 1]`.
//!
//! | family          | score                                              |
//! |-----------------|----------------------------------------------------|
//! | `onemax`        | fraction of set bits                               |
//! | `hidden-target` | similarity to a secret sparse fingerprint          |
//! | `nk`            | mean of per-position epistatic contributions       |
//! | `ising`         | affinely rescaled negative spin-glass energy       |
//!
//! Every oracle is fully determined by its [`OracleSpec`].

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fingerprint::{Fingerprint, SimilarityKind};
use crate::oracle::{Oracle, OracleError};

/// Exhaustive optimum search is used up to this many bits.
pub const EXHAUSTIVE_MAX_BITS: usize = 20;

const NK_MAX_K: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SyntheticError {
    #[error("unknown oracle family {0:?}")]
    UnknownFamily(String),
    #[error("fingerprint length {0} must be a positive multiple of 4")]
    BadLength(usize),
    #[error("NK interaction degree K={k} must be smaller than N={n}")]
    KTooLarge { k: usize, n: usize },
    #[error("NK interaction degree K={0} exceeds the supported maximum of {NK_MAX_K}")]
    KUnsupported(usize),
    #[error("hidden target needs between 1 and {len} set bits, got {ones}")]
    BadTargetOnes { ones: usize, len: usize },
    #[error("ising degree {degree} must be in 1..{len}")]
    BadDegree { degree: usize, len: usize },
}

/// An oracle family and its family-specific parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Family {
    #[serde(rename = "onemax")]
    OneMax {},
    HiddenTarget {
        #[serde(default)]
        similarity: SimilarityKind,
        /// Set bits in the target; defaults to `len / 8`.
        #[serde(default)]
        target_ones: Option<usize>,
    },
    Nk {
        k: usize,
    },
    Ising {
        #[serde(default = "default_ising_degree")]
        degree: usize,
    },
}

fn default_ising_degree() -> usize {
    3
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::OneMax {} => "onemax",
            Family::HiddenTarget { .. } => "hidden-target",
            Family::Nk { .. } => "nk",
            Family::Ising { .. } => "ising",
        }
    }
}

/// Parses `onemax`, `hidden-target`, `nk[:K]` (K defaults to 2) or
/// `ising[:degree]`; other parameters take their defaults.
impl FromStr for Family {
    type Err = SyntheticError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let unknown = || SyntheticError::UnknownFamily(s.to_string());
        let num = |default: usize| -> Result<usize, SyntheticError> {
            arg.map_or(Ok(default), |a| a.parse().map_err(|_| unknown()))
        };
        match name {
            "onemax" if arg.is_none() => Ok(Family::OneMax {}),
            "hidden-target" if arg.is_none() => Ok(Family::HiddenTarget {
                similarity: SimilarityKind::default(),
                target_ones: None,
            }),
            "nk" => Ok(Family::Nk { k: num(2)? }),
            "ising" => Ok(Family::Ising {
                degree: num(default_ising_degree())?,
            }),
            _ => Err(unknown()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSpec {
    pub family: Family,
    pub fp_len: usize,
    pub seed: u64,
}

impl OracleSpec {
    pub fn new(family: Family, fp_len: usize, seed: u64) -> Self {
        Self {
            family,
            fp_len,
            seed,
        }
    }
}

pub struct OneMax {
    len: usize,
}

impl OneMax {
    pub fn new(len: usize) -> Self {
        Self { len }
    }
}

impl Oracle for OneMax {
    fn name(&self) -> &str {
        "onemax"
    }
    fn fp_len(&self) -> usize {
        self.len
    }
    fn evaluate(&self, fp: &Fingerprint) -> Result<f64, OracleError> {
        check_len(self.len, fp)?;
        Ok(fp.count_ones() as f64 / self.len as f64)
    }
}

pub struct HiddenTarget {
    target: Fingerprint,
    sim: SimilarityKind,
}

impl HiddenTarget {
    pub fn new(target: Fingerprint, sim: SimilarityKind) -> Self {
        Self { target, sim }
    }

    pub fn target(&self) -> &Fingerprint {
        &self.target
    }
}

impl Oracle for HiddenTarget {
    fn name(&self) -> &str {
        "hidden-target"
    }
    fn fp_len(&self) -> usize {
        self.target.len()
    }
    fn evaluate(&self, fp: &Fingerprint) -> Result<f64, OracleError> {
        Ok(self.sim.similarity(fp, &self.target)?)
    }
}

/// Kauffman NK landscape.
pub struct NkLandscape {
    n: usize,
    k: usize,
    /// `n * k` neighbor positions, row-major.
    neighbors: Vec<usize>,
    /// `n * 2^(k+1)` contributions, row-major.
    table: Vec<f64>,
}

impl NkLandscape {
    pub fn generate(n: usize, k: usize, seed: u64) -> Result<Self, SyntheticError> {
        if k >= n {
            return Err(SyntheticError::KTooLarge { k, n });
        }
        if k > NK_MAX_K {
            return Err(SyntheticError::KUnsupported(k));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut neighbors = Vec::with_capacity(n * k);
        for i in 0..n {
            // draw from the n-1 other positions, then skip over i
            for j in index::sample(&mut rng, n - 1, k) {
                neighbors.push(if j >= i { j + 1 } else { j });
            }
        }
        let rows = 1usize << (k + 1);
        let table = (0..n * rows).map(|_| rng.random::<f64>()).collect();
        Ok(Self {
            n,
            k,
            neighbors,
            table,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    fn contribution(&self, bits: &[bool], i: usize) -> f64 {
        let mut idx = usize::from(bits[i]);
        for &j in &self.neighbors[i * self.k..(i + 1) * self.k] {
            idx = (idx << 1) | usize::from(bits[j]);
        }
        self.table[(i << (self.k + 1)) + idx]
    }

    fn score_bits(&self, bits: &[bool]) -> f64 {
        (0..self.n).map(|i| self.contribution(bits, i)).sum::<f64>() / self.n as f64
    }

    /// Exact optimum for K=0 (each bit picks its better entry) or small N.
    pub fn optimum(&self) -> Option<f64> {
        if self.k == 0 {
            let total: f64 = (0..self.n)
                .map(|i| self.table[2 * i].max(self.table[2 * i + 1]))
                .sum();
            return Some(total / self.n as f64);
        }
        if self.n <= EXHAUSTIVE_MAX_BITS {
            let mut bits = vec![false; self.n];
            let mut best = f64::NEG_INFINITY;
            for state in 0u64..(1u64 << self.n) {
                for (i, b) in bits.iter_mut().enumerate() {
                    *b = (state >> i) & 1 == 1;
                }
                best = best.max(self.score_bits(&bits));
            }
            return Some(best);
        }
        None
    }
}

impl Oracle for NkLandscape {
    fn name(&self) -> &str {
        "nk"
    }
    fn fp_len(&self) -> usize {
        self.n
    }
    fn evaluate(&self, fp: &Fingerprint) -> Result<f64, OracleError> {
        check_len(self.n, fp)?;
        Ok(self.score_bits(&fp.to_bools()))
    }
}

/// Sparse ±1 spin glass, `E(s) = -Σ_{i<j} J_ij s_i s_j` with `s = 2b - 1`.
///
/// Lower energy is better; the score is `(E_max - E) / (E_max - E_min)`.
pub struct IsingGlass {
    n: usize,
    /// `(i, j, J_ij)` with `i < j`, each pair once.
    edges: Vec<(usize, usize, i32)>,
    e_min: i64,
    e_max: i64,
    exact_bounds: bool,
}

impl IsingGlass {
    pub fn generate(n: usize, degree: usize, seed: u64) -> Result<Self, SyntheticError> {
        if degree == 0 || degree >= n {
            return Err(SyntheticError::BadDegree { degree, len: n });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pairs = std::collections::BTreeSet::new();
        for i in 0..n {
            for j in index::sample(&mut rng, n - 1, degree) {
                let j = if j >= i { j + 1 } else { j };
                pairs.insert((i.min(j), i.max(j)));
            }
        }
        let edges: Vec<_> = pairs
            .into_iter()
            .map(|(i, j)| (i, j, if rng.random_bool(0.5) { 1 } else { -1 }))
            .collect();
        let mut glass = Self {
            n,
            edges,
            e_min: 0,
            e_max: 0,
            exact_bounds: false,
        };
        if n <= EXHAUSTIVE_MAX_BITS {
            let (lo, hi) = glass.exhaustive_bounds();
            glass.e_min = lo;
            glass.e_max = hi;
            glass.exact_bounds = true;
        } else {
            let abs: i64 = glass.edges.iter().map(|e| i64::from(e.2.abs())).sum();
            glass.e_min = -abs;
            glass.e_max = abs;
        }
        Ok(glass)
    }

    pub fn energy_bits(&self, bits: &[bool]) -> i64 {
        let spin = |b: bool| if b { 1i64 } else { -1 };
        -self
            .edges
            .iter()
            .map(|&(i, j, w)| i64::from(w) * spin(bits[i]) * spin(bits[j]))
            .sum::<i64>()
    }

    pub fn energy_bounds(&self) -> (i64, i64) {
        (self.e_min, self.e_max)
    }

    pub fn has_exact_bounds(&self) -> bool {
        self.exact_bounds
    }

    /// Gray-code sweep over all `2^n` states.
    fn exhaustive_bounds(&self) -> (i64, i64) {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j, w) in &self.edges {
            adj[i].push((j, i64::from(w)));
            adj[j].push((i, i64::from(w)));
        }
        let mut bits = vec![false; self.n];
        let mut e = self.energy_bits(&bits);
        let (mut lo, mut hi) = (e, e);
        for step in 1u64..(1u64 << self.n) {
            let i = step.trailing_zeros() as usize;
            // flipping spin i changes E by 2 s_i Σ_j J_ij s_j (s_i before the flip)
            let s_i = if bits[i] { 1 } else { -1 };
            let field: i64 = adj[i]
                .iter()
                .map(|&(j, w)| w * if bits[j] { 1 } else { -1 })
                .sum();
            e += 2 * s_i * field;
            bits[i] = !bits[i];
            lo = lo.min(e);
            hi = hi.max(e);
        }
        (lo, hi)
    }

    fn score_energy(&self, e: i64) -> f64 {
        // clamp: the Σ|J| bounds are loose, exact ones are attained
        let s = (self.e_max - e) as f64 / (self.e_max - self.e_min) as f64;
        s.clamp(0.0, 1.0)
    }
}

impl Oracle for IsingGlass {
    fn name(&self) -> &str {
        "ising"
    }
    fn fp_len(&self) -> usize {
        self.n
    }
    fn evaluate(&self, fp: &Fingerprint) -> Result<f64, OracleError> {
        check_len(self.n, fp)?;
        Ok(self.score_energy(self.energy_bits(&fp.to_bools())))
    }
}

fn check_len(len: usize, fp: &Fingerprint) -> Result<(), OracleError> {
    if fp.len() == len {
        Ok(())
    } else {
        Err(OracleError::LengthMismatch {
            expected: len,
            actual: fp.len(),
        })
    }
}

/// A constructed synthetic oracle.
pub enum SyntheticOracle {
    OneMax(OneMax),
    HiddenTarget(HiddenTarget),
    Nk(NkLandscape),
    Ising(IsingGlass),
}

impl fmt::Debug for SyntheticOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SyntheticOracle({}, len={})", self.name(), self.fp_len())
    }
}

impl SyntheticOracle {
    fn as_oracle(&self) -> &dyn Oracle {
        match self {
            SyntheticOracle::OneMax(o) => o,
            SyntheticOracle::HiddenTarget(o) => o,
            SyntheticOracle::Nk(o) => o,
            SyntheticOracle::Ising(o) => o,
        }
    }

    /// The exact optimum where it is cheaply known, else `None`.
    pub fn best_known(&self) -> Option<f64> {
        match self {
            SyntheticOracle::OneMax(_) | SyntheticOracle::HiddenTarget(_) => Some(1.0),
            SyntheticOracle::Nk(o) => o.optimum(),
            // exact bounds make the ground state score exactly 1
            SyntheticOracle::Ising(o) => o.has_exact_bounds().then_some(1.0),
        }
    }
}

impl Oracle for SyntheticOracle {
    fn name(&self) -> &str {
        self.as_oracle().name()
    }
    fn fp_len(&self) -> usize {
        self.as_oracle().fp_len()
    }
    fn evaluate(&self, fp: &Fingerprint) -> Result<f64, OracleError> {
        self.as_oracle().evaluate(fp)
    }
}

/// Checks `spec` without building anything.
pub fn validate_spec(spec: &OracleSpec) -> Result<(), SyntheticError> {
    let len = spec.fp_len;
    if len == 0 || len % 4 != 0 {
        return Err(SyntheticError::BadLength(len));
    }
    match spec.family {
        Family::OneMax {} => {}
        Family::HiddenTarget { target_ones, .. } => {
            let ones = target_ones.unwrap_or(len / 8);
            if ones == 0 || ones > len {
                return Err(SyntheticError::BadTargetOnes { ones, len });
            }
        }
        Family::Nk { k } if k >= len => return Err(SyntheticError::KTooLarge { k, n: len }),
        Family::Nk { k } if k > NK_MAX_K => return Err(SyntheticError::KUnsupported(k)),
        Family::Nk { .. } => {}
        Family::Ising { degree } if degree == 0 || degree >= len => {
            return Err(SyntheticError::BadDegree { degree, len })
        }
        Family::Ising { .. } => {}
    }
    Ok(())
}

/// Builds the oracle described by `spec`. Same spec, same score function.
pub fn make_oracle(spec: &OracleSpec) -> Result<SyntheticOracle, SyntheticError> {
    validate_spec(spec)?;
    let len = spec.fp_len;
    Ok(match &spec.family {
        Family::OneMax {} => SyntheticOracle::OneMax(OneMax::new(len)),
        Family::HiddenTarget {
            similarity,
            target_ones,
        } => {
            let ones = target_ones.unwrap_or(len / 8);
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let mut target = Fingerprint::zeros(len).expect("positive length");
            for i in index::sample(&mut rng, len, ones) {
                target.set(i, true);
            }
            SyntheticOracle::HiddenTarget(HiddenTarget::new(target, *similarity))
        }
        Family::Nk { k } => SyntheticOracle::Nk(NkLandscape::generate(len, *k, spec.seed)?),
        Family::Ising { degree } => {
            SyntheticOracle::Ising(IsingGlass::generate(len, *degree, spec.seed)?)
        }
    })
}

/// Convenience wrapper: `make_oracle(spec)?.best_known()`.
pub fn best_known(spec: &OracleSpec) -> Result<Option<f64>, SyntheticError> {
    Ok(make_oracle(spec)?.best_known())
}
