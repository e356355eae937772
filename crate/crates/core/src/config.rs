//! Experiment configuration files.
//!
//! One TOML file describes one experiment: an oracle, the algorithms to
//! compare on it, and how many seeds to run. Unknown keys are rejected.
//!
//! ```toml
//! [experiment]
//! algorithms = ["ga", "dreinforce"]
//! budget = 5000
//! fp_len = 64
//! master_seed = 0
//! n_seeds = 5
//!
//! [oracle]
//! family = "onemax"
//!
//! [dreinforce]
//! mh_flip_count = 4
//! ```

use std::fmt;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::bridge::{EndpointOptions, Transport, DEFAULT_MAX_LINE};
use crate::fingerprint::SimilarityKind;
use crate::oracle::DEFAULT_BUDGET;
use crate::search::{DReinforceConfig, GaConfig};
use crate::synthetic::{Family, OracleSpec};

/// A config problem, with the 1-based line it points at when known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: Option<PathBuf>,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.path, self.line) {
            (Some(p), Some(l)) => write!(f, "{}:{l}: {}", p.display(), self.message),
            (Some(p), None) => write!(f, "{}: {}", p.display(), self.message),
            (None, Some(l)) => write!(f, "line {l}: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ga,
    Dreinforce,
    Random,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ga => "ga",
            Algorithm::Dreinforce => "dreinforce",
            Algorithm::Random => "random",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Fingerprint length: positive and a multiple of 4 (hex serialization).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct FpLen(usize);

impl FpLen {
    pub fn get(self) -> usize {
        self.0
    }
}

impl TryFrom<usize> for FpLen {
    type Error = String;
    fn try_from(v: usize) -> Result<Self, String> {
        if v == 0 || v % 4 != 0 {
            Err(format!("fp_len {v} must be a positive multiple of 4"))
        } else {
            Ok(Self(v))
        }
    }
}

impl From<FpLen> for usize {
    fn from(v: FpLen) -> usize {
        v.0
    }
}

/// A probability strictly between 0 and 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Density(f64);

impl Density {
    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Density {
    type Error = String;
    fn try_from(v: f64) -> Result<Self, String> {
        if v > 0.0 && v < 1.0 {
            Ok(Self(v))
        } else {
            Err(format!("density {v} must lie strictly between 0 and 1"))
        }
    }
}

impl From<Density> for f64 {
    fn from(v: Density) -> f64 {
        v.0
    }
}

fn default_budget() -> NonZeroUsize {
    NonZeroUsize::new(DEFAULT_BUDGET).unwrap()
}
fn default_fp_len() -> FpLen {
    FpLen(4096)
}
fn default_n_seeds() -> NonZeroUsize {
    NonZeroUsize::new(5).unwrap()
}
fn default_pool_size() -> NonZeroUsize {
    NonZeroUsize::new(1024).unwrap()
}
fn default_density() -> Density {
    Density(0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_budget")]
    pub budget: NonZeroUsize,
    #[serde(default = "default_fp_len")]
    pub fp_len: FpLen,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_n_seeds")]
    pub n_seeds: NonZeroUsize,
    /// Output root; relative paths resolve against the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Seed-pool file; without one, a random pool is drawn from the master seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_pool: Option<PathBuf>,
    /// Size of the random pool.
    #[serde(default = "default_pool_size")]
    pub pool_size: NonZeroUsize,
    /// Bit density of the random pool.
    #[serde(default = "default_density")]
    pub pool_density: Density,
    #[serde(default)]
    pub diversity_similarity: SimilarityKind,
}

fn default_timeout() -> f64 {
    60.0
}

/// The `[oracle]` section: a synthetic family or an external server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OracleConfig {
    #[serde(rename = "onemax")]
    OneMax {
        #[serde(default)]
        seed: u64,
    },
    HiddenTarget {
        #[serde(default)]
        similarity: SimilarityKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target_ones: Option<usize>,
        #[serde(default)]
        seed: u64,
    },
    Nk {
        k: usize,
        #[serde(default)]
        seed: u64,
    },
    Ising {
        #[serde(default = "default_ising_degree")]
        degree: usize,
        #[serde(default)]
        seed: u64,
    },
    External {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        command: Option<Vec<String>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        socket: Option<PathBuf>,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
    },
}

fn default_ising_degree() -> usize {
    3
}

impl OracleConfig {
    /// The synthetic spec, or `None` for an external oracle.
    pub fn synthetic(&self, fp_len: usize) -> Option<OracleSpec> {
        let (family, seed) = match self {
            OracleConfig::OneMax { seed } => (Family::OneMax {}, *seed),
            OracleConfig::HiddenTarget {
                similarity,
                target_ones,
                seed,
            } => (
                Family::HiddenTarget {
                    similarity: *similarity,
                    target_ones: *target_ones,
                },
                *seed,
            ),
            OracleConfig::Nk { k, seed } => (Family::Nk { k: *k }, *seed),
            OracleConfig::Ising { degree, seed } => (Family::Ising { degree: *degree }, *seed),
            OracleConfig::External { .. } => return None,
        };
        Some(OracleSpec::new(family, fp_len, seed))
    }

    /// Transport and options for an external oracle.
    pub fn endpoint(&self) -> Option<(Transport, EndpointOptions)> {
        let OracleConfig::External {
            command,
            socket,
            timeout_secs,
        } = self
        else {
            return None;
        };
        let transport = match (command, socket) {
            (Some(c), None) => Transport::Command(c.clone()),
            (None, Some(s)) => Transport::Socket(s.clone()),
            _ => return None,
        };
        Some((
            transport,
            EndpointOptions {
                timeout: Duration::from_secs_f64(*timeout_secs),
                max_line: DEFAULT_MAX_LINE,
            },
        ))
    }
}

/// A whole experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub oracle: OracleConfig,
    #[serde(default)]
    pub ga: GaConfig,
    #[serde(default)]
    pub dreinforce: DReinforceConfig,
}

impl RunConfig {
    /// Parses and validates. Paths stay as written.
    pub fn from_toml(src: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(src).map_err(|e| {
            let line = e.span().map(|s| line_of(src, s.start));
            let message = e.message().to_string();
            ConfigError {
                path: None,
                line: line.map(|l| refine_unknown_field(src, l, &message)),
                message,
            }
        })?;
        cfg.validate(src)?;
        Ok(cfg)
    }

    /// Reads a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let src = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: Some(path.to_path_buf()),
            line: None,
            message: e.to_string(),
        })?;
        let mut cfg = Self::from_toml(&src).map_err(|e| ConfigError {
            path: Some(path.to_path_buf()),
            ..e
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Makes relative paths absolute against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.experiment.seed_pool.as_mut().map(fix);
        self.experiment.output_dir.as_mut().map(fix);
        if let OracleConfig::External { socket: Some(s), .. } = &mut self.oracle {
            fix(s);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn fp_len(&self) -> usize {
        self.experiment.fp_len.get()
    }

    pub fn budget(&self) -> usize {
        self.experiment.budget.get()
    }

    fn validate(&self, src: &str) -> Result<(), ConfigError> {
        let err = |section: &str, key: &str, message: String| ConfigError {
            path: None,
            line: locate(src, section, key),
            message,
        };
        let e = &self.experiment;
        if e.algorithms.is_empty() {
            return Err(err("experiment", "algorithms", "algorithms must list at least one of ga, dreinforce, random".into()));
        }
        let mut seen = e.algorithms.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != e.algorithms.len() {
            return Err(err("experiment", "algorithms", "algorithms lists an entry twice".into()));
        }
        let l = self.fp_len();
        let uses = |a| e.algorithms.contains(&a);
        if uses(Algorithm::Ga) {
            self.ga.validate(l).map_err(|x| keyed_err(src, "ga", x))?;
        }
        if uses(Algorithm::Dreinforce) {
            self.dreinforce.validate(l).map_err(|x| keyed_err(src, "dreinforce", x))?;
        }
        let pop = [
            (uses(Algorithm::Ga), self.ga.population_size),
            (uses(Algorithm::Dreinforce), self.dreinforce.population_size),
        ]
        .iter()
        .filter(|(u, _)| *u)
        .map(|(_, p)| *p)
        .max()
        .unwrap_or(0);
        if pop > self.budget() {
            return Err(err(
                "experiment",
                "budget",
                format!("budget {} is smaller than the population size {pop}", self.budget()),
            ));
        }
        if e.seed_pool.is_none() && e.pool_size.get() < pop {
            return Err(err(
                "experiment",
                "pool_size",
                format!("pool_size {} is smaller than the population size {pop}", e.pool_size),
            ));
        }
        if let OracleConfig::External {
            command,
            socket,
            timeout_secs,
        } = &self.oracle
        {
            match (command, socket) {
                (Some(c), None) if c.is_empty() => {
                    return Err(err("oracle", "command", "command must not be empty".into()))
                }
                (Some(_), None) | (None, Some(_)) => {}
                _ => {
                    return Err(err(
                        "oracle",
                        "family",
                        "an external oracle needs exactly one of `command` or `socket`".into(),
                    ))
                }
            }
            if !(timeout_secs.is_finite() && *timeout_secs > 0.0) {
                return Err(err("oracle", "timeout_secs", format!("timeout_secs {timeout_secs} must be positive")));
            }
        } else {
            let spec = self.oracle.synthetic(l).expect("synthetic");
            crate::synthetic::validate_spec(&spec).map_err(|x| err("oracle", "family", x.to_string()))?;
        }
        Ok(())
    }
}

/// Search-config messages start with the offending key, possibly dotted
/// into a subsection (`local_search.offspring_size ...`).
fn keyed_err(src: &str, section: &str, e: crate::search::SearchError) -> ConfigError {
    let message = e.to_string();
    let inner = match &e {
        crate::search::SearchError::InvalidConfig(m) => m.as_str(),
        _ => "",
    };
    let word = inner.split_whitespace().next().unwrap_or("");
    let (sub, key) = match word.rsplit_once('.') {
        Some((sub, key)) => (format!("{section}.{sub}"), key),
        None => (section.to_string(), word),
    };
    let line = locate(src, &sub, key).or_else(|| locate(src, section, ""));
    ConfigError {
        path: None,
        line,
        message,
    }
}

/// Tagged tables report unknown keys at the table header; move to the key itself.
fn refine_unknown_field(src: &str, line: usize, message: &str) -> usize {
    let Some(name) = message
        .strip_prefix("unknown field `")
        .and_then(|r| r.split('`').next())
    else {
        return line;
    };
    for (i, raw) in src.lines().enumerate().skip(line.saturating_sub(1)) {
        let t = raw.trim();
        if i + 1 > line && t.starts_with('[') {
            break;
        }
        if t.split_once('=').is_some_and(|(k, _)| k.trim() == name) {
            return i + 1;
        }
    }
    line
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Line of `key = ...` inside `[section]`, or of the section header when the
/// key is empty or absent.
fn locate(src: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == section && header.is_none() {
                header = Some(i + 1);
            }
            continue;
        }
        if current == section && !key.is_empty() {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    header
}
