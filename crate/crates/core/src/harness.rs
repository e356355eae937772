//! Multi-seed experiment runner and its on-disk layout.
//!
//! ```text
//! <out>/manifest.json
//! <out>/aggregate.csv            oracle,algorithm,metric,mean,std,n_seeds
//! <out>/table.md
//! <out>/runs/<oracle>/<algo>/seed<i>/trace.csv
//!                                  /summary.csv
//!                                  /run.json
//!                                  /policy.txt   (dreinforce)
//!                                  /aux.csv      (oracles with aux scorers)
//! ```
//!
//! Every per-seed directory is self-contained: [`report`] recomputes its
//! metrics from `trace.csv` and `run.json` alone.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bridge::{BridgeClient, EndpointOptions, ExternalOracle, OracleDescriptor, ProtocolError, Transport};
use crate::config::{Algorithm, ConfigError, RunConfig};
use crate::fingerprint::{Fingerprint, FingerprintError, SimilarityKind};
use crate::metrics::{
    aggregate, compute_metrics, top_entries, AggregateReport, MetricTable, MetricsError, MetricsOptions, RunSummary,
    StopReason, SA_TOP100,
};
use crate::oracle::{format_score, BudgetedOracle, EvalTrace, Oracle, OracleError, TraceEntry, TraceIoError};
use crate::search::{run_ga_baseline, run_random_search, DReinforce, SearchError};
use crate::synthetic::make_oracle;

/// Name of the auxiliary synthetic-accessibility scorer.
pub const SA_AUX: &str = "sa";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("seed pool {path}: {message}")]
    Pool { path: PathBuf, message: String },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Trace(#[from] TraceIoError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    /// Process exit status: 2 for bad input, 3 for oracle protocol failures,
    /// 4 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Pool { .. } => 2,
            HarnessError::Protocol(_)
            | HarnessError::Search(SearchError::Oracle(OracleError::Protocol(_))) => 3,
            _ => 4,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Per-run seed: the first 8 bytes of
/// `SHA-256(master_le || index_le || oracle || 0x00 || algorithm)`.
///
/// Adding an algorithm or oracle never changes the seeds of existing runs.
pub fn derive_seed(master: u64, index: u64, oracle: &str, algorithm: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(index.to_le_bytes());
    h.update(oracle.as_bytes());
    h.update([0u8]);
    h.update(algorithm.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("32-byte digest"))
}

/// Starting fingerprints, stored as `#fp_len=<L>` followed by one canonical
/// hex fingerprint per line.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedPool {
    pub fp_len: usize,
    pub fingerprints: Vec<Fingerprint>,
}

impl SeedPool {
    /// `count` fingerprints whose bits are set independently with probability `density`.
    pub fn generate(fp_len: usize, count: usize, density: f64, seed: u64) -> Result<Self, FingerprintError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fingerprints = (0..count)
            .map(|_| Fingerprint::from_bits((0..fp_len).map(|_| rng.random_bool(density))))
            .collect::<Result<_, _>>()?;
        Ok(Self { fp_len, fingerprints })
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "#fp_len={}", self.fp_len)?;
        for fp in &self.fingerprints {
            writeln!(out, "{}", fp.to_hex().map_err(std::io::Error::other)?)?;
        }
        out.flush()
    }

    /// Parses a pool. Errors carry the 1-based line number.
    pub fn read<R: Read>(input: R) -> Result<Self, (usize, String)> {
        let mut fp_len = None;
        let mut fingerprints = Vec::new();
        for (i, line) in BufReader::new(input).lines().enumerate() {
            let n = i + 1;
            let line = line.map_err(|e| (n, e.to_string()))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            match fp_len {
                None => {
                    let v = line
                        .strip_prefix("#fp_len=")
                        .ok_or((n, "expected a `#fp_len=<L>` header".to_string()))?;
                    fp_len = Some(v.trim().parse::<usize>().map_err(|e| (n, format!("bad fp_len: {e}")))?);
                }
                Some(l) => {
                    let fp = Fingerprint::from_hex_with_len(line, l).map_err(|e| (n, e.to_string()))?;
                    fingerprints.push(fp);
                }
            }
        }
        let fp_len = fp_len.ok_or((1, "empty pool file".to_string()))?;
        Ok(Self { fp_len, fingerprints })
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let f = File::open(path).map_err(|e| HarnessError::Pool {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::read(f).map_err(|(line, message)| HarnessError::Pool {
            path: path.to_path_buf(),
            message: format!("line {line}: {message}"),
        })
    }
}

/// Writes a generated pool to `path`.
pub fn gen_seed_pool(fp_len: usize, count: usize, density: f64, seed: u64, path: &Path) -> Result<SeedPool, HarnessError> {
    if count == 0 {
        return Err(HarnessError::Runtime("pool count must be at least 1".into()));
    }
    if !(density > 0.0 && density < 1.0) {
        return Err(HarnessError::Runtime(format!("density {density} must lie strictly between 0 and 1")));
    }
    if fp_len == 0 || fp_len % 4 != 0 {
        return Err(HarnessError::Runtime(format!("fp_len {fp_len} must be a positive multiple of 4")));
    }
    let pool = SeedPool::generate(fp_len, count, density, seed).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    let f = File::create(path).map_err(io_err(path))?;
    pool.write(BufWriter::new(f)).map_err(io_err(path))?;
    Ok(pool)
}

/// Per-seed metadata, written as `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMeta {
    pub oracle: String,
    pub algorithm: String,
    /// 1-based seed index within the experiment.
    pub index: u64,
    pub seed: u64,
    pub budget: usize,
    pub fp_len: usize,
    pub evaluations: usize,
    pub stop_reason: String,
    pub diversity_similarity: SimilarityKind,
}

fn stop_name(s: StopReason) -> &'static str {
    match s {
        StopReason::BudgetExhausted => "budget_exhausted",
        StopReason::Stalled => "stalled",
        StopReason::IterationLimit => "iteration_limit",
    }
}

/// One finished run, as recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    #[serde(flatten)]
    pub meta: RunMeta,
    pub dir: PathBuf,
    pub best_score: f64,
    pub wall_secs: f64,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: String,
    started_unix: u64,
    wall_clock_secs: f64,
    runs: &'a [RunRecord],
}

/// What [`run_experiment`] produced.
#[derive(Debug)]
pub struct ExperimentOutput {
    pub root: PathBuf,
    pub runs: Vec<RunRecord>,
    pub summaries: Vec<RunSummary>,
    /// `None` when each group has a single seed.
    pub aggregate: Option<AggregateReport>,
}

enum OracleSource {
    Synthetic(Arc<dyn Oracle>),
    External(Transport, EndpointOptions),
}

impl OracleSource {
    fn open(&self, fp_len: usize) -> Result<Arc<dyn Oracle>, HarnessError> {
        match self {
            OracleSource::Synthetic(o) => Ok(o.clone()),
            OracleSource::External(t, opts) => Ok(Arc::new(ExternalOracle::connect(t, opts.clone(), Some(fp_len))?)),
        }
    }
}

/// Directory-safe version of an oracle name.
fn dir_name(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    if s.is_empty() || s.chars().all(|c| c == '.') {
        "oracle".into()
    } else {
        s
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<(), HarnessError>) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(io_err(path))
}

/// Mean native SA (`1 + 9x`) over `top`, if the oracle reported it for all of them.
fn sa_top(oracle: &dyn Oracle, top: &[TraceEntry]) -> Option<f64> {
    if top.is_empty() || !oracle.aux_names().iter().any(|n| n == SA_AUX) {
        return None;
    }
    let vals: Option<Vec<f64>> = top.iter().map(|e| oracle.aux_score(SA_AUX, &e.fingerprint)).collect();
    let vals = vals?;
    Some(vals.iter().map(|x| 1.0 + 9.0 * x).sum::<f64>() / vals.len() as f64)
}

struct Job {
    algorithm: Algorithm,
    index: u64,
}

fn run_job(
    cfg: &RunConfig,
    job: &Job,
    source: &OracleSource,
    oracle_name: &str,
    pool: &[Fingerprint],
    root: &Path,
) -> Result<(RunRecord, RunSummary), HarnessError> {
    let started = Instant::now();
    let algo = job.algorithm.name();
    let seed = derive_seed(cfg.experiment.master_seed, job.index, oracle_name, algo);
    let inner = source.open(cfg.fp_len())?;
    let oracle = BudgetedOracle::new(inner.clone(), cfg.budget());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir = root
        .join("runs")
        .join(dir_name(oracle_name))
        .join(algo)
        .join(format!("seed{}", job.index));
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let opts = MetricsOptions {
        diversity_similarity: cfg.experiment.diversity_similarity,
    };

    let (result, policy) = match job.algorithm {
        Algorithm::Ga => (run_ga_baseline(&cfg.ga, &oracle, pool, &mut rng)?, None),
        Algorithm::Random => (run_random_search(&oracle, pool, &mut rng)?, None),
        Algorithm::Dreinforce => {
            let mut d = DReinforce::new(cfg.dreinforce.clone(), &oracle, pool, &mut rng)?;
            d.run(None)?;
            let policy = d.policy().clone();
            (d.into_result()?, Some(policy))
        }
    };
    let mut result = result.with_options(opts)?;
    if let Some(sa) = sa_top(inner.as_ref(), &result.top_candidates) {
        result.metrics.set(SA_TOP100, sa);
    }

    let trace_path = dir.join("trace.csv");
    write_file(&trace_path, |w| Ok(result.trace.write_csv(w, true)?))?;
    let summary_path = dir.join("summary.csv");
    write_file(&summary_path, |w| Ok(result.metrics.write_csv(w)?))?;
    if let Some(p) = policy {
        let path = dir.join("policy.txt");
        write_file(&path, |w| p.write_checkpoint(w).map_err(|e| HarnessError::Runtime(e.to_string())))?;
    }
    if inner.aux_names().iter().any(|n| n == SA_AUX) {
        let path = dir.join("aux.csv");
        write_file(&path, |w| write_aux_csv(w, inner.as_ref(), &result.trace).map_err(io_err(&path)))?;
    }
    let meta = RunMeta {
        oracle: oracle_name.to_string(),
        algorithm: algo.to_string(),
        index: job.index,
        seed,
        budget: cfg.budget(),
        fp_len: cfg.fp_len(),
        evaluations: result.trace.len(),
        stop_reason: stop_name(result.stop_reason).to_string(),
        diversity_similarity: cfg.experiment.diversity_similarity,
    };
    let path = dir.join("run.json");
    write_file(&path, |w| {
        serde_json::to_writer_pretty(&mut *w, &meta).map_err(|e| HarnessError::Runtime(e.to_string()))?;
        writeln!(w).map_err(io_err(&path))
    })?;
    if result.trace.len() > cfg.budget() {
        return Err(HarnessError::Runtime(format!(
            "run {} recorded {} evaluations over a budget of {}",
            dir.display(),
            result.trace.len(),
            cfg.budget()
        )));
    }
    let summary = RunSummary {
        oracle: oracle_name.to_string(),
        algorithm: algo.to_string(),
        seed,
        metrics: result.metrics.clone(),
    };
    let record = RunRecord {
        meta,
        dir,
        best_score: result.best_score(),
        wall_secs: started.elapsed().as_secs_f64(),
    };
    Ok((record, summary))
}

fn write_aux_csv<W: Write>(w: &mut W, oracle: &dyn Oracle, trace: &EvalTrace) -> std::io::Result<()> {
    writeln!(w, "call_index,{SA_AUX}")?;
    for e in trace.iter() {
        let v = oracle.aux_score(SA_AUX, &e.fingerprint).map(format_score).unwrap_or_default();
        writeln!(w, "{},{v}", e.call_index)?;
    }
    Ok(())
}

/// Runs every (algorithm, seed) pair of `cfg` and writes the output tree
/// under `root`. Synthetic runs execute in parallel.
pub fn run_experiment(cfg: &RunConfig, root: &Path) -> Result<ExperimentOutput, HarnessError> {
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let l = cfg.fp_len();

    let (source, oracle_name) = match cfg.oracle.synthetic(l) {
        Some(spec) => {
            let o = make_oracle(&spec).map_err(|e| HarnessError::Runtime(e.to_string()))?;
            (OracleSource::Synthetic(Arc::new(o)), spec.family.name().to_string())
        }
        None => {
            let (t, opts) = cfg.oracle.endpoint().expect("validated external oracle");
            let d = check_endpoint(&t, &opts, Some(l))?;
            (OracleSource::External(t, opts), d.oracle)
        }
    };

    let pool = match &cfg.experiment.seed_pool {
        Some(path) => {
            let p = SeedPool::load(path)?;
            if p.fp_len != l {
                return Err(HarnessError::Pool {
                    path: path.clone(),
                    message: format!("pool fp_len {} does not match experiment fp_len {l}", p.fp_len),
                });
            }
            p.fingerprints
        }
        None => {
            let seed = derive_seed(cfg.experiment.master_seed, 0, &oracle_name, "seed-pool");
            SeedPool::generate(l, cfg.experiment.pool_size.get(), cfg.experiment.pool_density.get(), seed)
                .map_err(|e| HarnessError::Runtime(e.to_string()))?
                .fingerprints
        }
    };

    let jobs: Vec<Job> = cfg
        .experiment
        .algorithms
        .iter()
        .flat_map(|&algorithm| (1..=cfg.experiment.n_seeds.get() as u64).map(move |index| Job { algorithm, index }))
        .collect();
    fs::create_dir_all(root).map_err(io_err(root))?;
    let work = |job: &Job| run_job(cfg, job, &source, &oracle_name, &pool, root);
    let results: Vec<Result<_, _>> = match source {
        OracleSource::Synthetic(_) => jobs.par_iter().map(work).collect(),
        // one server process or connection at a time
        OracleSource::External(..) => jobs.iter().map(work).collect(),
    };
    let (runs, summaries): (Vec<_>, Vec<_>) = results.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter().unzip();

    let aggregate = if cfg.experiment.n_seeds.get() >= 2 {
        let report = aggregate(&summaries)?;
        let path = root.join("aggregate.csv");
        write_file(&path, |w| Ok(report.write_csv(w)?))?;
        let path = root.join("table.md");
        fs::write(&path, report.to_markdown()).map_err(io_err(&path))?;
        Some(report)
    } else {
        None
    };

    let manifest = Manifest {
        tool: "fpopt",
        version: env!("CARGO_PKG_VERSION"),
        config: cfg.to_toml(),
        started_unix,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        runs: &runs,
    };
    let path = root.join("manifest.json");
    write_file(&path, |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest).map_err(|e| HarnessError::Runtime(e.to_string()))?;
        writeln!(w).map_err(io_err(&path))
    })?;

    Ok(ExperimentOutput {
        root: root.to_path_buf(),
        runs,
        summaries,
        aggregate,
    })
}

/// Handshake with an endpoint and shut it down again.
fn check_endpoint(t: &Transport, opts: &EndpointOptions, fp_len: Option<usize>) -> Result<OracleDescriptor, ProtocolError> {
    let mut c = BridgeClient::open(t, opts.clone())?;
    let d = match fp_len {
        Some(l) => c.handshake_expect(l),
        None => c.handshake(),
    };
    c.shutdown();
    d
}

/// Result of [`oracle_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub descriptor: OracleDescriptor,
    /// The probe fingerprints and their scores.
    pub probes: Vec<(Fingerprint, f64)>,
}

/// Handshake plus three single-fingerprint round trips.
pub fn oracle_check(t: &Transport, opts: EndpointOptions, fp_len: Option<usize>) -> Result<CheckReport, ProtocolError> {
    let mut c = BridgeClient::open(t, opts)?;
    let descriptor = match fp_len {
        Some(l) => c.handshake_expect(l)?,
        None => c.handshake()?,
    };
    let pool = SeedPool::generate(descriptor.fp_len, 3, 0.5, 0).expect("positive length");
    let mut probes = Vec::with_capacity(3);
    for fp in pool.fingerprints {
        let r = c.eval_batch(std::slice::from_ref(&fp))?;
        probes.push((fp, r.scores[0]));
    }
    c.shutdown();
    Ok(CheckReport { descriptor, probes })
}

/// One per-seed directory as seen by [`report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportedRun {
    pub dir: PathBuf,
    pub meta: RunMeta,
    pub recomputed: MetricTable,
    /// The metrics stored in `summary.csv`, when present.
    pub stored: Option<MetricTable>,
}

impl ReportedRun {
    pub fn matches_summary(&self) -> bool {
        self.stored.as_ref() == Some(&self.recomputed)
    }
}

#[derive(Debug)]
pub struct ReportOutput {
    pub runs: Vec<ReportedRun>,
    pub aggregate: Option<AggregateReport>,
}

fn read_aux_csv(path: &Path) -> Result<HashMap<usize, f64>, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let bad = || HarnessError::Runtime(format!("{}: line {}: malformed aux row", path.display(), i + 1));
        let (idx, v) = line.split_once(',').ok_or_else(bad)?;
        if v.is_empty() {
            continue;
        }
        out.insert(idx.parse().map_err(|_| bad())?, v.parse().map_err(|_| bad())?);
    }
    Ok(out)
}

/// Recomputes metrics for one per-seed directory from its trace alone.
pub fn recompute_run(dir: &Path) -> Result<ReportedRun, HarnessError> {
    let meta_path = dir.join("run.json");
    let meta_text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let meta: RunMeta = serde_json::from_str(&meta_text)
        .map_err(|e| HarnessError::Runtime(format!("{}: {e}", meta_path.display())))?;
    let trace_path = dir.join("trace.csv");
    let trace = EvalTrace::read_csv(File::open(&trace_path).map_err(io_err(&trace_path))?)?;
    let mut recomputed = compute_metrics(
        &trace,
        meta.budget,
        MetricsOptions {
            diversity_similarity: meta.diversity_similarity,
        },
    )?;
    let aux_path = dir.join("aux.csv");
    if aux_path.exists() {
        let aux = read_aux_csv(&aux_path)?;
        let top = top_entries(&trace, crate::metrics::TOP_CANDIDATES);
        let vals: Option<Vec<f64>> = top.iter().map(|e| aux.get(&e.call_index).copied()).collect();
        if let Some(v) = vals.filter(|v| !v.is_empty()) {
            recomputed.set(SA_TOP100, v.iter().map(|x| 1.0 + 9.0 * x).sum::<f64>() / v.len() as f64);
        }
    }
    let summary_path = dir.join("summary.csv");
    let stored = if summary_path.exists() {
        Some(MetricTable::read_csv(File::open(&summary_path).map_err(io_err(&summary_path))?)?)
    } else {
        None
    };
    Ok(ReportedRun {
        dir: dir.to_path_buf(),
        meta,
        recomputed,
        stored,
    })
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        if entry.file_type().map_err(io_err(dir))?.is_dir() {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

/// Recomputes every run at or below `path` (a directory holding `run.json`)
/// and aggregates them.
pub fn report(path: &Path) -> Result<ReportOutput, HarnessError> {
    let mut dirs = Vec::new();
    find_runs(path, &mut dirs)?;
    let mut runs = dirs.iter().map(|d| recompute_run(d)).collect::<Result<Vec<_>, _>>()?;
    if runs.is_empty() {
        return Err(HarnessError::Runtime(format!("no runs found under {}", path.display())));
    }
    runs.sort_by(|a, b| {
        (&a.meta.oracle, &a.meta.algorithm, a.meta.index).cmp(&(&b.meta.oracle, &b.meta.algorithm, b.meta.index))
    });
    let summaries: Vec<RunSummary> = runs
        .iter()
        .map(|r| RunSummary {
            oracle: r.meta.oracle.clone(),
            algorithm: r.meta.algorithm.clone(),
            seed: r.meta.seed,
            metrics: r.recomputed.clone(),
        })
        .collect();
    let aggregate = match aggregate(&summaries) {
        Ok(a) => Some(a),
        Err(MetricsError::TooFewRuns { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(ReportOutput { runs, aggregate })
}

fn find_runs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), HarnessError> {
    if dir.join("run.json").is_file() {
        out.push(dir.to_path_buf());
        return Ok(());
    }
    for sub in sorted_subdirs(dir)? {
        find_runs(&sub, out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_stable_and_independent() {
        let a = derive_seed(0, 1, "onemax", "ga");
        assert_eq!(a, derive_seed(0, 1, "onemax", "ga"));
        assert_ne!(a, derive_seed(0, 2, "onemax", "ga"));
        assert_ne!(a, derive_seed(1, 1, "onemax", "ga"));
        assert_ne!(a, derive_seed(0, 1, "onemax", "dreinforce"));
        // the separator keeps name boundaries unambiguous
        assert_ne!(derive_seed(0, 1, "ab", "c"), derive_seed(0, 1, "a", "bc"));
    }

    #[test]
    fn pool_round_trip_and_errors() {
        let pool = SeedPool::generate(64, 5, 0.25, 1).unwrap();
        let mut buf = Vec::new();
        pool.write(&mut buf).unwrap();
        assert!(buf.starts_with(b"#fp_len=64\n"));
        assert_eq!(SeedPool::read(&buf[..]).unwrap(), pool);

        assert_eq!(SeedPool::read(&b"ffff\n"[..]).unwrap_err().0, 1);
        assert_eq!(SeedPool::read(&b"#fp_len=8\nff\nf\n"[..]).unwrap_err().0, 3);
        assert_eq!(SeedPool::read(&b"#fp_len=8\n\nzz\n"[..]).unwrap_err().0, 3);
    }

    #[test]
    fn single_entry_pool_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pool.txt");
        gen_seed_pool(8, 1, 0.5, 0, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(gen_seed_pool(8, 0, 0.5, 0, &path).is_err());
        assert!(gen_seed_pool(8, 1, 1.0, 0, &path).is_err());
    }

    #[test]
    fn pool_density_matches_binomial() {
        let (len, count) = (4096, 1000);
        let pool = SeedPool::generate(len, count, 1.0 / 64.0, 11).unwrap();
        let mean = pool.fingerprints.iter().map(|f| f.count_ones()).sum::<usize>() as f64 / count as f64;
        // mean of `count` Binomial(4096, 1/64) popcounts
        let sd = (len as f64 * (1.0 / 64.0) * (63.0 / 64.0) / count as f64).sqrt();
        assert!((mean - 64.0).abs() < 3.0 * sd, "{mean}");
    }

    #[test]
    fn exit_codes() {
        let cfg = HarnessError::Config(ConfigError {
            path: None,
            line: Some(1),
            message: "x".into(),
        });
        assert_eq!(cfg.exit_code(), 2);
        assert_eq!(HarnessError::Protocol(ProtocolError::Closed).exit_code(), 3);
        let nested = HarnessError::Search(SearchError::Oracle(OracleError::Protocol(ProtocolError::Closed)));
        assert_eq!(nested.exit_code(), 3);
        assert_eq!(HarnessError::Runtime("x".into()).exit_code(), 4);
    }

    #[test]
    fn dir_names_are_safe() {
        assert_eq!(dir_name("hidden-target"), "hidden-target");
        assert_eq!(dir_name("../qed"), ".._qed");
        assert_eq!(dir_name(".."), "oracle");
        assert_eq!(dir_name("a b/c"), "a_b_c");
    }
}
