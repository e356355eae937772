//! Sample-efficiency metrics over an evaluation trace, and multi-seed aggregation.
//!
//! All metrics are pure functions of the trace of unique evaluations:
//!
//! * `top{K}_avg`: mean of the K best scores (fewer if the trace is shorter).
//! * `auc_top{K}`: `(1/B) Σ_{t=1..B} topK_avg(first t calls)`, holding the last
//!   value constant past the end of a run that stopped early.
//! * `diversity_top100`: 1 minus mean pairwise similarity of the 100 best
//!   fingerprints.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use thiserror::Error;

use crate::fingerprint::{self, FingerprintError, SimilarityKind};
use crate::oracle::{format_score, EvalTrace, TraceEntry};

pub const TOP1_AVG: &str = "top1_avg";
pub const TOP10_AVG: &str = "top10_avg";
pub const TOP100_AVG: &str = "top100_avg";
pub const AUC_TOP10: &str = "auc_top10";
pub const AUC_TOP100: &str = "auc_top100";
pub const DIVERSITY_TOP100: &str = "diversity_top100";
/// Mean synthetic accessibility (native 1–10 scale) of the top 100, when the oracle reports it.
pub const SA_TOP100: &str = "sa_top100";

/// The six standard metrics, in report order.
pub const STANDARD_METRICS: [&str; 6] = [
    TOP1_AVG,
    TOP10_AVG,
    TOP100_AVG,
    AUC_TOP10,
    AUC_TOP100,
    DIVERSITY_TOP100,
];

/// Size of the candidate list kept on a [`RunResult`].
pub const TOP_CANDIDATES: usize = 100;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("K must be positive")]
    ZeroK,
    #[error("budget must be positive")]
    ZeroBudget,
    #[error("trace has {len} entries, more than the budget {budget}")]
    TraceExceedsBudget { len: usize, budget: usize },
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
    #[error("group {oracle}/{algorithm} has {n} run(s); at least 2 are needed for a std")]
    TooFewRuns {
        oracle: String,
        algorithm: String,
        n: usize,
    },
    #[error("group {oracle}/{algorithm}: runs report different metrics ({a:?} vs {b:?})")]
    SchemaMismatch {
        oracle: String,
        algorithm: String,
        a: Vec<String>,
        b: Vec<String>,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("summary line {line}: {message}")]
    Summary { line: usize, message: String },
}

fn mean_of_desc(top: &[f64]) -> f64 {
    top.iter().sum::<f64>() / top.len() as f64
}

/// Mean of the `k` highest scores, or of all of them if there are fewer.
pub fn top_k_average(scores: &[f64], k: usize) -> Result<f64, MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    if scores.is_empty() {
        return Err(MetricsError::EmptyTrace);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.truncate(k);
    Ok(mean_of_desc(&sorted))
}

/// `topK_avg` of every prefix of `scores`, maintained incrementally.
pub fn top_k_curve(scores: &[f64], k: usize) -> Result<Vec<f64>, MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    let mut top: Vec<f64> = Vec::with_capacity(k + 1);
    let mut current = 0.0;
    let mut curve = Vec::with_capacity(scores.len());
    for &s in scores {
        let changed = if top.len() < k {
            true
        } else {
            s > top[k - 1]
        };
        if changed {
            let pos = top.partition_point(|&x| x >= s);
            top.insert(pos, s);
            top.truncate(k);
            current = mean_of_desc(&top);
        }
        curve.push(current);
    }
    Ok(curve)
}

/// Budget-normalized area under the top-K-so-far curve.
pub fn top_k_auc(scores: &[f64], k: usize, budget: usize) -> Result<f64, MetricsError> {
    if budget == 0 {
        return Err(MetricsError::ZeroBudget);
    }
    if scores.len() > budget {
        return Err(MetricsError::TraceExceedsBudget {
            len: scores.len(),
            budget,
        });
    }
    Ok(curve_auc(&top_k_curve(scores, k)?, budget))
}

/// Area under a top-K-so-far curve, normalized by `budget`, with the last
/// value held out to `budget` calls.
///
/// Each run of equal values is weighted by its share of the budget, so a
/// flat curve integrates to exactly its value.
pub fn curve_auc(curve: &[f64], budget: usize) -> f64 {
    let mut total = 0.0;
    let mut i = 0;
    while i < curve.len() {
        let v = curve[i];
        let mut j = i + 1;
        while j < curve.len() && curve[j] == v {
            j += 1;
        }
        let width = if j == curve.len() { budget.max(j) - i } else { j - i };
        total += v * (width as f64 / budget as f64);
        i = j;
    }
    total
}

/// The `n` best entries, ties going to the earlier call.
pub fn top_entries(trace: &EvalTrace, n: usize) -> Vec<TraceEntry> {
    let mut entries: Vec<&TraceEntry> = trace.iter().collect();
    entries.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.call_index.cmp(&b.call_index)));
    entries.into_iter().take(n).cloned().collect()
}

/// Ordered metric-name → value table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricTable(Vec<(String, f64)>);

impl MetricTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces.
    pub fn set(&mut self, name: &str, value: f64) {
        match self.0.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = value,
            None => self.0.push((name.to_string(), value)),
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    pub fn names(&self) -> Vec<String> {
        self.0.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(n, v)| (n.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `metric,value` CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "value"])?;
        for (n, v) in self.iter() {
            w.write_record([n, format_score(v).as_str()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, MetricsError> {
        let mut rdr = csv::Reader::from_reader(input);
        if rdr.headers()?.iter().collect::<Vec<_>>() != ["metric", "value"] {
            return Err(MetricsError::Summary {
                line: 1,
                message: "expected header metric,value".into(),
            });
        }
        let mut table = Self::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let value = rec.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| MetricsError::Summary {
                line: i + 2,
                message: "unparsable value".into(),
            })?;
            table.set(rec.get(0).unwrap_or_default(), value);
        }
        Ok(table)
    }
}

/// Knobs that affect metric computation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsOptions {
    pub diversity_similarity: SimilarityKind,
}

/// Why a search loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    BudgetExhausted,
    /// Many consecutive rounds produced no new fingerprints (tiny search spaces).
    Stalled,
    /// A caller-imposed iteration cap was reached.
    IterationLimit,
}

/// The trace of one seeded run plus everything derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub trace: EvalTrace,
    pub budget: usize,
    pub metrics: MetricTable,
    pub top_candidates: Vec<TraceEntry>,
    pub stop_reason: StopReason,
}

impl RunResult {
    pub fn from_trace(
        trace: EvalTrace,
        budget: usize,
        stop_reason: StopReason,
        opts: MetricsOptions,
    ) -> Result<Self, MetricsError> {
        let metrics = compute_metrics(&trace, budget, opts)?;
        let top_candidates = top_entries(&trace, TOP_CANDIDATES);
        Ok(Self {
            trace,
            budget,
            metrics,
            top_candidates,
            stop_reason,
        })
    }

    /// Recomputes the metric table with different options.
    pub fn with_options(mut self, opts: MetricsOptions) -> Result<Self, MetricsError> {
        let mut fresh = compute_metrics(&self.trace, self.budget, opts)?;
        // keep auxiliary entries added by the caller
        for (n, v) in self.metrics.iter() {
            if fresh.get(n).is_none() {
                fresh.set(n, v);
            }
        }
        self.metrics = fresh;
        Ok(self)
    }

    pub fn best_score(&self) -> f64 {
        self.top_candidates.first().map_or(0.0, |e| e.score)
    }
}

/// The six standard metrics. Diversity is omitted when fewer than two
/// candidates exist.
pub fn compute_metrics(
    trace: &EvalTrace,
    budget: usize,
    opts: MetricsOptions,
) -> Result<MetricTable, MetricsError> {
    let scores = trace.scores();
    let mut t = MetricTable::new();
    t.set(TOP1_AVG, top_k_average(&scores, 1)?);
    t.set(TOP10_AVG, top_k_average(&scores, 10)?);
    t.set(TOP100_AVG, top_k_average(&scores, 100)?);
    t.set(AUC_TOP10, top_k_auc(&scores, 10, budget)?);
    t.set(AUC_TOP100, top_k_auc(&scores, 100, budget)?);
    let top = top_entries(trace, TOP_CANDIDATES);
    if top.len() >= 2 {
        t.set(
            DIVERSITY_TOP100,
            top_100_diversity(&top, opts.diversity_similarity)?,
        );
    }
    Ok(t)
}

/// Score-only metrics, for traces exported without fingerprints.
pub fn compute_score_metrics(scores: &[f64], budget: usize) -> Result<MetricTable, MetricsError> {
    let mut t = MetricTable::new();
    t.set(TOP1_AVG, top_k_average(scores, 1)?);
    t.set(TOP10_AVG, top_k_average(scores, 10)?);
    t.set(TOP100_AVG, top_k_average(scores, 100)?);
    t.set(AUC_TOP10, top_k_auc(scores, 10, budget)?);
    t.set(AUC_TOP100, top_k_auc(scores, 100, budget)?);
    Ok(t)
}

/// Diversity of a run's top candidates.
pub fn top_100_diversity(top: &[TraceEntry], sim: SimilarityKind) -> Result<f64, MetricsError> {
    let fps = top.iter().take(TOP_CANDIDATES).map(|e| &e.fingerprint);
    Ok(fingerprint::diversity(fps, sim)?)
}

/// One run's metrics, labelled for grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub oracle: String,
    pub algorithm: String,
    pub seed: u64,
    pub metrics: MetricTable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub oracle: String,
    pub algorithm: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
}

/// Mean and sample standard deviation per (oracle, algorithm, metric).
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    pub rows: Vec<AggregateRow>,
    /// Seeds per group, in input order.
    pub seeds: BTreeMap<(String, String), Vec<u64>>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups runs by (oracle, algorithm) in first-seen order.
pub fn aggregate(runs: &[RunSummary]) -> Result<AggregateReport, MetricsError> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String), Vec<&RunSummary>> = BTreeMap::new();
    for r in runs {
        let key = (r.oracle.clone(), r.algorithm.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    let mut rows = Vec::new();
    let mut seeds = BTreeMap::new();
    for key in order {
        let group = &groups[&key];
        let (oracle, algorithm) = key.clone();
        if group.len() < 2 {
            return Err(MetricsError::TooFewRuns {
                oracle,
                algorithm,
                n: group.len(),
            });
        }
        let names = group[0].metrics.names();
        for r in &group[1..] {
            let other = r.metrics.names();
            let mut a = names.clone();
            let mut b = other.clone();
            a.sort();
            b.sort();
            if a != b {
                return Err(MetricsError::SchemaMismatch {
                    oracle,
                    algorithm,
                    a: names,
                    b: other,
                });
            }
        }
        for metric in &names {
            let xs: Vec<f64> = group
                .iter()
                .map(|r| r.metrics.get(metric).expect("schema checked"))
                .collect();
            let (mean, std) = mean_std(&xs);
            rows.push(AggregateRow {
                oracle: oracle.clone(),
                algorithm: algorithm.clone(),
                metric: metric.clone(),
                mean,
                std,
                n_seeds: xs.len(),
            });
        }
        seeds.insert(key, group.iter().map(|r| r.seed).collect());
    }
    Ok(AggregateReport { rows, seeds })
}

impl AggregateReport {
    /// `oracle,algorithm,metric,mean,std,n_seeds` at full precision.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["oracle", "algorithm", "metric", "mean", "std", "n_seeds"])?;
        for r in &self.rows {
            w.write_record([
                r.oracle.as_str(),
                r.algorithm.as_str(),
                r.metric.as_str(),
                format_score(r.mean).as_str(),
                format_score(r.std).as_str(),
                r.n_seeds.to_string().as_str(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn get(&self, oracle: &str, algorithm: &str, metric: &str) -> Option<&AggregateRow> {
        self.rows
            .iter()
            .find(|r| r.oracle == oracle && r.algorithm == algorithm && r.metric == metric)
    }

    /// One Markdown table per metric: oracles as rows, algorithms as columns,
    /// cells `mean ± std` to three decimals.
    pub fn to_markdown(&self) -> String {
        let mut metrics: Vec<&str> = Vec::new();
        let mut oracles: Vec<&str> = Vec::new();
        let mut algos: Vec<&str> = Vec::new();
        for r in &self.rows {
            for (list, item) in [
                (&mut metrics, r.metric.as_str()),
                (&mut oracles, r.oracle.as_str()),
                (&mut algos, r.algorithm.as_str()),
            ] {
                if !list.contains(&item) {
                    list.push(item);
                }
            }
        }
        let mut out = String::new();
        for metric in metrics {
            let n = self
                .rows
                .iter()
                .find(|r| r.metric == metric)
                .map_or(0, |r| r.n_seeds);
            out.push_str(&format!("### {metric} ({n} runs)\n\n| oracle |"));
            for a in &algos {
                out.push_str(&format!(" {a} |"));
            }
            out.push_str("\n|---|");
            out.push_str(&"---|".repeat(algos.len()));
            out.push('\n');
            for o in &oracles {
                out.push_str(&format!("| {o} |"));
                for a in &algos {
                    match self.get(o, a, metric) {
                        Some(r) => out.push_str(&format!(" {} |", format_mean_std(r.mean, r.std))),
                        None => out.push_str(" – |"),
                    }
                }
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }
}

/// `0.990 ± 0.013`.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.3} ± {std:.3}")
}
