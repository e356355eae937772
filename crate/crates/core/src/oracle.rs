//! The black-box objective and its budgeted, caching wrapper.
//!
//! Every algorithm talks to the objective through a [`BudgetedOracle`]. It
//! charges one budget unit per *unique* fingerprint, answers repeats from its
//! cache for free, and records every paid evaluation in an [`EvalTrace`]. All
//! bookkeeping happens inside a single mutex so the budget bound holds exactly
//! no matter how many threads submit work.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::{Arc, Mutex, MutexGuard};

use thiserror::Error;

use crate::bridge::ProtocolError;
use crate::fingerprint::{Fingerprint, FingerprintError};

/// Default number of unique evaluations per run.
pub const DEFAULT_BUDGET: usize = 10_000;

#[derive(Debug, Error)]
pub enum OracleError {
    /// No budget is left for a fingerprint that is not cached. This is a
    /// control signal: drivers stop searching and finalize the run.
    #[error("oracle budget exhausted")]
    BudgetExhausted,
    #[error("fingerprint length {actual} does not match oracle length {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("oracle returned score {score} at batch index {index}, outside [0, 1]")]
    ScoreOutOfRange { index: usize, score: f64 },
    #[error("oracle returned {actual} scores for a batch of {expected}")]
    Arity { expected: usize, actual: usize },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
}

impl OracleError {
    pub fn is_budget_exhausted(&self) -> bool {
        matches!(self, OracleError::BudgetExhausted)
    }
}

/// A scoring function over fingerprints.
///
/// Implementations must be deterministic and return scores in `[0, 1]`, where
/// 1 is optimal.
pub trait Oracle: Send + Sync {
    fn name(&self) -> &str;

    /// The fingerprint length this oracle accepts.
    fn fp_len(&self) -> usize;

    fn evaluate(&self, fp: &Fingerprint) -> Result<f64, OracleError>;

    /// Scores a batch in order. Remote oracles override this to send one request.
    fn evaluate_batch(&self, fps: &[Fingerprint]) -> Result<Vec<f64>, OracleError> {
        fps.iter().map(|fp| self.evaluate(fp)).collect()
    }

    /// Names of auxiliary per-fingerprint scores this oracle can report (e.g. `"sa"`).
    fn aux_names(&self) -> Vec<String> {
        Vec::new()
    }

    /// Auxiliary score for a fingerprint this oracle has already evaluated.
    fn aux_score(&self, _name: &str, _fp: &Fingerprint) -> Option<f64> {
        None
    }
}

impl<T: Oracle + ?Sized> Oracle for Arc<T> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn fp_len(&self) -> usize {
        (**self).fp_len()
    }
    fn evaluate(&self, fp: &Fingerprint) -> Result<f64, OracleError> {
        (**self).evaluate(fp)
    }
    fn evaluate_batch(&self, fps: &[Fingerprint]) -> Result<Vec<f64>, OracleError> {
        (**self).evaluate_batch(fps)
    }
    fn aux_names(&self) -> Vec<String> {
        (**self).aux_names()
    }
    fn aux_score(&self, name: &str, fp: &Fingerprint) -> Option<f64> {
        (**self).aux_score(name, fp)
    }
}

/// One paid evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    /// 1-based position in discovery order.
    pub call_index: usize,
    pub fingerprint: Fingerprint,
    pub score: f64,
}

/// Unique evaluations in discovery order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalTrace {
    entries: Vec<TraceEntry>,
}

impl EvalTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    pub fn iter(&self) -> std::slice::Iter<'_, TraceEntry> {
        self.entries.iter()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.score).collect()
    }

    pub fn best(&self) -> Option<&TraceEntry> {
        // earliest wins on ties
        self.entries
            .iter()
            .fold(None, |best: Option<&TraceEntry>, e| match best {
                Some(b) if b.score >= e.score => Some(b),
                _ => Some(e),
            })
    }

    fn push(&mut self, fingerprint: Fingerprint, score: f64) {
        let call_index = self.entries.len() + 1;
        self.entries.push(TraceEntry {
            call_index,
            fingerprint,
            score,
        });
    }

    /// Builds a trace from `(fingerprint, score)` pairs in discovery order.
    pub fn from_pairs<I: IntoIterator<Item = (Fingerprint, f64)>>(pairs: I) -> Self {
        let mut trace = Self::new();
        for (fp, s) in pairs {
            trace.push(fp, s);
        }
        trace
    }

    /// Writes `call_index,score[,fingerprint_hex]`.
    pub fn write_csv<W: Write>(&self, out: W, with_fingerprints: bool) -> Result<(), TraceIoError> {
        let mut w = csv::Writer::from_writer(out);
        if with_fingerprints {
            w.write_record(["call_index", "score", "fingerprint_hex"])?;
        } else {
            w.write_record(["call_index", "score"])?;
        }
        for e in &self.entries {
            let idx = e.call_index.to_string();
            let score = format_score(e.score);
            if with_fingerprints {
                let hex = e.fingerprint.to_hex()?;
                w.write_record([idx.as_str(), score.as_str(), hex.as_str()])?;
            } else {
                w.write_record([idx.as_str(), score.as_str()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a trace written with fingerprints.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, TraceIoError> {
        let records = read_trace_records(input)?;
        let mut trace = Self::new();
        for (row, (score, fp)) in records.into_iter().enumerate() {
            let fp = fp.ok_or(TraceIoError::MissingFingerprints { row: row + 1 })?;
            trace.push(fp, score);
        }
        Ok(trace)
    }
}

/// Reads just the score column of a trace CSV, with or without fingerprints.
pub fn read_trace_scores<R: Read>(input: R) -> Result<Vec<f64>, TraceIoError> {
    Ok(read_trace_records(input)?
        .into_iter()
        .map(|(s, _)| s)
        .collect())
}

fn read_trace_records<R: Read>(input: R) -> Result<Vec<(f64, Option<Fingerprint>)>, TraceIoError> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let has_fp = match headers.iter().collect::<Vec<_>>().as_slice() {
        ["call_index", "score"] => false,
        ["call_index", "score", "fingerprint_hex"] => true,
        _ => return Err(TraceIoError::Header(headers.iter().collect::<Vec<_>>().join(","))),
    };
    let mut out = Vec::new();
    let mut fp_len = None;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let bad = |what: &str| TraceIoError::Row {
            line,
            message: what.to_string(),
        };
        let idx: usize = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad call_index"))?;
        if idx != row + 1 {
            return Err(bad(&format!("call_index {idx} out of sequence, expected {}", row + 1)));
        }
        let score: f64 = rec
            .get(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad score"))?;
        let fp = if has_fp {
            let hex = rec.get(2).ok_or_else(|| bad("missing fingerprint_hex"))?;
            let fp = Fingerprint::from_hex(hex).map_err(|e| bad(&e.to_string()))?;
            match fp_len {
                None => fp_len = Some(fp.len()),
                Some(l) if l != fp.len() => return Err(bad("fingerprint length changes within trace")),
                _ => {}
            }
            Some(fp)
        } else {
            None
        };
        out.push((score, fp));
    }
    Ok(out)
}

/// Shortest decimal form that parses back to the same `f64`.
pub(crate) fn format_score(x: f64) -> String {
    format!("{x}")
}

#[derive(Debug, Error)]
pub enum TraceIoError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
    #[error("unexpected trace header {0:?}")]
    Header(String),
    #[error("trace line {line}: {message}")]
    Row { line: usize, message: String },
    #[error("trace row {row} has no fingerprint column")]
    MissingFingerprints { row: usize },
}

/// Result of a batch submission. `scores` covers a prefix of the batch; it is
/// shorter than the batch only when the budget ran out.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    pub scores: Vec<f64>,
    pub exhausted: bool,
}

#[derive(Debug, Default)]
struct LedgerState {
    cache: HashMap<Fingerprint, f64>,
    trace: EvalTrace,
    calls: usize,
    cache_hits: usize,
}

/// Budget-enforcing, deduplicating front end to an [`Oracle`].
pub struct BudgetedOracle {
    inner: Arc<dyn Oracle>,
    budget: usize,
    state: Mutex<LedgerState>,
}

impl std::fmt::Debug for BudgetedOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BudgetedOracle")
            .field("inner", &self.inner.name())
            .field("budget", &self.budget)
            .field("remaining", &self.remaining_budget())
            .finish()
    }
}

impl BudgetedOracle {
    pub fn new(inner: Arc<dyn Oracle>, budget: usize) -> Self {
        Self {
            inner,
            budget,
            state: Mutex::new(LedgerState::default()),
        }
    }

    pub fn inner(&self) -> &Arc<dyn Oracle> {
        &self.inner
    }

    pub fn name(&self) -> &str {
        self.inner.name()
    }

    pub fn fp_len(&self) -> usize {
        self.inner.fp_len()
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    fn lock(&self) -> MutexGuard<'_, LedgerState> {
        // A panic inside an inner oracle must not wedge every other caller.
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn remaining_budget(&self) -> usize {
        self.budget - self.lock().trace.len()
    }

    pub fn is_exhausted(&self) -> bool {
        self.remaining_budget() == 0
    }

    /// Total `evaluate` requests, counting each batch element once.
    pub fn total_calls(&self) -> usize {
        self.lock().calls
    }

    pub fn cache_hits(&self) -> usize {
        self.lock().cache_hits
    }

    pub fn trace(&self) -> EvalTrace {
        self.lock().trace.clone()
    }

    pub fn trace_len(&self) -> usize {
        self.lock().trace.len()
    }

    /// Cached score, without charging or counting a call.
    pub fn peek(&self, fp: &Fingerprint) -> Option<f64> {
        self.lock().cache.get(fp).copied()
    }

    fn check_len(&self, fp: &Fingerprint) -> Result<(), OracleError> {
        if fp.len() != self.fp_len() {
            return Err(OracleError::LengthMismatch {
                expected: self.fp_len(),
                actual: fp.len(),
            });
        }
        Ok(())
    }

    pub fn evaluate(&self, fp: &Fingerprint) -> Result<f64, OracleError> {
        self.check_len(fp)?;
        let mut st = self.lock();
        if let Some(&s) = st.cache.get(fp) {
            st.calls += 1;
            st.cache_hits += 1;
            return Ok(s);
        }
        if st.trace.len() >= self.budget {
            return Err(OracleError::BudgetExhausted);
        }
        let score = self.inner.evaluate(fp)?;
        validate_score(0, score)?;
        st.calls += 1;
        st.cache.insert(fp.clone(), score);
        st.trace.push(fp.clone(), score);
        Ok(score)
    }

    /// Scores `fps` in order, sending every affordable cache miss to the inner
    /// oracle in one batch. Stops at the first miss the budget cannot cover.
    pub fn evaluate_batch(&self, fps: &[Fingerprint]) -> Result<BatchOutcome, OracleError> {
        for fp in fps {
            self.check_len(fp)?;
        }
        let mut st = self.lock();
        let remaining = self.budget - st.trace.len();

        enum Slot {
            Cached(f64),
            Pending(usize),
        }
        let mut slots = Vec::with_capacity(fps.len());
        let mut pending: Vec<Fingerprint> = Vec::new();
        let mut pending_index: HashMap<&Fingerprint, usize> = HashMap::new();
        let mut exhausted = false;
        for fp in fps {
            if let Some(&s) = st.cache.get(fp) {
                slots.push(Slot::Cached(s));
            } else if let Some(&k) = pending_index.get(fp) {
                slots.push(Slot::Pending(k));
            } else if pending.len() < remaining {
                pending_index.insert(fp, pending.len());
                slots.push(Slot::Pending(pending.len()));
                pending.push(fp.clone());
            } else {
                exhausted = true;
                break;
            }
        }

        let fresh = if pending.is_empty() {
            Vec::new()
        } else {
            self.inner.evaluate_batch(&pending)?
        };
        if fresh.len() != pending.len() {
            return Err(OracleError::Arity {
                expected: pending.len(),
                actual: fresh.len(),
            });
        }
        for (i, &s) in fresh.iter().enumerate() {
            validate_score(i, s)?;
        }

        let mut first_use = vec![true; pending.len()];
        let mut scores = Vec::with_capacity(slots.len());
        for slot in &slots {
            match *slot {
                Slot::Cached(s) => {
                    st.cache_hits += 1;
                    scores.push(s);
                }
                Slot::Pending(k) => {
                    if first_use[k] {
                        first_use[k] = false;
                    } else {
                        st.cache_hits += 1;
                    }
                    scores.push(fresh[k]);
                }
            }
        }
        st.calls += slots.len();
        for (fp, s) in pending.into_iter().zip(fresh) {
            st.cache.insert(fp.clone(), s);
            st.trace.push(fp, s);
        }
        debug_assert!(st.trace.len() <= self.budget);
        Ok(BatchOutcome { scores, exhausted })
    }
}

fn validate_score(index: usize, score: f64) -> Result<(), OracleError> {
    if score.is_finite() && (0.0..=1.0).contains(&score) {
        Ok(())
    } else {
        Err(OracleError::ScoreOutOfRange { index, score })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Score = fraction of set bits; counts inner invocations.
    pub(crate) struct Counting {
        pub len: usize,
        pub calls: std::sync::atomic::AtomicUsize,
    }

    impl Counting {
        pub(crate) fn new(len: usize) -> Arc<Self> {
            Arc::new(Self {
                len,
                calls: Default::default(),
            })
        }
        fn inner_calls(&self) -> usize {
            self.calls.load(std::sync::atomic::Ordering::SeqCst)
        }
    }

    impl Oracle for Counting {
        fn name(&self) -> &str {
            "counting"
        }
        fn fp_len(&self) -> usize {
            self.len
        }
        fn evaluate(&self, fp: &Fingerprint) -> Result<f64, OracleError> {
            self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            Ok(fp.count_ones() as f64 / self.len as f64)
        }
    }

    fn nth_fp(len: usize, n: usize) -> Fingerprint {
        Fingerprint::from_bits((0..len).map(|i| (n >> i) & 1 == 1)).unwrap()
    }

    #[test]
    fn repeats_are_free() {
        let inner = Counting::new(8);
        let o = BudgetedOracle::new(inner.clone(), 10);
        let fp = nth_fp(8, 3);
        assert_eq!(o.evaluate(&fp).unwrap(), 0.25);
        assert_eq!(o.evaluate(&fp).unwrap(), 0.25);
        assert_eq!(o.remaining_budget(), 9);
        assert_eq!(inner.inner_calls(), 1);
        assert_eq!(o.cache_hits(), 1);
        assert_eq!(o.trace_len(), 1);
    }

    #[test]
    fn zero_budget_exhausts_immediately() {
        let o = BudgetedOracle::new(Counting::new(8), 0);
        assert!(o.evaluate(&nth_fp(8, 1)).unwrap_err().is_budget_exhausted());
    }

    #[test]
    fn budget_three_four_distinct() {
        let o = BudgetedOracle::new(Counting::new(8), 3);
        for n in 1..=3 {
            o.evaluate(&nth_fp(8, n)).unwrap();
        }
        assert!(o.evaluate(&nth_fp(8, 4)).unwrap_err().is_budget_exhausted());
        let t = o.trace();
        assert_eq!(t.len(), 3);
        assert_eq!(
            t.iter().map(|e| e.call_index).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
        // still answers cached fingerprints once exhausted
        assert_eq!(o.evaluate(&nth_fp(8, 2)).unwrap(), 0.125);
    }

    #[test]
    fn remaining_budget_accounting() {
        assert_eq!(
            BudgetedOracle::new(Counting::new(8), DEFAULT_BUDGET).remaining_budget(),
            10_000
        );
        let o = BudgetedOracle::new(Counting::new(8), 10);
        o.evaluate(&nth_fp(8, 9)).unwrap();
        assert_eq!(o.remaining_budget(), 9);

        let o = BudgetedOracle::new(Counting::new(8), 100);
        for n in 0..5 {
            o.evaluate(&nth_fp(8, n)).unwrap();
        }
        for n in 0..5 {
            o.evaluate(&nth_fp(8, n)).unwrap();
        }
        assert_eq!(o.remaining_budget(), 95);
        assert_eq!(o.cache_hits() + o.trace_len(), o.total_calls());
    }

    #[test]
    fn length_mismatch_is_hard_error() {
        let o = BudgetedOracle::new(Counting::new(8), 5);
        let err = o.evaluate(&nth_fp(4, 1)).unwrap_err();
        assert!(matches!(err, OracleError::LengthMismatch { expected: 8, actual: 4 }));
        assert_eq!(o.remaining_budget(), 5);
    }

    #[test]
    fn out_of_range_scores_rejected() {
        struct Bad;
        impl Oracle for Bad {
            fn name(&self) -> &str {
                "bad"
            }
            fn fp_len(&self) -> usize {
                4
            }
            fn evaluate(&self, _: &Fingerprint) -> Result<f64, OracleError> {
                Ok(1.5)
            }
        }
        let o = BudgetedOracle::new(Arc::new(Bad), 5);
        let fp = nth_fp(4, 1);
        assert!(matches!(
            o.evaluate(&fp),
            Err(OracleError::ScoreOutOfRange { .. })
        ));
        assert!(matches!(
            o.evaluate_batch(&[fp]),
            Err(OracleError::ScoreOutOfRange { index: 0, .. })
        ));
        assert_eq!(o.trace_len(), 0);
    }

    #[test]
    fn batch_stops_at_budget_and_dedups() {
        let inner = Counting::new(8);
        let o = BudgetedOracle::new(inner.clone(), 3);
        o.evaluate(&nth_fp(8, 1)).unwrap();
        let batch: Vec<_> = [1, 2, 2, 3, 4, 1].iter().map(|&n| nth_fp(8, n)).collect();
        let out = o.evaluate_batch(&batch).unwrap();
        // 1 cached, 2 and 3 paid, duplicate 2 free, 4 unaffordable
        assert!(out.exhausted);
        assert_eq!(out.scores, vec![0.125, 0.125, 0.125, 0.25]);
        assert_eq!(o.trace_len(), 3);
        assert_eq!(inner.inner_calls(), 3);
        assert_eq!(o.cache_hits() + o.trace_len(), o.total_calls());
        assert!(o.evaluate_batch(&[]).unwrap().scores.is_empty());
    }

    #[test]
    fn concurrent_callers_respect_budget() {
        let o = Arc::new(BudgetedOracle::new(Counting::new(16), 500));
        std::thread::scope(|s| {
            for t in 0..8u64 {
                let o = o.clone();
                s.spawn(move || {
                    let mut rng = ChaCha8Rng::seed_from_u64(t);
                    for _ in 0..400 {
                        let fp = nth_fp(16, rng.random_range(0..2000));
                        if rng.random_bool(0.5) {
                            let _ = o.evaluate(&fp);
                        } else {
                            let _ = o.evaluate_batch(&[fp.clone(), nth_fp(16, rng.random_range(0..2000))]);
                        }
                    }
                });
            }
        });
        assert_eq!(o.trace_len(), 500);
        let t = o.trace();
        for (i, e) in t.iter().enumerate() {
            assert_eq!(e.call_index, i + 1);
        }
        let distinct: std::collections::HashSet<_> = t.iter().map(|e| &e.fingerprint).collect();
        assert_eq!(distinct.len(), t.len());
    }

    #[test]
    fn trace_replays_against_bare_oracle() {
        let inner = Counting::new(32);
        let o = BudgetedOracle::new(inner.clone(), 50);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        while !o.is_exhausted() {
            let _ = o.evaluate(&nth_fp(32, rng.random_range(0..100_000)));
        }
        for e in o.trace().iter() {
            assert_eq!(inner.evaluate(&e.fingerprint).unwrap().to_bits(), e.score.to_bits());
        }
    }

    #[test]
    fn csv_round_trip() {
        let trace = EvalTrace::from_pairs(
            [(nth_fp(8, 3), 0.1 + 0.2), (nth_fp(8, 200), 1.0 / 3.0), (nth_fp(8, 7), 0.0)],
        );
        let mut buf = Vec::new();
        trace.write_csv(&mut buf, true).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("call_index,score,fingerprint_hex\n1,0.30000000000000004,c0\n"));
        assert_eq!(EvalTrace::read_csv(buf.as_slice()).unwrap(), trace);

        let mut bare = Vec::new();
        trace.write_csv(&mut bare, false).unwrap();
        assert_eq!(read_trace_scores(bare.as_slice()).unwrap(), trace.scores());
        assert!(matches!(
            EvalTrace::read_csv(bare.as_slice()),
            Err(TraceIoError::MissingFingerprints { row: 1 })
        ));
    }

    #[test]
    fn csv_rejects_gaps() {
        let text = "call_index,score\n1,0.5\n3,0.2\n";
        assert!(matches!(
            read_trace_scores(text.as_bytes()),
            Err(TraceIoError::Row { line: 3, .. })
        ));
        assert!(matches!(
            read_trace_scores("idx,score\n".as_bytes()),
            Err(TraceIoError::Header(_))
        ));
    }
}
