//! Budgeted black-box search over fixed-length binary fingerprints.
//!
//! The crate pairs a policy-guided Metropolis-Hastings search (each proposal
//! refined by a short genetic-algorithm local search, the policy trained by
//! REINFORCE) with a plain GA baseline, a random-search control, and the
//! top-K / AUC / diversity metrics used to compare them under a fixed oracle
//! budget.
//!
//! ```
//! use std::sync::Arc;
//! use fpopt::{BudgetedOracle, Fingerprint, OneMax};
//!
//! let oracle = BudgetedOracle::new(Arc::new(OneMax::new(8)), 2);
//! let fp = Fingerprint::from_bit_str("11110000").unwrap();
//! assert_eq!(oracle.evaluate(&fp).unwrap(), 0.5);
//! assert_eq!(oracle.evaluate(&fp).unwrap(), 0.5); // cached, free
//! assert_eq!(oracle.remaining_budget(), 1);
//! ```

pub mod bridge;
pub mod config;
pub mod harness;
pub mod fingerprint;
pub mod metrics;
pub mod oracle;
pub mod policy;
pub mod search;
pub mod synthetic;

pub use fingerprint::{
    cosine_similarity, diversity, hamming_distance, tanimoto_similarity, Fingerprint, FingerprintError,
    SimilarityKind,
};
pub use metrics::{
    aggregate, top_k_auc, top_k_average, top_k_curve, AggregateReport, MetricTable, RunResult, RunSummary,
    StopReason,
};
pub use oracle::{BudgetedOracle, EvalTrace, Oracle, OracleError, TraceEntry, DEFAULT_BUDGET};
pub use policy::{AdamConfig, PolicyParams, ProbVector};
pub use search::{
    run_dreinforce, run_ga_baseline, run_random_search, Candidate, DReinforce, DReinforceConfig, GaConfig,
    Population, SearchError,
};
pub use synthetic::{make_oracle, Family, OneMax, OracleSpec, SyntheticOracle};
