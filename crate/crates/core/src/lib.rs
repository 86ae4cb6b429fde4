//! Privacy-label discrepancy analysis.
//!
//! The crate is organised the way data flows through a run:
//!
//! * [`pipeline`] fetches listings and policy pages through a pluggable
//!   transport, spreading load over an identity pool with per-identity
//!   token buckets.
//! * [`policy_detector`] extracts visible text from fetched pages and decides
//!   whether a page is an English-language privacy policy.
//! * [`corpus`] holds the app catalog, the policy store, URL deduplication,
//!   label merging and adoption statistics.
//! * [`textfeat`] turns policy text into TF-IDF vectors and LSA coordinates.
//! * [`sampler`] clusters policies (DBSCAN), labels clusters with a
//!   two-proportion z-test and draws centroid-weighted training splits.
//! * [`labelers`] trains one binary classifier per data type, selects the
//!   per-type ensemble and computes metrics.
//! * [`discrepancy`] compares predicted profiles with declared labels.
//! * [`stats`] aggregates verdicts into rates, CDFs, correlations and group
//!   tests, and writes the report bundle.
//!
//! [`workflow`] strings all of it together over a synthetic fixture world.

pub mod codec;
pub mod config;
pub mod corpus;
pub mod discrepancy;
pub mod labelers;
pub mod logreg;
pub mod pipeline;
pub mod policy_detector;
pub mod sampler;
pub mod special;
pub mod stats;
pub mod synth;
pub mod textfeat;
pub mod workflow;

pub use config::RunConfig;
pub use corpus::{AppRecord, DataType, PolicyCorpus, PrivacyLabel, Rating};
pub use discrepancy::{DiscrepancyOutcome, PredictionBand, Verdict};
pub use labelers::{ClassMetrics, EnsembleModel, PredictedPolicyProfile};
pub use textfeat::{LsaProjection, SparseVector, Vocabulary};
