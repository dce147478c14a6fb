//! Influence-diagram task specification and expected-utility prompting.
//!
//! The crate turns a multi-objective task into a small influence diagram with
//! one decision node (the answer an LLM chooses) and a set of chance nodes
//! whose factors multiply into a single utility. On top of that it provides:
//!
//! - [`diagram`]: parsing, structural validation, and tractability
//!   classification of diagram spec files;
//! - [`utility`]: factorized expected-utility evaluation per tractable
//!   regime, an exact joint-enumeration oracle, and candidate selection;
//! - [`prompt`]: compilation of a diagram plus task description into a
//!   UtilityMax prompt, and the Basic/Harsh natural-language baselines;
//! - [`response`]: extraction of machine-readable candidate estimates from
//!   model responses and auditing of the model's own arithmetic and ranking;
//! - [`client`]: a blocking chat-completion client with retry, bounded
//!   parallelism, and a deterministic fixture-driven mock provider;
//! - [`eval`]: the movie-recommendation evaluation pipeline (data loading,
//!   user-task construction, Precision@K / NDCG@K, paired Wilcoxon tests,
//!   report rendering);
//! - [`randgen`]: random diagram and estimate generation used by the
//!   oracle-check command and the equivalence test suites.

pub mod client;
pub mod diagram;
pub mod eval;
pub mod prompt;
pub mod randgen;
pub mod response;
pub mod utility;
