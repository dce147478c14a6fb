//! Evaluation harness for the movie-recommendation protocol: data ingestion,
//! user eligibility and task construction, ranking metrics, paired Wilcoxon
//! significance tests, the end-to-end experiment runner, and report
//! rendering.

pub mod data;
pub mod experiment;
pub mod metrics;
pub mod report;
pub mod stats;

pub use data::{
    build_user_task, load_movies, load_ratings, select_eligible_users, EligibilityCriteria,
    MovieRecord, PositiveMatchRule, RatingEvent, UserTask,
};
pub use experiment::{run_experiment, CellKey, CellResult, ExperimentConfig, MetricsReport};
pub use metrics::{ndcg_at_k, ndcg_at_k_graded, precision_at_k};
pub use report::{render_cell_csv, render_tables};
pub use stats::{relative_improvement, wilcoxon_one_sided_paired};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed row: {detail}")]
    MalformedRow {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("only {eligible} eligible users, {requested} requested")]
    NotEnoughEligibleUsers { eligible: usize, requested: usize },
    #[error("user {0} lacks the history required for a task")]
    InsufficientHistory(u32),
    #[error("ranking shorter than k: {len} < {k}")]
    TooFewRecommendations { len: usize, k: usize },
    #[error("duplicate id in ranking: {0}")]
    DuplicateRecommendation(String),
    #[error("length mismatch: {x} vs {y} paired samples")]
    PairLengthMismatch { x: usize, y: usize },
    #[error("too few pairs: {0} < 5")]
    TooFewPairs(usize),
    #[error("all paired differences are zero; the test statistic is undefined")]
    AllDifferencesZero,
    #[error("baseline mean is zero; relative improvement undefined")]
    ZeroBaselineMean,
    #[error("variant {0} missing from the report aggregates")]
    MissingVariant(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("prompt error: {0}")]
    Prompt(#[from] crate::prompt::PromptError),
    #[error("diagram error: {0}")]
    Diagram(#[from] crate::diagram::DiagramError),
    #[error("client error: {0}")]
    Client(#[from] crate::client::ClientError),
}
