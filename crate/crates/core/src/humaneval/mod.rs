//! Human evaluation of generated questions.
//!
//! Assessors answer two questions per item: whether the question is
//! well-formed and understandable, and whether the answer makes sense for
//! it. A block of items is shared by every assessor (for inter-rater
//! agreement) and the rest are unique per assessor; accepted and rejected
//! items are balanced. Agreement is Fleiss' kappa over the shared block, and
//! accepted vs rejected distributions are compared with Pearson's
//! chi-squared test.

mod chi2;
mod kappa;
mod plan;
mod ratings;

pub use chi2::{chi2_survival, chi_squared_test, ln_gamma, regularized_gamma_q, ChiSquaredTest};
pub use kappa::{fleiss_kappa, KappaResult};
pub use plan::{build_assignment, AssignmentPlan, PlanParams};
pub use ratings::{
    aggregate_ratings, category_counts, compute_stats, read_ratings_csv, write_ratings_csv,
    GroupShare, HumanEvalStats, Question, QuestionBreakdown, Table3,
};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("all ratings fall in a single category; kappa is undefined")]
    Degenerate,
    #[error("assignment needs {needed} {pool} items but only {available} are available")]
    Shortfall {
        pool: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("no QA verdict for item {0:?}")]
    MissingVerdict(String),
    #[error("ratings file: {0}")]
    Io(String),
}

/// Answer to "Is the question well-formed and can you understand the meaning?"
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Q1 {
    WellFormedAndUnderstandable,
    UnderstandableOnly,
    Neither,
}

impl Q1 {
    pub const ALL: [Q1; 3] = [
        Q1::WellFormedAndUnderstandable,
        Q1::UnderstandableOnly,
        Q1::Neither,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Q1::WellFormedAndUnderstandable => "Well-formed and understandable",
            Q1::UnderstandableOnly => "Only understandable",
            Q1::Neither => "Neither",
        }
    }
}

/// Answer to "does the answer make sense in relation to the question?"
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Q2 {
    Yes,
    No,
    DontKnow,
}

impl Q2 {
    pub const ALL: [Q2; 3] = [Q2::Yes, Q2::No, Q2::DontKnow];

    pub fn label(self) -> &'static str {
        match self {
            Q2::Yes => "Yes",
            Q2::No => "No",
            Q2::DontKnow => "I don't know",
        }
    }
}

/// One assessor's answers for one item. `q2` may be absent only when the
/// question was rated as neither well-formed nor understandable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub assessor: String,
    pub item: String,
    pub q1: Q1,
    #[serde(default)]
    pub q2: Option<Q2>,
    /// Milliseconds since the Unix epoch.
    #[serde(default)]
    pub timestamp: u64,
    /// Whether the context passage was shown to the assessor.
    #[serde(default)]
    pub context_shown: bool,
}

impl RatingRecord {
    pub fn validate(&self) -> Result<(), StatsError> {
        if self.assessor.is_empty() || self.item.is_empty() {
            return Err(StatsError::Invalid(
                "assessor and item must be non-empty".into(),
            ));
        }
        if self.q2.is_none() && self.q1 != Q1::Neither {
            return Err(StatsError::Invalid(
                "q2 may only be skipped when q1 is \"neither\"".into(),
            ));
        }
        Ok(())
    }
}
