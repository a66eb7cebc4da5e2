//! Four-option multiple-choice answering over a [`ScorerBackend`], the
//! accept/reject filter built on it, and QA accuracy.
//!
//! Each option is encoded together with the context and question and scored
//! on its own; the four scores are softmax-normalized and the argmax is the
//! chosen option. An item is accepted when the chosen option is the answer.
//! Any dropout or classification head lives inside the scorer backend.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, ScorerBackend};
use crate::corpus::McqItem;
use crate::hash::derive_seed;
use crate::tokenizer::{Tokenizer, TokenizerError};

#[derive(Debug, thiserror::Error)]
pub enum QaError {
    #[error("expected 4 options, got {0}")]
    OptionCount(usize),
    #[error(transparent)]
    Input(#[from] TokenizerError),
    #[error("scoring option {option} failed: {source}")]
    Backend {
        option: usize,
        #[source]
        source: BackendError,
    },
    #[error("scorer returned a non-finite score {score} for option {option}")]
    NonFinite { option: usize, score: f64 },
    #[error("accuracy of an empty item list is undefined")]
    Empty,
}

/// Raw scores of the four options, in presentation order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionScores {
    pub scores: [f64; 4],
}

/// Outcome of filtering one item. `order[p]` is the canonical index
/// (0 = answer, 1..=3 = distractors) of the option shown at position `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaVerdict {
    pub id: String,
    pub probabilities: [f64; 4],
    pub chosen: usize,
    pub gold: usize,
    pub accepted: bool,
    pub order: [usize; 4],
}

/// Numerically stable softmax.
pub fn softmax_normalize(scores: &OptionScores) -> [f64; 4] {
    let max = scores
        .scores
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let exps = scores.scores.map(|s| (s - max).exp());
    let total: f64 = exps.iter().sum();
    exps.map(|e| e / total)
}

/// Argmax with ties resolved to the lowest index.
pub fn classify(scores: &OptionScores) -> usize {
    let mut best = 0;
    for i in 1..4 {
        if scores.scores[i] > scores.scores[best] {
            best = i;
        }
    }
    best
}

/// Seeded presentation order of the canonical options.
pub fn presentation_order(seed: u64) -> [usize; 4] {
    let mut order = [0, 1, 2, 3];
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Scorer, tokenizer and optional input length limit.
pub struct QaFilter<'a> {
    scorer: &'a dyn ScorerBackend,
    tokenizer: &'a Tokenizer,
    max_len: Option<usize>,
}

impl<'a> QaFilter<'a> {
    pub fn new(
        scorer: &'a dyn ScorerBackend,
        tokenizer: &'a Tokenizer,
        max_len: Option<usize>,
    ) -> Self {
        Self {
            scorer,
            tokenizer,
            max_len,
        }
    }

    /// Score each option independently, keeping the given order.
    pub fn score_options<S: AsRef<str>>(
        &self,
        context: &str,
        question: &str,
        options: &[S],
    ) -> Result<OptionScores, QaError> {
        if options.len() != 4 {
            return Err(QaError::OptionCount(options.len()));
        }
        let mut scores = [0.0; 4];
        for (i, opt) in options.iter().enumerate() {
            let ids =
                self.tokenizer
                    .build_qa_input(context, question, opt.as_ref(), self.max_len)?;
            let s = self
                .scorer
                .score(&ids.ids)
                .map_err(|source| QaError::Backend { option: i, source })?;
            if !s.is_finite() {
                return Err(QaError::NonFinite {
                    option: i,
                    score: s,
                });
            }
            scores[i] = s;
        }
        Ok(OptionScores { scores })
    }

    /// Present the answer and distractors in the order given by
    /// `shuffle_seed` and accept the item iff the answer is chosen.
    pub fn filter_item(&self, item: &McqItem, shuffle_seed: u64) -> Result<QaVerdict, QaError> {
        let canonical = item.options();
        let order = presentation_order(shuffle_seed);
        let shown = order.map(|c| canonical[c]);
        let scores = self.score_options(&item.context, &item.question, &shown)?;
        let chosen = classify(&scores);
        let gold = order
            .iter()
            .position(|&c| c == 0)
            .expect("answer is presented");
        Ok(QaVerdict {
            id: item.id.clone(),
            probabilities: softmax_normalize(&scores),
            chosen,
            gold,
            accepted: chosen == gold,
            order,
        })
    }

    /// Filter every item; item `i` is shuffled with a seed derived from
    /// `seed` and its id.
    pub fn filter_items(&self, items: &[McqItem], seed: u64) -> Result<Vec<QaVerdict>, QaError> {
        items
            .iter()
            .map(|it| self.filter_item(it, derive_seed(seed, &it.id)))
            .collect()
    }

    pub fn qa_accuracy(&self, items: &[McqItem], seed: u64) -> Result<f64, QaError> {
        if items.is_empty() {
            return Err(QaError::Empty);
        }
        accuracy(&self.filter_items(items, seed)?)
    }
}

/// Fraction of accepted verdicts.
pub fn accuracy(verdicts: &[QaVerdict]) -> Result<f64, QaError> {
    if verdicts.is_empty() {
        return Err(QaError::Empty);
    }
    let accepted = verdicts.iter().filter(|v| v.accepted).count();
    Ok(accepted as f64 / verdicts.len() as f64)
}

/// Accuracy summary in the shape of a per-model accuracy table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub items: usize,
    pub accepted: usize,
    pub accuracy: f64,
}

impl AccuracyReport {
    pub fn from_verdicts(verdicts: &[QaVerdict]) -> Result<Self, QaError> {
        Ok(Self {
            items: verdicts.len(),
            accepted: verdicts.iter().filter(|v| v.accepted).count(),
            accuracy: accuracy(verdicts)?,
        })
    }

    /// Plain-text table: one row per labelled report, accuracy in percent.
    pub fn render_table(rows: &[(&str, &AccuracyReport)]) -> String {
        let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(5);
        let mut out = format!(
            "{:<width$}  {:>8}  {:>8}  {:>9}\n",
            "Model", "Items", "Accepted", "Accuracy"
        );
        for (label, r) in rows {
            out.push_str(&format!(
                "{:<width$}  {:>8}  {:>8}  {:>8.2}%\n",
                label,
                r.items,
                r.accepted,
                r.accuracy * 100.0
            ));
        }
        out
    }
}
