//! Pipeline stage drivers: pure functions over records, plus file-level
//! wrappers that read and write JSONL in an output directory.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::backends::{GeneratorBackend, ScorerBackend};
use crate::corpus::{McqItem, Source, Split};
use crate::decoding::{DecodingError, GenerationConfig, Generator};
use crate::hash::derive_seed;
use crate::humaneval::{build_assignment, AssignmentPlan, PlanParams, StatsError};
use crate::metrics::{evaluate_corpus, CorpusEvalReport, EvalConfig, MetricsError};
use crate::qafilter::{QaError, QaFilter, QaVerdict};
use crate::tokenizer::Tokenizer;

pub const QUESTIONS_FILE: &str = "questions.jsonl";
pub const MCQ_FILE: &str = "mcq.jsonl";
pub const VERDICTS_FILE: &str = "verdicts.jsonl";
pub const ACCEPTED_FILE: &str = "accepted.jsonl";
pub const REJECTED_FILE: &str = "rejected.jsonl";
pub const FAILURES_SUFFIX: &str = ".failures.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error(transparent)]
    Decoding(#[from] DecodingError),
    #[error(transparent)]
    Qa(#[from] QaError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Jsonl(#[from] crate::jsonl::JsonlError),
    #[error("item {id}: {message}")]
    Item { id: String, message: String },
    #[error("{0}")]
    Input(String),
}

/// Any record carrying a context and an answer (SQuAD or MCQ items).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerInput {
    pub id: String,
    pub context: String,
    pub answer: String,
}

/// Any record carrying a context, a question and an answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionInput {
    pub id: String,
    pub context: String,
    pub question: String,
    pub answer: String,
    #[serde(default)]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedQuestion {
    pub id: String,
    pub context: String,
    pub question: String,
    pub answer: String,
}

/// An item for which generation gave up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput<T> {
    pub records: Vec<T>,
    pub failures: Vec<StageFailure>,
}

/// Order-preserving parallel map over `workers` scoped threads.
pub fn par_map<T, U, F>(items: &[T], workers: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<(usize, U)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| {
                    let mut out = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= items.len() {
                            break out;
                        }
                        out.push((i, f(&items[i])));
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    slots.sort_by_key(|(i, _)| *i);
    slots.into_iter().map(|(_, u)| u).collect()
}

/// Per-item retry exhaustion is recorded as a failure; anything else
/// (backend, configuration, prompt errors) aborts the stage.
fn split_outcomes<T>(
    outcomes: Vec<(String, Result<T, DecodingError>)>,
) -> Result<StageOutput<T>, StageError> {
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (id, r) in outcomes {
        match r {
            Ok(v) => records.push(v),
            Err(
                e @ (DecodingError::GenerationFailed { .. }
                | DecodingError::MaxRetriesExceeded { .. }),
            ) => {
                tracing::warn!(%id, error = %e, "generation gave up");
                failures.push(StageFailure {
                    id,
                    error: e.to_string(),
                });
            }
            Err(e) => {
                return Err(StageError::Item {
                    id,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(StageOutput { records, failures })
}

pub fn generate_questions(
    inputs: &[AnswerInput],
    backend: &dyn GeneratorBackend,
    tokenizer: &Tokenizer,
    config: &GenerationConfig,
    seed: u64,
    workers: usize,
) -> Result<StageOutput<GeneratedQuestion>, StageError> {
    let generator = Generator::new(backend, tokenizer, config)?;
    let outcomes = par_map(inputs, workers, |it| {
        let r = generator
            .generate_question(
                &it.context,
                &it.answer,
                derive_seed(seed, &format!("qg/{}", it.id)),
            )
            .map(|question| GeneratedQuestion {
                id: it.id.clone(),
                context: it.context.clone(),
                question,
                answer: it.answer.clone(),
            });
        (it.id.clone(), r)
    });
    split_outcomes(outcomes)
}

pub fn generate_distractors(
    inputs: &[QuestionInput],
    backend: &dyn GeneratorBackend,
    tokenizer: &Tokenizer,
    config: &GenerationConfig,
    seed: u64,
    workers: usize,
) -> Result<StageOutput<McqItem>, StageError> {
    let generator = Generator::new(backend, tokenizer, config)?;
    let outcomes = par_map(inputs, workers, |it| {
        let r = generator
            .generate_distractors(
                &it.context,
                &it.question,
                &it.answer,
                derive_seed(seed, &format!("dg/{}", it.id)),
            )
            .map(|set| McqItem {
                id: it.id.clone(),
                context: it.context.clone(),
                question: it.question.clone(),
                answer: it.answer.clone(),
                distractors: set.distractors,
                source: Source::Generated,
                split: it.split.unwrap_or(Split::Test),
            });
        (it.id.clone(), r)
    });
    split_outcomes(outcomes)
}

pub fn qa_filter(
    items: &[McqItem],
    scorer: &dyn ScorerBackend,
    tokenizer: &Tokenizer,
    max_len: Option<usize>,
    seed: u64,
    workers: usize,
) -> Result<Vec<QaVerdict>, StageError> {
    let filter = QaFilter::new(scorer, tokenizer, max_len);
    par_map(items, workers, |it| {
        filter
            .filter_item(it, derive_seed(seed, &it.id))
            .map_err(|e| StageError::Item {
                id: it.id.clone(),
                message: e.to_string(),
            })
    })
    .into_iter()
    .collect()
}

/// Pair generated items with references by id and score the distractors.
pub fn evaluate(
    generated: &[McqItem],
    references: &[McqItem],
    config: &EvalConfig,
) -> Result<CorpusEvalReport, StageError> {
    let refs: HashMap<&str, &McqItem> = references.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut pairs = Vec::with_capacity(generated.len());
    for g in generated {
        let r = refs.get(g.id.as_str()).ok_or_else(|| StageError::Item {
            id: g.id.clone(),
            message: "no reference item with this id".into(),
        })?;
        pairs.push((g.distractors.to_vec(), r.distractors.to_vec()));
    }
    Ok(evaluate_corpus(&pairs, config)?)
}

/// Assignment plan from QA verdicts: accepted and rejected ids as pools.
pub fn plan_from_verdicts(
    verdicts: &[QaVerdict],
    params: PlanParams,
) -> Result<AssignmentPlan, StageError> {
    let (acc, rej): (Vec<&QaVerdict>, Vec<&QaVerdict>) = verdicts.iter().partition(|v| v.accepted);
    let ids = |v: Vec<&QaVerdict>| v.into_iter().map(|v| v.id.clone()).collect::<Vec<_>>();
    Ok(build_assignment(&ids(acc), &ids(rej), params)?)
}

/// Split items by verdict, keeping input order.
pub fn partition_by_verdict(
    items: &[McqItem],
    verdicts: &[QaVerdict],
) -> (Vec<McqItem>, Vec<McqItem>) {
    let accepted: BTreeMap<&str, bool> = verdicts
        .iter()
        .map(|v| (v.id.as_str(), v.accepted))
        .collect();
    items
        .iter()
        .filter(|it| accepted.contains_key(it.id.as_str()))
        .cloned()
        .partition(|it| accepted[it.id.as_str()])
}

pub fn failures_path(out: &Path, file: &str) -> PathBuf {
    out.join(format!(
        "{}{FAILURES_SUFFIX}",
        file.trim_end_matches(".jsonl")
    ))
}

/// Write a stage's records and, when non-empty, its failures.
pub fn write_stage<T: Serialize>(
    out: &Path,
    file: &str,
    output: &StageOutput<T>,
) -> Result<PathBuf, StageError> {
    let path = out.join(file);
    crate::jsonl::write(&path, &output.records)?;
    let fail = failures_path(out, file);
    if output.failures.is_empty() {
        if fail.exists() {
            std::fs::remove_file(&fail)
                .map_err(|e| StageError::Input(format!("{}: {e}", fail.display())))?;
        }
    } else {
        crate::jsonl::write(&fail, &output.failures)?;
    }
    Ok(path)
}
