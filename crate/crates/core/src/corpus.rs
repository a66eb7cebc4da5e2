//! SQuAD v2 and RACE ingestion, unified item records and corpus statistics.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed JSON at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: schema error: {message}")]
    Schema { path: PathBuf, message: String },
}

impl CorpusError {
    fn from_json(path: &Path, err: serde_json::Error) -> Self {
        use serde_json::error::Category;
        match err.classify() {
            Category::Data => CorpusError::Schema {
                path: path.to_path_buf(),
                message: err.to_string(),
            },
            Category::Io => CorpusError::Io {
                path: path.to_path_buf(),
                source: err.into(),
            },
            Category::Syntax | Category::Eof => CorpusError::Parse {
                path: path.to_path_buf(),
                line: err.line(),
                column: err.column(),
                message: err.to_string(),
            },
        }
    }

    fn schema(path: &Path, message: impl Into<String>) -> Self {
        CorpusError::Schema {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    /// Guess the split from a path component named `train`, `dev` or `test`
    /// (or a file stem starting with one of them, as in `train-v2.0.json`).
    pub fn infer(path: &Path) -> Option<Split> {
        path.components().rev().find_map(|c| {
            let name = c.as_os_str().to_string_lossy().to_ascii_lowercase();
            match name.split(|ch: char| !ch.is_ascii_alphanumeric()).next() {
                Some("train") => Some(Split::Train),
                Some("dev" | "val" | "validation") => Some(Split::Dev),
                Some("test") => Some(Split::Test),
                _ => None,
            }
        })
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Dataset,
    Generated,
}

/// One answerable (or, before filtering, unanswerable) SQuAD v2 question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquadItem {
    pub id: String,
    pub context: String,
    pub question: String,
    pub answer: String,
    pub impossible: bool,
}

/// A context, question, answer and exactly three distractors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqItem {
    pub id: String,
    pub context: String,
    pub question: String,
    pub answer: String,
    pub distractors: [String; 3],
    pub source: Source,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ItemIssue {
    EmptyDistractor(usize),
    DistractorEqualsAnswer(usize),
}

impl McqItem {
    /// Invariant violations of this item. RACE contains a handful of these,
    /// which are kept (and reported) rather than dropped.
    pub fn issues(&self) -> Vec<ItemIssue> {
        let answer = normalize_option(&self.answer);
        let mut out = Vec::new();
        for (i, d) in self.distractors.iter().enumerate() {
            if d.trim().is_empty() {
                out.push(ItemIssue::EmptyDistractor(i));
            } else if normalize_option(d) == answer {
                out.push(ItemIssue::DistractorEqualsAnswer(i));
            }
        }
        out
    }

    /// Options in canonical order: answer first, then the distractors.
    pub fn options(&self) -> [&str; 4] {
        [
            &self.answer,
            &self.distractors[0],
            &self.distractors[1],
            &self.distractors[2],
        ]
    }
}

/// Comparison key for options: trimmed, case-folded, internal whitespace
/// collapsed to single spaces.
pub fn normalize_option(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub item_count: usize,
    pub distractor_word_mean: f64,
    pub distractor_word_std: f64,
}

// --- SQuAD v2 -------------------------------------------------------------

#[derive(Deserialize)]
struct SquadFile {
    data: Vec<SquadArticle>,
}

#[derive(Deserialize)]
struct SquadArticle {
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<SquadQa>,
}

#[derive(Deserialize)]
struct SquadQa {
    question: String,
    answers: Vec<SquadAnswer>,
    is_impossible: bool,
}

#[derive(Deserialize)]
struct SquadAnswer {
    text: String,
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Read a SQuAD v2 file and keep only answerable questions, in document
/// order. Ids are `<file name>#<position among all qas>`.
pub fn ingest_squad(path: impl AsRef<Path>) -> Result<Vec<SquadItem>, CorpusError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: SquadFile =
        serde_json::from_slice(&bytes).map_err(|e| CorpusError::from_json(path, e))?;
    let label = file_label(path);

    let mut out = Vec::new();
    let mut index = 0usize;
    for article in file.data {
        for para in article.paragraphs {
            for qa in para.qas {
                let id = format!("{label}#{index}");
                index += 1;
                if qa.is_impossible {
                    continue;
                }
                let answer = qa
                    .answers
                    .into_iter()
                    .next()
                    .ok_or_else(|| {
                        CorpusError::schema(
                            path,
                            format!("{id}: answerable question has no answers"),
                        )
                    })?
                    .text;
                if answer.is_empty() {
                    return Err(CorpusError::schema(
                        path,
                        format!("{id}: empty answer text"),
                    ));
                }
                if !para.context.contains(&answer) {
                    tracing::warn!(%id, "answer text does not occur in its context");
                }
                out.push(SquadItem {
                    id,
                    context: para.context.clone(),
                    question: qa.question,
                    answer,
                    impossible: false,
                });
            }
        }
    }
    Ok(out)
}

// --- RACE -----------------------------------------------------------------

#[derive(Deserialize)]
struct RaceFile {
    article: String,
    questions: Vec<String>,
    options: Vec<Vec<String>>,
    answers: Vec<String>,
}

fn race_files(dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| CorpusError::Io {
            path: e.path().unwrap_or(dir).to_path_buf(),
            source: e.into(),
        })?;
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        if entry.file_type().is_file() && !hidden {
            files.push(entry.into_path());
        }
    }
    Ok(files)
}

fn parse_race_file(
    root: &Path,
    path: &Path,
    default_split: Split,
) -> Result<Vec<McqItem>, CorpusError> {
    let bytes = std::fs::read(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: RaceFile =
        serde_json::from_slice(&bytes).map_err(|e| CorpusError::from_json(path, e))?;
    let n = file.questions.len();
    if file.options.len() != n || file.answers.len() != n {
        return Err(CorpusError::schema(
            path,
            format!(
                "{} questions but {} option lists and {} answers",
                n,
                file.options.len(),
                file.answers.len()
            ),
        ));
    }
    let rel = path.strip_prefix(root).unwrap_or(path);
    let rel_label = rel
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/");
    let split = Split::infer(rel).unwrap_or(default_split);

    let mut out = Vec::with_capacity(n);
    for (i, ((question, options), letter)) in file
        .questions
        .into_iter()
        .zip(file.options)
        .zip(file.answers)
        .enumerate()
    {
        let options: [String; 4] = options.try_into().map_err(|o: Vec<String>| {
            CorpusError::schema(
                path,
                format!("question {i}: expected 4 options, found {}", o.len()),
            )
        })?;
        let answer_idx = match letter.trim() {
            "A" => 0,
            "B" => 1,
            "C" => 2,
            "D" => 3,
            other => {
                return Err(CorpusError::schema(
                    path,
                    format!("question {i}: answer letter {other:?} is not one of A-D"),
                ))
            }
        };
        let [o0, o1, o2, o3] = options;
        let mut rest = Vec::with_capacity(3);
        let mut answer = String::new();
        for (k, opt) in [o0, o1, o2, o3].into_iter().enumerate() {
            if k == answer_idx {
                answer = opt;
            } else {
                rest.push(opt);
            }
        }
        let distractors: [String; 3] = rest.try_into().expect("three remaining options");
        let item = McqItem {
            id: format!("{rel_label}#{i}"),
            context: file.article.clone(),
            question,
            answer,
            distractors,
            source: Source::Dataset,
            split,
        };
        for issue in item.issues() {
            tracing::warn!(id = %item.id, ?issue, "kept RACE item with invalid distractor");
        }
        out.push(item);
    }
    Ok(out)
}

/// Read every RACE JSON file under `dir` (recursively, in file-name order).
/// Each question becomes one item; the lettered answer is resolved to its
/// option text and the other three options become distractors in their
/// original order.
pub fn ingest_race(dir: impl AsRef<Path>) -> Result<Vec<McqItem>, CorpusError> {
    let dir = dir.as_ref();
    let default_split = Split::infer(dir).unwrap_or(Split::Train);
    let mut out = Vec::new();
    for file in race_files(dir)? {
        out.extend(parse_race_file(dir, &file, default_split)?);
    }
    Ok(out)
}

// --- statistics -----------------------------------------------------------

/// Number of Unicode-whitespace separated words.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Mean and population standard deviation of distractor word counts over
/// all `3 * items.len()` distractors.
pub fn corpus_stats(items: &[McqItem]) -> CorpusStats {
    let samples: Vec<f64> = items
        .iter()
        .flat_map(|it| it.distractors.iter().map(|d| word_count(d) as f64))
        .collect();
    if samples.is_empty() {
        return CorpusStats {
            item_count: 0,
            distractor_word_mean: 0.0,
            distractor_word_std: 0.0,
        };
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    CorpusStats {
        item_count: items.len(),
        distractor_word_mean: mean,
        distractor_word_std: var.sqrt(),
    }
}

/// [`corpus_stats`] computed separately for every split present.
pub fn stats_by_split(items: &[McqItem]) -> BTreeMap<Split, CorpusStats> {
    let mut groups: BTreeMap<Split, Vec<McqItem>> = BTreeMap::new();
    for it in items {
        groups.entry(it.split).or_default().push(it.clone());
    }
    groups
        .into_iter()
        .map(|(split, group)| (split, corpus_stats(&group)))
        .collect()
}
