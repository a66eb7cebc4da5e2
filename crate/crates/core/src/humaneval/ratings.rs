use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::chi2::{chi_squared_test, ChiSquaredTest};
use super::kappa::{fleiss_kappa, KappaResult};
use super::plan::AssignmentPlan;
use super::{RatingRecord, StatsError, Q1, Q2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Question {
    Q1,
    Q2,
}

impl Question {
    fn category(self, r: &RatingRecord) -> Option<usize> {
        match self {
            Question::Q1 => Some(Q1::ALL.iter().position(|&c| c == r.q1).expect("listed")),
            Question::Q2 => {
                r.q2.map(|q| Q2::ALL.iter().position(|&c| c == q).expect("listed"))
            }
        }
    }

    fn labels(self) -> Vec<String> {
        match self {
            Question::Q1 => Q1::ALL.iter().map(|c| c.label().to_string()).collect(),
            Question::Q2 => Q2::ALL.iter().map(|c| c.label().to_string()).collect(),
        }
    }
}

/// Per-item category counts over `items`, keeping only items that every
/// assessor in `assessors` answered for `question`.
pub fn category_counts(
    ratings: &[RatingRecord],
    items: &[String],
    assessors: &[String],
    question: Question,
) -> Vec<[u32; 3]> {
    let mut by_key: HashMap<(&str, &str), &RatingRecord> = HashMap::new();
    for r in ratings {
        by_key
            .entry((r.item.as_str(), r.assessor.as_str()))
            .or_insert(r);
    }
    items
        .iter()
        .filter_map(|item| {
            let mut row = [0u32; 3];
            for a in assessors {
                let r = by_key.get(&(item.as_str(), a.as_str()))?;
                row[question.category(r)?] += 1;
            }
            Some(row)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupShare {
    pub n: u64,
    pub counts: [u64; 3],
    /// Percent of `n` per category; all zero when `n` is zero.
    pub percentages: [f64; 3],
}

impl GroupShare {
    fn from_counts(counts: [u64; 3]) -> Self {
        let n: u64 = counts.iter().sum();
        let percentages = if n == 0 {
            [0.0; 3]
        } else {
            counts.map(|c| 100.0 * c as f64 / n as f64)
        };
        Self {
            n,
            counts,
            percentages,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionBreakdown {
    pub categories: Vec<String>,
    pub accepted: GroupShare,
    pub rejected: GroupShare,
}

impl QuestionBreakdown {
    /// 2 x 3 contingency table: accepted row, then rejected row.
    pub fn contingency(&self) -> [[f64; 3]; 2] {
        [
            self.accepted.counts.map(|c| c as f64),
            self.rejected.counts.map(|c| c as f64),
        ]
    }
}

/// Answer distribution per question, split by the QA verdict of the item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table3 {
    pub q1: QuestionBreakdown,
    pub q2: QuestionBreakdown,
}

impl Table3 {
    /// Text table with whole percentages.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (title, b) in [
            (
                "Q1: Is the question well-formed and can you understand the meaning?",
                &self.q1,
            ),
            (
                "Q2: Does the answer make sense in relation to the question?",
                &self.q2,
            ),
        ] {
            out.push_str(title);
            out.push('\n');
            out.push_str(&format!("{:<32} {:>9} {:>9}\n", "", "Accepted", "Rejected"));
            for (j, label) in b.categories.iter().enumerate() {
                out.push_str(&format!(
                    "{:<32} {:>8.0}% {:>8.0}%\n",
                    label, b.accepted.percentages[j], b.rejected.percentages[j]
                ));
            }
            out.push_str(&format!(
                "{:<32} {:>9} {:>9}\n",
                "n", b.accepted.n, b.rejected.n
            ));
        }
        out
    }
}

/// Percentages per question and verdict. Every rating counts, including
/// Q2 answers given after a "neither" answer to Q1; skipped Q2 answers are
/// left out of the Q2 breakdown.
pub fn aggregate_ratings<F>(ratings: &[RatingRecord], verdict: F) -> Result<Table3, StatsError>
where
    F: Fn(&str) -> Option<bool>,
{
    let mut counts = [[[0u64; 3]; 2]; 2];
    for r in ratings {
        let accepted =
            verdict(&r.item).ok_or_else(|| StatsError::MissingVerdict(r.item.clone()))?;
        let g = usize::from(!accepted);
        for (q, question) in [Question::Q1, Question::Q2].into_iter().enumerate() {
            if let Some(c) = question.category(r) {
                counts[q][g][c] += 1;
            }
        }
    }
    let breakdown = |q: usize, question: Question| QuestionBreakdown {
        categories: question.labels(),
        accepted: GroupShare::from_counts(counts[q][0]),
        rejected: GroupShare::from_counts(counts[q][1]),
    };
    Ok(Table3 {
        q1: breakdown(0, Question::Q1),
        q2: breakdown(1, Question::Q2),
    })
}

/// Agreement, significance and distribution tables for a set of ratings.
/// Statistics that cannot be computed yet are `None`, with the reason in
/// `pending`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanEvalStats {
    pub ratings: usize,
    pub kappa_q1: Option<KappaResult>,
    pub kappa_q2: Option<KappaResult>,
    pub chi2_q1: Option<ChiSquaredTest>,
    pub chi2_q2: Option<ChiSquaredTest>,
    pub table: Table3,
    pub pending: Vec<String>,
}

pub fn compute_stats(
    plan: &AssignmentPlan,
    ratings: &[RatingRecord],
) -> Result<HumanEvalStats, StatsError> {
    let table = aggregate_ratings(ratings, |item| plan.verdict(item))?;
    let mut pending = Vec::new();
    let mut kappa = |question: Question| {
        let rows = category_counts(ratings, &plan.shared_items, &plan.assessors, question);
        let name = serde_json::to_value(question).expect("serializable");
        if rows.is_empty() {
            pending.push(format!(
                "kappa {}: no shared item has been rated by every assessor",
                name.as_str().unwrap_or("")
            ));
            return None;
        }
        match fleiss_kappa(&rows, plan.assessors.len() as u32) {
            Ok(k) => Some(k),
            Err(e) => {
                pending.push(format!("kappa {}: {e}", name.as_str().unwrap_or("")));
                None
            }
        }
    };
    let kappa_q1 = kappa(Question::Q1);
    let kappa_q2 = kappa(Question::Q2);
    let mut chi2 = |label: &str, b: &QuestionBreakdown| match chi_squared_test(&b.contingency()) {
        Ok(t) => Some(t),
        Err(e) => {
            pending.push(format!("chi-squared {label}: {e}"));
            None
        }
    };
    let chi2_q1 = chi2("q1", &table.q1);
    let chi2_q2 = chi2("q2", &table.q2);
    Ok(HumanEvalStats {
        ratings: ratings.len(),
        kappa_q1,
        kappa_q2,
        chi2_q1,
        chi2_q2,
        table,
        pending,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    assessor: String,
    item: String,
    q1: Q1,
    q2: Option<Q2>,
    timestamp: u64,
    verdict: Option<String>,
}

const CSV_HEADER: [&str; 6] = ["assessor", "item", "q1", "q2", "timestamp", "verdict"];

/// Write ratings as CSV with columns
/// `assessor,item,q1,q2,timestamp,verdict`; verdict is
/// `accepted`, `rejected` or empty when unknown.
pub fn write_ratings_csv<W, F>(
    writer: W,
    ratings: &[RatingRecord],
    verdict: F,
) -> Result<(), StatsError>
where
    W: Write,
    F: Fn(&str) -> Option<bool>,
{
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(writer);
    w.write_record(CSV_HEADER)
        .map_err(|e| StatsError::Io(e.to_string()))?;
    for r in ratings {
        w.serialize(CsvRow {
            assessor: r.assessor.clone(),
            item: r.item.clone(),
            q1: r.q1,
            q2: r.q2,
            timestamp: r.timestamp,
            verdict: verdict(&r.item).map(|a| if a { "accepted" } else { "rejected" }.to_string()),
        })
        .map_err(|e| StatsError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| StatsError::Io(e.to_string()))
}

/// Read ratings written by [`write_ratings_csv`], with the verdict column.
pub fn read_ratings_csv<R: Read>(
    reader: R,
) -> Result<Vec<(RatingRecord, Option<bool>)>, StatsError> {
    let mut out = Vec::new();
    for (i, row) in csv::Reader::from_reader(reader)
        .deserialize::<CsvRow>()
        .enumerate()
    {
        let row = row.map_err(|e| StatsError::Io(format!("row {}: {e}", i + 1)))?;
        let verdict = match row.verdict.as_deref() {
            None | Some("") => None,
            Some("accepted") => Some(true),
            Some("rejected") => Some(false),
            Some(other) => {
                return Err(StatsError::Io(format!(
                    "row {}: unknown verdict {other:?}",
                    i + 1
                )))
            }
        };
        let record = RatingRecord {
            assessor: row.assessor,
            item: row.item,
            q1: row.q1,
            q2: row.q2,
            timestamp: row.timestamp,
            context_shown: false,
        };
        record.validate()?;
        out.push((record, verdict));
    }
    Ok(out)
}
