//! BLEU-1..4 and ROUGE-L for distractors.
//!
//! Generated distractors are compared slot by slot with the reference
//! distractors (first with first, and so on), each slot is scored on its
//! own, and the three slots are averaged. Corpus scores are the mean of the
//! per-item reports by default; pooled n-gram counts are available as an
//! alternative for BLEU.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("BLEU order must be between 1 and 4, got {0}")]
    Order(usize),
    #[error("expected 3 {which} distractors, got {got}")]
    SlotCount { which: &'static str, got: usize },
    #[error("cannot aggregate an empty corpus")]
    Empty,
}

/// Lowercase, split on whitespace, and emit every character that is neither
/// alphanumeric nor whitespace as its own token.
pub fn metric_tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts
            .entry(w.iter().map(AsRef::as_ref).collect())
            .or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram matches against several references: each hypothesis n-gram
/// counts at most as often as it occurs in any single reference. Returns
/// `(clipped_matches, hypothesis_ngrams)`.
pub fn modified_precision_multi<T: AsRef<str>>(
    hyp: &[T],
    refs: &[&[T]],
    n: usize,
) -> (usize, usize) {
    let hyp_counts = ngram_counts(hyp, n);
    let total = hyp_counts.values().sum();
    let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
    let clipped = hyp_counts
        .iter()
        .map(|(gram, &c)| {
            let max_ref = ref_counts
                .iter()
                .map(|rc| rc.get(gram).copied().unwrap_or(0))
                .max()
                .unwrap_or(0);
            c.min(max_ref)
        })
        .sum();
    (clipped, total)
}

pub fn modified_precision<T: AsRef<str>>(hyp: &[T], reference: &[T], n: usize) -> (usize, usize) {
    modified_precision_multi(hyp, &[reference], n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Smoothing {
    /// A zero precision at any order makes the score zero.
    #[default]
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuConfig {
    pub max_order: usize,
    pub smoothing: Smoothing,
}

impl BleuConfig {
    pub fn new(max_order: usize) -> Result<Self, MetricsError> {
        if !(1..=4).contains(&max_order) {
            return Err(MetricsError::Order(max_order));
        }
        Ok(Self {
            max_order,
            smoothing: Smoothing::None,
        })
    }
}

impl Default for BleuConfig {
    fn default() -> Self {
        Self {
            max_order: 4,
            smoothing: Smoothing::None,
        }
    }
}

/// `exp(1 - r/h)` when the hypothesis is not longer than the reference.
pub fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

/// BLEU from per-order `(clipped, total)` counts and lengths.
fn bleu_from_counts(
    counts: &[(usize, usize)],
    hyp_len: usize,
    ref_len: usize,
    _smoothing: Smoothing,
) -> f64 {
    if hyp_len == 0 || counts.iter().any(|&(c, t)| c == 0 || t == 0) {
        return 0.0;
    }
    let log_mean = counts
        .iter()
        .map(|&(c, t)| (c as f64 / t as f64).ln())
        .sum::<f64>()
        / counts.len() as f64;
    brevity_penalty(hyp_len, ref_len) * log_mean.exp()
}

/// Sentence BLEU with uniform weights over orders `1..=max_order`.
pub fn bleu<T: AsRef<str>>(hyp: &[T], reference: &[T], config: &BleuConfig) -> f64 {
    let counts: Vec<_> = (1..=config.max_order)
        .map(|n| modified_precision(hyp, reference, n))
        .collect();
    bleu_from_counts(&counts, hyp.len(), reference.len(), config.smoothing)
}

/// Length of a longest common subsequence, O(|a|·|b|) time, O(|b|) memory.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeLScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn rouge_l<T: PartialEq>(hyp: &[T], reference: &[T]) -> RougeLScore {
    if hyp.is_empty() || reference.is_empty() {
        return RougeLScore {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        };
    }
    let lcs = lcs_length(hyp, reference) as f64;
    let precision = lcs / hyp.len() as f64;
    let recall = lcs / reference.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    RougeLScore {
        precision,
        recall,
        f1,
    }
}

/// All metrics for one slot (or an average of slots).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SlotScores {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    #[serde(rename = "rougeL_p")]
    pub rouge_l_p: f64,
    #[serde(rename = "rougeL_r")]
    pub rouge_l_r: f64,
    #[serde(rename = "rougeL_f1")]
    pub rouge_l_f1: f64,
}

impl SlotScores {
    fn fields(&self) -> [f64; 7] {
        [
            self.bleu1,
            self.bleu2,
            self.bleu3,
            self.bleu4,
            self.rouge_l_p,
            self.rouge_l_r,
            self.rouge_l_f1,
        ]
    }

    fn from_fields(f: [f64; 7]) -> Self {
        Self {
            bleu1: f[0],
            bleu2: f[1],
            bleu3: f[2],
            bleu4: f[3],
            rouge_l_p: f[4],
            rouge_l_r: f[5],
            rouge_l_f1: f[6],
        }
    }

    /// Field-wise arithmetic mean.
    pub fn mean<'a>(scores: impl IntoIterator<Item = &'a SlotScores>) -> Option<Self> {
        let mut sum = [0.0; 7];
        let mut n = 0usize;
        for s in scores {
            for (acc, v) in sum.iter_mut().zip(s.fields()) {
                *acc += v;
            }
            n += 1;
        }
        (n > 0).then(|| Self::from_fields(sum.map(|v| v / n as f64)))
    }

    pub fn score(hyp: &str, reference: &str, smoothing: Smoothing) -> Self {
        let h = metric_tokenize(hyp);
        let r = metric_tokenize(reference);
        let b = |n| {
            bleu(
                &h,
                &r,
                &BleuConfig {
                    max_order: n,
                    smoothing,
                },
            )
        };
        let rl = rouge_l(&h, &r);
        Self {
            bleu1: b(1),
            bleu2: b(2),
            bleu3: b(3),
            bleu4: b(4),
            rouge_l_p: rl.precision,
            rouge_l_r: rl.recall,
            rouge_l_f1: rl.f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Mean of per-item sentence scores.
    #[default]
    Averaged,
    /// BLEU from n-gram counts and lengths pooled over all items (per slot);
    /// ROUGE-L stays averaged.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalConfig {
    pub smoothing: Smoothing,
    pub aggregation: Aggregation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistractorEvalReport {
    pub per_slot: [SlotScores; 3],
    pub averaged: SlotScores,
}

fn three<'a, S: AsRef<str>>(v: &'a [S], which: &'static str) -> Result<[&'a str; 3], MetricsError> {
    match v {
        [a, b, c] => Ok([a.as_ref(), b.as_ref(), c.as_ref()]),
        _ => Err(MetricsError::SlotCount {
            which,
            got: v.len(),
        }),
    }
}

/// Score generated slot `i` against reference slot `i` only.
pub fn evaluate_distractors<S: AsRef<str>>(
    generated: &[S],
    references: &[S],
    config: &EvalConfig,
) -> Result<DistractorEvalReport, MetricsError> {
    let g = three(generated, "generated")?;
    let r = three(references, "reference")?;
    let per_slot = [0, 1, 2].map(|i| SlotScores::score(g[i], r[i], config.smoothing));
    let averaged = SlotScores::mean(&per_slot).expect("three slots");
    Ok(DistractorEvalReport { per_slot, averaged })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEvalReport {
    pub items: usize,
    pub aggregation: Aggregation,
    pub per_slot: [SlotScores; 3],
    pub averaged: SlotScores,
}

/// Corpus-level scores over `(generated, reference)` triples.
pub fn evaluate_corpus<S: AsRef<str>>(
    pairs: &[(Vec<S>, Vec<S>)],
    config: &EvalConfig,
) -> Result<CorpusEvalReport, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let reports = pairs
        .iter()
        .map(|(g, r)| evaluate_distractors(g, r, config))
        .collect::<Result<Vec<_>, _>>()?;
    let mut per_slot = [0, 1, 2]
        .map(|i| SlotScores::mean(reports.iter().map(|r| &r.per_slot[i])).expect("non-empty"));

    if config.aggregation == Aggregation::Pooled {
        for (slot, scores) in per_slot.iter_mut().enumerate() {
            let mut counts = [[0usize; 2]; 4];
            let (mut hyp_len, mut ref_len) = (0, 0);
            for (g, r) in pairs {
                let h = metric_tokenize(g[slot].as_ref());
                let rt = metric_tokenize(r[slot].as_ref());
                hyp_len += h.len();
                ref_len += rt.len();
                for (n, acc) in counts.iter_mut().enumerate() {
                    let (c, t) = modified_precision(&h, &rt, n + 1);
                    acc[0] += c;
                    acc[1] += t;
                }
            }
            let pooled = |order: usize| {
                let c: Vec<_> = counts[..order].iter().map(|a| (a[0], a[1])).collect();
                bleu_from_counts(&c, hyp_len, ref_len, config.smoothing)
            };
            scores.bleu1 = pooled(1);
            scores.bleu2 = pooled(2);
            scores.bleu3 = pooled(3);
            scores.bleu4 = pooled(4);
        }
    }
    let averaged = SlotScores::mean(&per_slot).expect("three slots");
    Ok(CorpusEvalReport {
        items: pairs.len(),
        aggregation: config.aggregation,
        per_slot,
        averaged,
    })
}

/// Plain-text table with BLEU-1..4 and ROUGE-L (recall), all in percent.
pub fn render_table(rows: &[(&str, &SlotScores)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(5);
    let mut out = format!(
        "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}  {:>7}\n",
        "Model", "BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "ROUGE-L"
    );
    for (label, s) in rows {
        out.push_str(&format!(
            "{:<width$}  {:>7.2}  {:>7.2}  {:>7.2}  {:>7.2}  {:>7.2}\n",
            label,
            s.bleu1 * 100.0,
            s.bleu2 * 100.0,
            s.bleu3 * 100.0,
            s.bleu4 * 100.0,
            s.rouge_l_r * 100.0
        ));
    }
    out
}
