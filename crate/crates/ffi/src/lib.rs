//! C ABI over the mcqforge tokenizer, metrics, decoding penalty, QA decision
//! rule and rating statistics.
//!
//! Conventions:
//! - Every fallible function returns [`MqfStatus`]; on failure a message is
//!   available from [`mqf_last_error`] on the same thread.
//! - Output parameters are written only on success.
//! - Memory returned by the library (`char *`, id arrays, tokenizers) must be
//!   released with the matching `mqf_*_free` function.
//! - Strings are NUL-terminated UTF-8.
//! - Panics never cross the boundary; they surface as [`MqfStatus::Panic`].

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mcqforge::decoding::apply_repetition_penalty;
use mcqforge::humaneval::{chi2_survival, chi_squared_test, fleiss_kappa, StatsError};
use mcqforge::metrics::{self, metric_tokenize, BleuConfig, EvalConfig, SlotScores};
use mcqforge::qafilter::{classify, presentation_order, softmax_normalize, OptionScores};
use mcqforge::tokenizer::TokenizerError;
use mcqforge::{LogitVector, Tokenizer};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MqfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    /// The statistic is undefined for this input (e.g. kappa with a single category).
    Degenerate = 5,
    UnknownToken = 6,
    Panic = 7,
}

/// Opaque tokenizer handle.
pub struct MqfTokenizer(Tokenizer);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MqfRougeL {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MqfSlotScores {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge_l_p: f64,
    pub rouge_l_r: f64,
    pub rouge_l_f1: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MqfKappa {
    pub kappa: f64,
    pub mean_observed_agreement: f64,
    pub expected_agreement: f64,
    pub n_subjects: usize,
    pub n_raters: u32,
    pub n_categories: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MqfChiSquared {
    pub statistic: f64,
    pub df: u32,
    pub p_value: f64,
}

/// QA filter decision for one item, options in presentation order.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MqfQaDecision {
    pub probabilities: [f64; 4],
    /// Position of the highest-scoring option (first on ties).
    pub chosen: usize,
    pub accepted: bool,
}

struct Failure(MqfStatus, String);

impl Failure {
    fn invalid(msg: impl Into<String>) -> Self {
        Self(MqfStatus::InvalidArgument, msg.into())
    }
}

impl From<TokenizerError> for Failure {
    fn from(e: TokenizerError) -> Self {
        let status = match e {
            TokenizerError::Io { .. } => MqfStatus::Io,
            TokenizerError::UnknownId(_) => MqfStatus::UnknownToken,
            _ => MqfStatus::InvalidArgument,
        };
        Self(status, e.to_string())
    }
}

impl From<StatsError> for Failure {
    fn from(e: StatsError) -> Self {
        let status = match e {
            StatsError::Degenerate => MqfStatus::Degenerate,
            _ => MqfStatus::InvalidArgument,
        };
        Self(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', "\\0")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn run(f: impl FnOnce() -> Result<(), Failure>) -> MqfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MqfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            MqfStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(MqfStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null or point to a NUL-terminated string.
unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(MqfStatus::InvalidUtf8, format!("{name}: {e}")))
}

/// # Safety
/// `p` must be valid for `len` reads when `len > 0`.
unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be valid for three string pointer reads.
unsafe fn three_texts(p: *const *const c_char, name: &str) -> Result<Vec<String>, Failure> {
    let ptrs = slice(p, 3, name)?;
    ptrs.iter()
        .enumerate()
        .map(|(i, &s)| text(s, &format!("{name}[{i}]")).map(str::to_owned))
        .collect()
}

fn slot(s: &SlotScores) -> MqfSlotScores {
    MqfSlotScores {
        bleu1: s.bleu1,
        bleu2: s.bleu2,
        bleu3: s.bleu3,
        bleu4: s.bleu4,
        rouge_l_p: s.rouge_l_p,
        rouge_l_r: s.rouge_l_r,
        rouge_l_f1: s.rouge_l_f1,
    }
}

// --- errors ----------------------------------------------------------------

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mqf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn mqf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// --- tokenizer -------------------------------------------------------------

/// Byte-level tokenizer (no merges) with the five marker tokens.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn mqf_tokenizer_byte_level(out: *mut *mut MqfTokenizer) -> MqfStatus {
    run(|| {
        non_null(out, "out")?;
        *out = Box::into_raw(Box::new(MqfTokenizer(Tokenizer::byte_level())));
        Ok(())
    })
}

/// Load a GPT-2 style `vocab.json` and `merges.txt`.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mqf_tokenizer_from_files(
    vocab_path: *const c_char,
    merges_path: *const c_char,
    out: *mut *mut MqfTokenizer,
) -> MqfStatus {
    run(|| {
        let vocab = text(vocab_path, "vocab_path")?;
        let merges = text(merges_path, "merges_path")?;
        non_null(out, "out")?;
        let tok = Tokenizer::from_files(Path::new(vocab), Path::new(merges))?;
        *out = Box::into_raw(Box::new(MqfTokenizer(tok)));
        Ok(())
    })
}

/// # Safety
/// `tok` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mqf_tokenizer_free(tok: *mut MqfTokenizer) {
    if !tok.is_null() {
        drop(Box::from_raw(tok));
    }
}

/// Encode `text`; the ids are returned in a new array of `*out_len` entries
/// to be released with [`mqf_ids_free`]. An empty input yields NULL and 0.
///
/// # Safety
/// `tok` must be a live handle, `input` a NUL-terminated string, and the
/// output pointers writable.
#[no_mangle]
pub unsafe extern "C" fn mqf_tokenizer_encode(
    tok: *const MqfTokenizer,
    input: *const c_char,
    out_ids: *mut *mut u32,
    out_len: *mut usize,
) -> MqfStatus {
    run(|| {
        non_null(tok, "tok")?;
        let s = text(input, "input")?;
        non_null(out_ids, "out_ids")?;
        non_null(out_len, "out_len")?;
        let ids = (*tok).0.encode(s).ids.into_boxed_slice();
        *out_len = ids.len();
        *out_ids = if ids.is_empty() {
            ptr::null_mut()
        } else {
            Box::into_raw(ids).cast()
        };
        Ok(())
    })
}

/// # Safety
/// `ids`/`len` must come from [`mqf_tokenizer_encode`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mqf_ids_free(ids: *mut u32, len: usize) {
    if !ids.is_null() && len > 0 {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(ids, len)));
    }
}

/// Decode ids into a new string released with [`mqf_string_free`].
/// Byte sequences that are not valid UTF-8 decode to U+FFFD.
///
/// # Safety
/// `tok` must be a live handle and `ids` valid for `len` reads.
#[no_mangle]
pub unsafe extern "C" fn mqf_tokenizer_decode(
    tok: *const MqfTokenizer,
    ids: *const u32,
    len: usize,
    out: *mut *mut c_char,
) -> MqfStatus {
    run(|| {
        non_null(tok, "tok")?;
        let ids = slice(ids, len, "ids")?;
        non_null(out, "out")?;
        let s = (*tok).0.decode(ids)?;
        let c = CString::new(s).map_err(|_| Failure::invalid("decoded text contains NUL"))?;
        *out = c.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn mqf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// --- metrics ---------------------------------------------------------------

/// Sentence BLEU of `hyp` against `reference` with orders 1..=max_order.
/// Both texts are lowercased and split with punctuation as separate tokens.
///
/// # Safety
/// Texts must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mqf_bleu(
    hyp: *const c_char,
    reference: *const c_char,
    max_order: u32,
    out: *mut f64,
) -> MqfStatus {
    run(|| {
        let h = metric_tokenize(text(hyp, "hyp")?);
        let r = metric_tokenize(text(reference, "reference")?);
        non_null(out, "out")?;
        let cfg =
            BleuConfig::new(max_order as usize).map_err(|e| Failure::invalid(e.to_string()))?;
        *out = metrics::bleu(&h, &r, &cfg);
        Ok(())
    })
}

/// ROUGE-L precision, recall and F1 over metric tokens.
///
/// # Safety
/// Texts must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mqf_rouge_l(
    hyp: *const c_char,
    reference: *const c_char,
    out: *mut MqfRougeL,
) -> MqfStatus {
    run(|| {
        let h = metric_tokenize(text(hyp, "hyp")?);
        let r = metric_tokenize(text(reference, "reference")?);
        non_null(out, "out")?;
        let s = metrics::rouge_l(&h, &r);
        *out = MqfRougeL {
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
        };
        Ok(())
    })
}

/// Score three generated distractors against three references, paired by
/// position. `per_slot` receives three entries; either output may be NULL.
///
/// # Safety
/// `generated` and `references` must each point to three strings;
/// `per_slot` (if non-NULL) must be writable for three entries.
#[no_mangle]
pub unsafe extern "C" fn mqf_evaluate_distractors(
    generated: *const *const c_char,
    references: *const *const c_char,
    per_slot: *mut MqfSlotScores,
    averaged: *mut MqfSlotScores,
) -> MqfStatus {
    run(|| {
        let g = three_texts(generated, "generated")?;
        let r = three_texts(references, "references")?;
        let report = metrics::evaluate_distractors(&g, &r, &EvalConfig::default())
            .map_err(|e| Failure::invalid(e.to_string()))?;
        if !per_slot.is_null() {
            for (i, s) in report.per_slot.iter().enumerate() {
                *per_slot.add(i) = slot(s);
            }
        }
        if !averaged.is_null() {
            *averaged = slot(&report.averaged);
        }
        Ok(())
    })
}

// --- decoding and QA -------------------------------------------------------

/// Apply the repetition penalty in place to `logits` for every id in `ids`
/// (positive logits divided by `theta`, negative ones multiplied).
///
/// # Safety
/// `logits` must be valid for `len` reads and writes, `ids` for `n_ids` reads.
#[no_mangle]
pub unsafe extern "C" fn mqf_apply_repetition_penalty(
    logits: *mut f32,
    len: usize,
    ids: *const u32,
    n_ids: usize,
    theta: f64,
) -> MqfStatus {
    run(|| {
        let ids: BTreeSet<u32> = slice(ids, n_ids, "ids")?.iter().copied().collect();
        if len == 0 {
            return Err(Failure::invalid("logits must not be empty"));
        }
        non_null(logits, "logits")?;
        let values = std::slice::from_raw_parts_mut(logits, len);
        let out = apply_repetition_penalty(&LogitVector(values.to_vec()), &ids, theta)
            .map_err(|e| Failure::invalid(e.to_string()))?;
        values.copy_from_slice(&out.0);
        Ok(())
    })
}

/// Presentation order for a shuffle seed: `out[p]` is the canonical option
/// index (0 = answer) shown at position `p`.
///
/// # Safety
/// `out` must be writable for four entries.
#[no_mangle]
pub unsafe extern "C" fn mqf_presentation_order(seed: u64, out: *mut usize) -> MqfStatus {
    run(|| {
        non_null(out, "out")?;
        for (i, c) in presentation_order(seed).into_iter().enumerate() {
            *out.add(i) = c;
        }
        Ok(())
    })
}

/// Decide one item from four option scores in presentation order, given the
/// position of the correct answer.
///
/// # Safety
/// `scores` must be valid for four reads; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mqf_qa_decide(
    scores: *const f64,
    gold: usize,
    out: *mut MqfQaDecision,
) -> MqfStatus {
    run(|| {
        let s = slice(scores, 4, "scores")?;
        non_null(out, "out")?;
        if gold >= 4 {
            return Err(Failure::invalid(format!(
                "gold position {gold} is out of range"
            )));
        }
        if let Some(bad) = s.iter().find(|x| !x.is_finite()) {
            return Err(Failure::invalid(format!("non-finite score {bad}")));
        }
        let scores = OptionScores {
            scores: [s[0], s[1], s[2], s[3]],
        };
        let chosen = classify(&scores);
        *out = MqfQaDecision {
            probabilities: softmax_normalize(&scores),
            chosen,
            accepted: chosen == gold,
        };
        Ok(())
    })
}

// --- statistics ------------------------------------------------------------

/// Fleiss' kappa from a row-major `n_subjects x n_categories` count matrix
/// where every row sums to `n_raters`.
///
/// # Safety
/// `counts` must be valid for `n_subjects * n_categories` reads; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mqf_fleiss_kappa(
    counts: *const u32,
    n_subjects: usize,
    n_categories: usize,
    n_raters: u32,
    out: *mut MqfKappa,
) -> MqfStatus {
    run(|| {
        let cells = n_subjects
            .checked_mul(n_categories)
            .ok_or_else(|| Failure::invalid("matrix size overflows"))?;
        if n_categories == 0 {
            return Err(Failure::invalid("n_categories must be positive"));
        }
        let flat = slice(counts, cells, "counts")?;
        non_null(out, "out")?;
        let rows: Vec<&[u32]> = flat.chunks(n_categories).collect();
        let k = fleiss_kappa(&rows, n_raters)?;
        *out = MqfKappa {
            kappa: k.kappa,
            mean_observed_agreement: k.mean_observed_agreement,
            expected_agreement: k.expected_agreement,
            n_subjects: k.n_subjects,
            n_raters: k.n_raters,
            n_categories: k.n_categories,
        };
        Ok(())
    })
}

/// Pearson chi-squared test of independence on a row-major `rows x cols`
/// contingency table.
///
/// # Safety
/// `table` must be valid for `rows * cols` reads; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mqf_chi_squared_test(
    table: *const f64,
    rows: usize,
    cols: usize,
    out: *mut MqfChiSquared,
) -> MqfStatus {
    run(|| {
        let cells = rows
            .checked_mul(cols)
            .ok_or_else(|| Failure::invalid("table size overflows"))?;
        if cols == 0 {
            return Err(Failure::invalid("cols must be positive"));
        }
        let flat = slice(table, cells, "table")?;
        non_null(out, "out")?;
        let table: Vec<&[f64]> = flat.chunks(cols).collect();
        let t = chi_squared_test(&table)?;
        *out = MqfChiSquared {
            statistic: t.statistic,
            df: t.df,
            p_value: t.p_value,
        };
        Ok(())
    })
}

/// Upper tail P(X > x) of a chi-squared distribution with `df` degrees of
/// freedom. 1 for x <= 0; NaN when x is NaN or df is not positive.
#[no_mangle]
pub extern "C" fn mqf_chi2_survival(x: f64, df: f64) -> f64 {
    catch_unwind(|| chi2_survival(x, df)).unwrap_or(f64::NAN)
}
