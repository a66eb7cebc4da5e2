#ifndef MCQFORGE_H
#define MCQFORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum MqfStatus {
  MQF_STATUS_OK = 0,
  MQF_STATUS_NULL_POINTER = 1,
  MQF_STATUS_INVALID_UTF8 = 2,
  MQF_STATUS_INVALID_ARGUMENT = 3,
  MQF_STATUS_IO = 4,
  // The statistic is undefined for this input (e.g. kappa with a single category).
  MQF_STATUS_DEGENERATE = 5,
  MQF_STATUS_UNKNOWN_TOKEN = 6,
  MQF_STATUS_PANIC = 7,
} MqfStatus;

// Opaque tokenizer handle.
typedef struct MqfTokenizer MqfTokenizer;

typedef struct MqfRougeL {
  double precision;
  double recall;
  double f1;
} MqfRougeL;

typedef struct MqfSlotScores {
  double bleu1;
  double bleu2;
  double bleu3;
  double bleu4;
  double rouge_l_p;
  double rouge_l_r;
  double rouge_l_f1;
} MqfSlotScores;

// QA filter decision for one item, options in presentation order.
typedef struct MqfQaDecision {
  double probabilities[4];
  // Position of the highest-scoring option (first on ties).
  size_t chosen;
  bool accepted;
} MqfQaDecision;

typedef struct MqfKappa {
  double kappa;
  double mean_observed_agreement;
  double expected_agreement;
  size_t n_subjects;
  uint32_t n_raters;
  size_t n_categories;
} MqfKappa;

typedef struct MqfChiSquared {
  double statistic;
  uint32_t df;
  double p_value;
} MqfChiSquared;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer stays
// valid until the next failing call on the same thread.
const char *mqf_last_error(void);

// Library version as a static string.
const char *mqf_version(void);

// Byte-level tokenizer (no merges) with the five marker tokens.
//
// # Safety
// `out` must be a valid pointer to write the handle to.
enum MqfStatus mqf_tokenizer_byte_level(struct MqfTokenizer **out);

// Load a GPT-2 style `vocab.json` and `merges.txt`.
//
// # Safety
// Paths must be NUL-terminated strings; `out` must be writable.
enum MqfStatus mqf_tokenizer_from_files(const char *vocab_path,
                                        const char *merges_path,
                                        struct MqfTokenizer **out);

// # Safety
// `tok` must be NULL or a handle from this library not yet freed.
void mqf_tokenizer_free(struct MqfTokenizer *tok);

// Encode `text`; the ids are returned in a new array of `*out_len` entries
// to be released with [`mqf_ids_free`]. An empty input yields NULL and 0.
//
// # Safety
// `tok` must be a live handle, `input` a NUL-terminated string, and the
// output pointers writable.
enum MqfStatus mqf_tokenizer_encode(const struct MqfTokenizer *tok,
                                    const char *input,
                                    uint32_t **out_ids,
                                    size_t *out_len);

// # Safety
// `ids`/`len` must come from [`mqf_tokenizer_encode`] and not be freed twice.
void mqf_ids_free(uint32_t *ids, size_t len);

// Decode ids into a new string released with [`mqf_string_free`].
// Byte sequences that are not valid UTF-8 decode to U+FFFD.
//
// # Safety
// `tok` must be a live handle and `ids` valid for `len` reads.
enum MqfStatus mqf_tokenizer_decode(const struct MqfTokenizer *tok,
                                    const uint32_t *ids,
                                    size_t len,
                                    char **out);

// # Safety
// `s` must be NULL or a string returned by this library.
void mqf_string_free(char *s);

// Sentence BLEU of `hyp` against `reference` with orders 1..=max_order.
// Both texts are lowercased and split with punctuation as separate tokens.
//
// # Safety
// Texts must be NUL-terminated; `out` writable.
enum MqfStatus mqf_bleu(const char *hyp, const char *reference, uint32_t max_order, double *out);

// ROUGE-L precision, recall and F1 over metric tokens.
//
// # Safety
// Texts must be NUL-terminated; `out` writable.
enum MqfStatus mqf_rouge_l(const char *hyp, const char *reference, struct MqfRougeL *out);

// Score three generated distractors against three references, paired by
// position. `per_slot` receives three entries; either output may be NULL.
//
// # Safety
// `generated` and `references` must each point to three strings;
// `per_slot` (if non-NULL) must be writable for three entries.
enum MqfStatus mqf_evaluate_distractors(const char *const *generated,
                                        const char *const *references,
                                        struct MqfSlotScores *per_slot,
                                        struct MqfSlotScores *averaged);

// Apply the repetition penalty in place to `logits` for every id in `ids`
// (positive logits divided by `theta`, negative ones multiplied).
//
// # Safety
// `logits` must be valid for `len` reads and writes, `ids` for `n_ids` reads.
enum MqfStatus mqf_apply_repetition_penalty(float *logits,
                                            size_t len,
                                            const uint32_t *ids,
                                            size_t n_ids,
                                            double theta);

// Presentation order for a shuffle seed: `out[p]` is the canonical option
// index (0 = answer) shown at position `p`.
//
// # Safety
// `out` must be writable for four entries.
enum MqfStatus mqf_presentation_order(uint64_t seed, size_t *out);

// Decide one item from four option scores in presentation order, given the
// position of the correct answer.
//
// # Safety
// `scores` must be valid for four reads; `out` writable.
enum MqfStatus mqf_qa_decide(const double *scores, size_t gold, struct MqfQaDecision *out);

// Fleiss' kappa from a row-major `n_subjects x n_categories` count matrix
// where every row sums to `n_raters`.
//
// # Safety
// `counts` must be valid for `n_subjects * n_categories` reads; `out` writable.
enum MqfStatus mqf_fleiss_kappa(const uint32_t *counts,
                                size_t n_subjects,
                                size_t n_categories,
                                uint32_t n_raters,
                                struct MqfKappa *out);

// Pearson chi-squared test of independence on a row-major `rows x cols`
// contingency table.
//
// # Safety
// `table` must be valid for `rows * cols` reads; `out` writable.
enum MqfStatus mqf_chi_squared_test(const double *table,
                                    size_t rows,
                                    size_t cols,
                                    struct MqfChiSquared *out);

// Upper tail P(X > x) of a chi-squared distribution with `df` degrees of
// freedom. 1 for x <= 0; NaN when x is NaN or df is not positive.
double mqf_chi2_survival(double x, double df);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MCQFORGE_H */
