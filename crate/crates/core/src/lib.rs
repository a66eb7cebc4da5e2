//! Multiple-choice question generation toolkit.
//!
//! The crate covers the full path from reading-comprehension datasets to
//! evaluated multiple-choice questions:
//!
//! * [`corpus`] reads SQuAD v2 and RACE files into unified records.
//! * [`tokenizer`] is a byte-level BPE tokenizer plus the prompt layouts used
//!   for question generation, distractor generation and option scoring.
//! * [`decoding`] drives a generator backend token by token (repetition
//!   penalty, sampling, distractor de-duplication and retries).
//! * [`qafilter`] answers a four-option question with a scorer backend and
//!   accepts or rejects it.
//! * [`metrics`] implements BLEU-1..4 and ROUGE-L with slot-wise pairing.
//! * [`humaneval`] plans rating assignments and computes Fleiss' kappa and
//!   Pearson's chi-squared test.
//! * [`backends`] defines the inference contracts with mock, scripted and
//!   HTTP implementations.
//! * [`interface`] holds the pipeline configuration, the rating store, the
//!   rating service and the pipeline stage drivers used by the CLI.
//!
//! Model inference is never performed in-process: every model call goes
//! through [`backends::GeneratorBackend`] or [`backends::ScorerBackend`].

pub mod backends;
pub mod corpus;
pub mod decoding;
pub mod humaneval;
pub mod interface;
pub mod jsonl;
pub mod metrics;
pub mod qafilter;
pub mod tokenizer;

mod hash;

pub use corpus::{CorpusStats, McqItem, Source, Split, SquadItem};
pub use decoding::{DistractorSet, GenerationConfig, LogitVector};
pub use metrics::{BleuConfig, DistractorEvalReport, RougeLScore};
pub use qafilter::{OptionScores, QaVerdict};
pub use tokenizer::{BpeVocab, SpecialTokens, TokenSequence, Tokenizer};
