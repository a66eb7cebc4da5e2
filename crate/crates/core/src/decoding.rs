//! Token-by-token generation over a [`GeneratorBackend`].
//!
//! Every step asks the backend for next-token logits, applies the repetition
//! penalty to tokens already generated in this continuation, and samples.
//! Question and distractor generation add the post-processing on top:
//! trimming at markers, splitting distractors, removing empty and duplicate
//! candidates, and regenerating until three distinct distractors exist.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, GeneratorBackend};
use crate::corpus::normalize_option;
use crate::tokenizer::{Marker, TokenSequence, Tokenizer, TokenizerError};

#[derive(Debug, thiserror::Error)]
pub enum DecodingError {
    #[error("invalid generation config: {0}")]
    Config(String),
    #[error("invalid logits: {0}")]
    InvalidLogits(String),
    #[error("no token left to sample after filtering")]
    NothingToSample,
    #[error("prompt must not be empty")]
    EmptyPrompt,
    #[error("backend returned {got} logits, vocabulary has {expected}")]
    LogitLength { expected: usize, got: usize },
    #[error("backend failed on attempt {attempt}, step {step}: {source}")]
    Backend {
        attempt: u32,
        step: usize,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Prompt(#[from] TokenizerError),
    #[error("generation still empty after {attempts} attempt(s)")]
    GenerationFailed { attempts: u32 },
    #[error("only {} unique distractor(s) after {attempts} attempt(s)", partial.len())]
    MaxRetriesExceeded { partial: Vec<String>, attempts: u32 },
}

/// Next-token scores over the whole vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitVector(pub Vec<f32>);

impl LogitVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry; ties resolve to the lowest index. NaN and
    /// `-inf` entries never win.
    pub fn argmax(&self) -> Option<u32> {
        let mut best: Option<(usize, f32)> = None;
        for (i, &x) in self.0.iter().enumerate() {
            if x.is_nan() || x == f32::NEG_INFINITY {
                continue;
            }
            if best.is_none_or(|(_, b)| x > b) {
                best = Some((i, x));
            }
        }
        best.map(|(i, _)| i as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub max_new_tokens: usize,
    /// Repetition penalty coefficient, at least 1.
    pub repetition_penalty: f64,
    /// 0 selects greedy decoding.
    pub temperature: f64,
    pub top_k: Option<usize>,
    pub top_p: Option<f64>,
    pub seed: u64,
    /// Regeneration attempts allowed after the first one.
    pub max_retries: u32,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            max_new_tokens: 64,
            repetition_penalty: 1.2,
            temperature: 1.0,
            top_k: None,
            top_p: Some(0.9),
            seed: 0,
            max_retries: 10,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), DecodingError> {
        let bad = |m: &str| Err(DecodingError::Config(m.to_string()));
        if self.max_new_tokens == 0 {
            return bad("max_new_tokens must be positive");
        }
        if !(self.repetition_penalty >= 1.0 && self.repetition_penalty.is_finite()) {
            return bad("repetition_penalty must be a finite value >= 1");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be a finite value >= 0");
        }
        if self.top_k == Some(0) {
            return bad("top_k must be positive");
        }
        if let Some(p) = self.top_p {
            if !(p > 0.0 && p <= 1.0) {
                return bad("top_p must lie in (0, 1]");
            }
        }
        if self.max_retries == 0 {
            return bad("max_retries must be positive");
        }
        Ok(())
    }
}

/// Sign-aware repetition penalty: for every id in `generated`, a positive
/// logit is divided by `theta` and a negative one multiplied by it. Ids
/// outside the vector are ignored.
pub fn apply_repetition_penalty(
    logits: &LogitVector,
    generated: &BTreeSet<u32>,
    theta: f64,
) -> Result<LogitVector, DecodingError> {
    if theta.is_nan() || theta < 1.0 {
        return Err(DecodingError::Config(format!(
            "repetition penalty {theta} is below 1"
        )));
    }
    let mut out = logits.clone();
    if theta == 1.0 {
        return Ok(out);
    }
    for &id in generated {
        if let Some(x) = out.0.get_mut(id as usize) {
            let v = f64::from(*x);
            *x = if v > 0.0 { v / theta } else { v * theta } as f32;
        }
    }
    Ok(out)
}

/// Pick the next token: greedy at temperature 0, otherwise a draw from the
/// temperature-scaled softmax restricted by `top_k` and then `top_p`.
pub fn sample_next<R: Rng + ?Sized>(
    logits: &LogitVector,
    config: &GenerationConfig,
    rng: &mut R,
) -> Result<u32, DecodingError> {
    if let Some(i) = logits
        .0
        .iter()
        .position(|x| x.is_nan() || *x == f32::INFINITY)
    {
        return Err(DecodingError::InvalidLogits(format!(
            "entry {i} is {}",
            logits.0[i]
        )));
    }
    if config.temperature == 0.0 {
        return logits.argmax().ok_or(DecodingError::NothingToSample);
    }

    let mut cands: Vec<(u32, f64)> = logits
        .0
        .iter()
        .enumerate()
        .filter(|(_, &x)| x != f32::NEG_INFINITY)
        .map(|(i, &x)| (i as u32, f64::from(x) / config.temperature))
        .collect();
    if cands.is_empty() {
        return Err(DecodingError::NothingToSample);
    }
    // Descending by value, ascending id among equals.
    cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if let Some(k) = config.top_k {
        cands.truncate(k);
    }

    let max = cands[0].1;
    let mut weights: Vec<f64> = cands.iter().map(|&(_, v)| (v - max).exp()).collect();
    if let Some(p) = config.top_p {
        let total: f64 = weights.iter().sum();
        let mut cum = 0.0;
        let mut keep = weights.len();
        for (i, w) in weights.iter().enumerate() {
            cum += w / total;
            if cum >= p {
                keep = i + 1;
                break;
            }
        }
        weights.truncate(keep);
        cands.truncate(keep);
    }

    let total: f64 = weights.iter().sum();
    let mut r = rng.random::<f64>() * total;
    for (&(id, _), w) in cands.iter().zip(&weights) {
        if r < *w {
            return Ok(id);
        }
        r -= w;
    }
    Ok(cands.last().expect("non-empty").0)
}

/// Independent RNG stream for attempt `attempt` of the generation seeded by `seed`.
pub fn attempt_rng(seed: u64, attempt: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(attempt));
    rng
}

/// Distractors that passed the emptiness and uniqueness filters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistractorSet {
    pub distractors: [String; 3],
    pub retries_used: u32,
}

/// Generation loop bound to one backend, tokenizer and configuration.
pub struct Generator<'a> {
    backend: &'a dyn GeneratorBackend,
    tokenizer: &'a Tokenizer,
    config: &'a GenerationConfig,
}

impl<'a> Generator<'a> {
    pub fn new(
        backend: &'a dyn GeneratorBackend,
        tokenizer: &'a Tokenizer,
        config: &'a GenerationConfig,
    ) -> Result<Self, DecodingError> {
        config.validate()?;
        if backend.vocab_size() != tokenizer.vocab_size() {
            return Err(DecodingError::Config(format!(
                "backend vocabulary has {} entries, tokenizer has {}",
                backend.vocab_size(),
                tokenizer.vocab_size()
            )));
        }
        Ok(Self {
            backend,
            tokenizer,
            config,
        })
    }

    fn sequence_attempt<R: Rng>(
        &self,
        prompt: &TokenSequence,
        rng: &mut R,
        attempt: u32,
    ) -> Result<TokenSequence, DecodingError> {
        if prompt.is_empty() {
            return Err(DecodingError::EmptyPrompt);
        }
        let end = self.tokenizer.marker_id(Marker::End);
        let mut input = prompt.ids.clone();
        let mut generated = BTreeSet::new();
        let mut out = Vec::new();
        for step in 0..self.config.max_new_tokens {
            let logits =
                self.backend
                    .next_logits(&input)
                    .map_err(|source| DecodingError::Backend {
                        attempt,
                        step,
                        source,
                    })?;
            if logits.len() != self.backend.vocab_size() {
                return Err(DecodingError::LogitLength {
                    expected: self.backend.vocab_size(),
                    got: logits.len(),
                });
            }
            let logits =
                apply_repetition_penalty(&logits, &generated, self.config.repetition_penalty)?;
            let next = sample_next(&logits, self.config, rng)?;
            if next == end {
                break;
            }
            out.push(next);
            generated.insert(next);
            input.push(next);
        }
        Ok(out.into())
    }

    /// Continuation of `prompt` up to (excluding) the end marker or
    /// `max_new_tokens` tokens.
    pub fn generate_sequence<R: Rng>(
        &self,
        prompt: &TokenSequence,
        rng: &mut R,
    ) -> Result<TokenSequence, DecodingError> {
        self.sequence_attempt(prompt, rng, 0)
    }

    /// Generate a question for `(context, answer)`; the continuation is cut at
    /// the first marker. Empty results are regenerated up to `max_retries`
    /// times, each attempt on a fresh RNG stream of `seed`.
    pub fn generate_question(
        &self,
        context: &str,
        answer: &str,
        seed: u64,
    ) -> Result<String, DecodingError> {
        let prompt = self.tokenizer.build_qg_prompt(context, answer)?;
        let attempts = self.config.max_retries + 1;
        for attempt in 0..attempts {
            let mut rng = attempt_rng(seed, attempt);
            let cont = self.sequence_attempt(&prompt, &mut rng, attempt)?;
            let cut = cont
                .ids
                .iter()
                .position(|&id| self.tokenizer.is_marker(id))
                .unwrap_or(cont.len());
            let text = self.tokenizer.decode(&cont.ids[..cut])?;
            let text = text.trim();
            if !text.is_empty() {
                return Ok(text.to_string());
            }
        }
        Err(DecodingError::GenerationFailed { attempts })
    }

    /// Candidate distractors in one continuation: segments between distractor
    /// markers, up to the first other marker.
    fn candidates(&self, cont: &TokenSequence) -> Result<Vec<String>, DecodingError> {
        let sep = self.tokenizer.marker_id(Marker::Distractor);
        let stop = cont
            .ids
            .iter()
            .position(|&id| id != sep && self.tokenizer.is_marker(id))
            .unwrap_or(cont.len());
        cont.ids[..stop]
            .split(|&id| id == sep)
            .map(|seg| Ok(self.tokenizer.decode(seg)?.trim().to_string()))
            .collect()
    }

    /// Generate three distractors for `(context, question, answer)`.
    ///
    /// Empty candidates and candidates equal (after normalization) to the
    /// answer or to an earlier candidate are dropped. Survivors accumulate
    /// across attempts until three exist or `max_retries` regenerations are
    /// spent.
    pub fn generate_distractors(
        &self,
        context: &str,
        question: &str,
        answer: &str,
        seed: u64,
    ) -> Result<DistractorSet, DecodingError> {
        let prompt = self.tokenizer.build_dg_prompt(context, question, answer)?;
        let mut seen = vec![normalize_option(answer)];
        let mut kept: Vec<String> = Vec::with_capacity(3);
        let attempts = self.config.max_retries + 1;
        for attempt in 0..attempts {
            let mut rng = attempt_rng(seed, attempt);
            let cont = self.sequence_attempt(&prompt, &mut rng, attempt)?;
            for cand in self.candidates(&cont)? {
                let key = normalize_option(&cand);
                if key.is_empty() || seen.contains(&key) {
                    continue;
                }
                seen.push(key);
                kept.push(cand);
                if kept.len() == 3 {
                    let distractors: [String; 3] = kept.try_into().expect("three");
                    return Ok(DistractorSet {
                        distractors,
                        retries_used: attempt,
                    });
                }
            }
        }
        Err(DecodingError::MaxRetriesExceeded {
            partial: kept,
            attempts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::ScriptedGenerator;

    fn greedy() -> GenerationConfig {
        GenerationConfig {
            temperature: 0.0,
            top_p: None,
            ..Default::default()
        }
    }

    #[test]
    fn penalty_identity_and_fixture() {
        let l = LogitVector(vec![2.0, -1.0, 0.5]);
        let set: BTreeSet<u32> = [0, 1].into();
        assert_eq!(apply_repetition_penalty(&l, &set, 1.0).unwrap(), l);
        assert_eq!(
            apply_repetition_penalty(&l, &set, 2.0).unwrap(),
            LogitVector(vec![1.0, -2.0, 0.5])
        );
        assert!(matches!(
            apply_repetition_penalty(&l, &set, 0.5),
            Err(DecodingError::Config(_))
        ));
    }

    #[test]
    fn argmax_and_ties() {
        let cfg = greedy();
        let mut rng = attempt_rng(0, 0);
        assert_eq!(
            sample_next(&LogitVector(vec![0.0, 0.0, 5.0]), &cfg, &mut rng).unwrap(),
            2
        );
        assert_eq!(
            sample_next(&LogitVector(vec![1.0, 1.0, 1.0]), &cfg, &mut rng).unwrap(),
            0
        );
    }

    #[test]
    fn all_neg_inf_is_an_error() {
        let l = LogitVector(vec![f32::NEG_INFINITY; 3]);
        let mut rng = attempt_rng(0, 0);
        assert!(matches!(
            sample_next(&l, &greedy(), &mut rng),
            Err(DecodingError::NothingToSample)
        ));
        let cfg = GenerationConfig::default();
        assert!(matches!(
            sample_next(&l, &cfg, &mut rng),
            Err(DecodingError::NothingToSample)
        ));
        let l = LogitVector(vec![f32::NAN, 0.0]);
        assert!(matches!(
            sample_next(&l, &cfg, &mut rng),
            Err(DecodingError::InvalidLogits(_))
        ));
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let l = LogitVector((0..50).map(|i| (i % 7) as f32 * 0.3).collect());
        let cfg = GenerationConfig::default();
        let draw = |seed| {
            let mut rng = attempt_rng(seed, 0);
            (0..20)
                .map(|_| sample_next(&l, &cfg, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
        assert_ne!(draw(42), draw(43));
    }

    #[test]
    fn top_k_one_is_greedy() {
        let l = LogitVector(vec![0.1, 3.0, 2.9, -1.0]);
        let cfg = GenerationConfig {
            top_k: Some(1),
            ..Default::default()
        };
        let mut rng = attempt_rng(9, 0);
        for _ in 0..50 {
            assert_eq!(sample_next(&l, &cfg, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn top_p_restricts_support() {
        // probabilities ~ [0.665, 0.245, 0.09]: top_p 0.8 keeps ids 0 and 1.
        let l = LogitVector(vec![2.0, 1.0, 0.0]);
        let cfg = GenerationConfig {
            top_p: Some(0.8),
            ..Default::default()
        };
        let mut rng = attempt_rng(3, 0);
        let draws: BTreeSet<u32> = (0..2000)
            .map(|_| sample_next(&l, &cfg, &mut rng).unwrap())
            .collect();
        assert_eq!(draws, [0, 1].into());
    }

    #[test]
    fn config_validation() {
        assert!(GenerationConfig::default().validate().is_ok());
        for cfg in [
            GenerationConfig {
                repetition_penalty: 0.9,
                ..Default::default()
            },
            GenerationConfig {
                temperature: -1.0,
                ..Default::default()
            },
            GenerationConfig {
                max_retries: 0,
                ..Default::default()
            },
            GenerationConfig {
                max_new_tokens: 0,
                ..Default::default()
            },
            GenerationConfig {
                top_p: Some(0.0),
                ..Default::default()
            },
            GenerationConfig {
                top_k: Some(0),
                ..Default::default()
            },
        ] {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn sequence_replay_and_bound() {
        let tok = Tokenizer::byte_level();
        let prompt = tok.build_qg_prompt("c", "a").unwrap();
        let cfg = greedy();
        let mut rng = attempt_rng(0, 0);

        let b = ScriptedGenerator::from_texts(&tok, &["<|endoftext|>"]).unwrap();
        let g = Generator::new(&b, &tok, &cfg).unwrap();
        assert!(g.generate_sequence(&prompt, &mut rng).unwrap().is_empty());

        let b = ScriptedGenerator::new(
            vec![vec![7, 8]],
            tok.marker_id(Marker::End),
            tok.vocab_size(),
        )
        .unwrap();
        let g = Generator::new(&b, &tok, &cfg).unwrap();
        assert_eq!(
            g.generate_sequence(&prompt, &mut rng).unwrap().ids,
            vec![7, 8]
        );

        let b = crate::backends::MockGenerator::new(tok.vocab_size(), 1)
            .with_bias(tok.marker_id(Marker::End), -100.0);
        let cfg5 = GenerationConfig {
            max_new_tokens: 5,
            ..Default::default()
        };
        let g = Generator::new(&b, &tok, &cfg5).unwrap();
        assert_eq!(g.generate_sequence(&prompt, &mut rng).unwrap().len(), 5);
    }

    #[test]
    fn question_generation() {
        let tok = Tokenizer::byte_level();
        let cfg = greedy();
        let b = ScriptedGenerator::from_texts(&tok, &[" What colour is the sky? "]).unwrap();
        let g = Generator::new(&b, &tok, &cfg).unwrap();
        assert_eq!(
            g.generate_question("The sky is blue.", "blue", 1).unwrap(),
            "What colour is the sky?"
        );

        let b = ScriptedGenerator::from_texts(&tok, &["Why?<|answer|>junk"]).unwrap();
        let g = Generator::new(&b, &tok, &cfg).unwrap();
        assert_eq!(g.generate_question("ctx", "a", 1).unwrap(), "Why?");

        let cfg2 = GenerationConfig {
            max_retries: 1,
            ..greedy()
        };
        let b = ScriptedGenerator::from_texts(&tok, &["", " ", "late"]).unwrap();
        let g = Generator::new(&b, &tok, &cfg2).unwrap();
        assert!(matches!(
            g.generate_question("ctx", "a", 1),
            Err(DecodingError::GenerationFailed { attempts: 2 })
        ));
        assert_eq!(b.consumed(), 2);
    }

    #[test]
    fn distractor_accumulation() {
        let tok = Tokenizer::byte_level();
        let cfg = greedy();
        let b = ScriptedGenerator::from_texts(
            &tok,
            &["x<|distractor|>x<|distractor|>", "y<|distractor|>z"],
        )
        .unwrap();
        let g = Generator::new(&b, &tok, &cfg).unwrap();
        let set = g.generate_distractors("ctx", "q", "ans", 0).unwrap();
        assert_eq!(set.distractors, ["x", "y", "z"].map(String::from));
        assert_eq!(set.retries_used, 1);

        let b = ScriptedGenerator::from_texts(&tok, &["a<|distractor|>b<|distractor|>c"]).unwrap();
        let g = Generator::new(&b, &tok, &cfg).unwrap();
        assert_eq!(
            g.generate_distractors("ctx", "q", "ans", 0)
                .unwrap()
                .retries_used,
            0
        );
    }

    #[test]
    fn distractor_answer_duplicates_are_dropped() {
        let tok = Tokenizer::byte_level();
        let cfg = greedy();
        let b = ScriptedGenerator::from_texts(
            &tok,
            &[" The  ANSWER<|distractor|>p<|distractor|> P <|distractor|>q<|distractor|>r"],
        )
        .unwrap();
        let g = Generator::new(&b, &tok, &cfg).unwrap();
        let set = g.generate_distractors("ctx", "q", "the answer", 0).unwrap();
        assert_eq!(set.distractors, ["p", "q", "r"].map(String::from));
    }

    #[test]
    fn distractor_budget() {
        let tok = Tokenizer::byte_level();
        let cfg = GenerationConfig {
            max_retries: 3,
            ..greedy()
        };
        let empties = vec!["<|distractor|> <|distractor|>"; 10];
        let b = ScriptedGenerator::from_texts(&tok, &empties).unwrap();
        let g = Generator::new(&b, &tok, &cfg).unwrap();
        match g.generate_distractors("ctx", "q", "a", 0) {
            Err(DecodingError::MaxRetriesExceeded { partial, attempts }) => {
                assert!(partial.is_empty());
                assert_eq!(attempts, 4);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(b.consumed(), 4);
    }

    #[test]
    fn vocab_mismatch_rejected() {
        let tok = Tokenizer::byte_level();
        let b = crate::backends::MockGenerator::new(10, 0);
        assert!(Generator::new(&b, &tok, &GenerationConfig::default()).is_err());
    }
}
