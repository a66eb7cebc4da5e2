//! Byte-level BPE tokenizer compatible with the GPT-2 vocabulary files, and
//! the prompt layouts fed to the generator and scorer backends.
//!
//! Layouts (`<C>` context marker, `<Q>` question, `<A>` answer, `<D>`
//! distractor):
//!
//! ```text
//! question generation:    <C> context <A> answer <Q>
//! distractor generation:  <C> context <Q> question <A> answer <D>
//! option scoring:         <C> context <Q> question <A> option
//! ```

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum TokenizerError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid vocabulary: {0}")]
    Vocab(String),
    #[error("unknown token id {0}")]
    UnknownId(u32),
    #[error("{0} must not be empty")]
    EmptyField(&'static str),
    #[error("{field} contains the reserved marker {marker:?}")]
    ReservedMarker { field: &'static str, marker: String },
    #[error("prompt needs {needed} tokens without any context, limit is {limit}")]
    Overlength { needed: usize, limit: usize },
}

/// GPT-2's reversible byte → printable character table.
fn byte_to_unit_table() -> [char; 256] {
    let mut printable: Vec<u32> = (u32::from(b'!')..=u32::from(b'~'))
        .chain(0xA1..=0xAC)
        .chain(0xAE..=0xFF)
        .collect();
    let mut units: Vec<u32> = printable.clone();
    let mut extra = 0;
    for b in 0..256u32 {
        if !printable.contains(&b) {
            printable.push(b);
            units.push(256 + extra);
            extra += 1;
        }
    }
    let mut table = ['\0'; 256];
    for (b, u) in printable.into_iter().zip(units) {
        table[b as usize] = char::from_u32(u).expect("valid scalar");
    }
    table
}

/// Vocabulary, ordered merge rules and the byte ↔ unit bijection.
#[derive(Debug, Clone)]
pub struct BpeVocab {
    token_to_id: HashMap<String, u32>,
    id_to_token: HashMap<u32, String>,
    merges: Vec<(String, String)>,
    merge_rank: HashMap<(String, String), usize>,
    byte_to_unit: [char; 256],
    unit_to_byte: HashMap<char, u8>,
}

impl BpeVocab {
    /// Build a vocabulary from a token map and merges in rank order.
    ///
    /// Single-byte units missing from `token_to_id` are appended with fresh
    /// ids after the current maximum, so encoding is total for any input.
    pub fn new(
        mut token_to_id: HashMap<String, u32>,
        merges: Vec<(String, String)>,
    ) -> Result<Self, TokenizerError> {
        let mut id_to_token = HashMap::with_capacity(token_to_id.len() + 256);
        for (tok, &id) in &token_to_id {
            if let Some(prev) = id_to_token.insert(id, tok.clone()) {
                return Err(TokenizerError::Vocab(format!(
                    "id {id} assigned to both {prev:?} and {tok:?}"
                )));
            }
        }
        let byte_to_unit = byte_to_unit_table();
        let unit_to_byte = byte_to_unit
            .iter()
            .enumerate()
            .map(|(b, &u)| (u, b as u8))
            .collect();
        let mut next = token_to_id.values().max().map_or(0, |m| m + 1);
        for unit in byte_to_unit {
            let s = unit.to_string();
            if !token_to_id.contains_key(&s) {
                token_to_id.insert(s.clone(), next);
                id_to_token.insert(next, s);
                next += 1;
            }
        }

        let mut merge_rank = HashMap::with_capacity(merges.len());
        for (rank, (a, b)) in merges.iter().enumerate() {
            let joined = format!("{a}{b}");
            if !token_to_id.contains_key(&joined) {
                return Err(TokenizerError::Vocab(format!(
                    "merge {rank} ({a:?}, {b:?}) produces {joined:?} which is not in the vocabulary"
                )));
            }
            merge_rank.entry((a.clone(), b.clone())).or_insert(rank);
        }
        Ok(Self {
            token_to_id,
            id_to_token,
            merges,
            merge_rank,
            byte_to_unit,
            unit_to_byte,
        })
    }

    /// The 256 single-byte units, with ids equal to byte values, and no merges.
    pub fn byte_level() -> Self {
        let map = byte_to_unit_table()
            .iter()
            .enumerate()
            .map(|(b, u)| (u.to_string(), b as u32))
            .collect();
        Self::new(map, Vec::new()).expect("byte-level vocabulary is valid")
    }

    /// Load a GPT-2 style `vocab.json` (token → id object) and `merges.txt`
    /// (one `left right` pair per line in rank order, optional `#version`
    /// header on the first line).
    pub fn from_files(vocab: &Path, merges: &Path) -> Result<Self, TokenizerError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|source| TokenizerError::Io {
                path: p.to_path_buf(),
                source,
            })
        };
        let token_to_id: HashMap<String, u32> = serde_json::from_str(&read(vocab)?)
            .map_err(|e| TokenizerError::Vocab(format!("{}: {e}", vocab.display())))?;
        let merges = parse_merges(&read(merges)?)?;
        Self::new(token_to_id, merges)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(&id).map(String::as_str)
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// One past the largest id.
    pub fn id_bound(&self) -> u32 {
        self.id_to_token.keys().max().map_or(0, |m| m + 1)
    }

    pub fn unit_for_byte(&self, b: u8) -> char {
        self.byte_to_unit[b as usize]
    }

    pub fn byte_for_unit(&self, c: char) -> Option<u8> {
        self.unit_to_byte.get(&c).copied()
    }

    /// Merge a pre-token (already mapped to units) by repeatedly joining the
    /// adjacent pair with the lowest merge rank.
    fn bpe(&self, word: &str) -> Vec<String> {
        let mut parts: Vec<String> = word.chars().map(String::from).collect();
        loop {
            let best = parts
                .windows(2)
                .filter_map(|w| self.merge_rank.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (left, right) = &self.merges[rank];
            let mut merged = Vec::with_capacity(parts.len());
            let mut i = 0;
            while i < parts.len() {
                if i + 1 < parts.len() && &parts[i] == left && &parts[i + 1] == right {
                    merged.push(format!("{left}{right}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut parts[i]));
                    i += 1;
                }
            }
            parts = merged;
        }
        parts
    }
}

fn parse_merges(text: &str) -> Result<Vec<(String, String)>, TokenizerError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if (i == 0 && line.starts_with("#version")) || line.is_empty() {
            continue;
        }
        let mut it = line.split(' ');
        match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                out.push((a.to_string(), b.to_string()))
            }
            _ => {
                return Err(TokenizerError::Vocab(format!(
                    "merges line {}: expected two space-separated tokens, got {line:?}",
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

/// Segment boundary markers. They are never split and never produced by a
/// merge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    pub context_marker: String,
    pub answer_marker: String,
    pub question_marker: String,
    pub distractor_marker: String,
    pub end_marker: String,
}

impl Default for SpecialTokens {
    fn default() -> Self {
        Self {
            context_marker: "<|context|>".into(),
            answer_marker: "<|answer|>".into(),
            question_marker: "<|question|>".into(),
            distractor_marker: "<|distractor|>".into(),
            end_marker: "<|endoftext|>".into(),
        }
    }
}

impl SpecialTokens {
    fn all(&self) -> [&str; 5] {
        [
            &self.context_marker,
            &self.answer_marker,
            &self.question_marker,
            &self.distractor_marker,
            &self.end_marker,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Marker {
    Context,
    Answer,
    Question,
    Distractor,
    End,
}

impl Marker {
    const ALL: [Marker; 5] = [
        Marker::Context,
        Marker::Answer,
        Marker::Question,
        Marker::Distractor,
        Marker::End,
    ];
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl From<Vec<u32>> for TokenSequence {
    fn from(ids: Vec<u32>) -> Self {
        Self { ids }
    }
}

fn pretokenizer() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+")
            .expect("pre-tokenizer pattern")
    })
}

/// GPT-2 pre-tokenization. The reference pattern ends in `\s+(?!\S)|\s+`;
/// the lookahead is emulated by handing the last character of an inner
/// whitespace run back to the following chunk.
pub fn pretokenize(text: &str) -> Vec<&str> {
    let re = pretokenizer();
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < text.len() {
        let m = re.find_at(text, pos).expect("every character matches");
        debug_assert_eq!(m.start(), pos);
        let chunk = m.as_str();
        let all_space = chunk.chars().all(char::is_whitespace);
        if all_space && m.end() < text.len() && chunk.chars().nth(1).is_some() {
            let last = chunk.char_indices().last().map(|(i, _)| i).unwrap_or(0);
            out.push(&text[pos..pos + last]);
            pos += last;
        } else {
            out.push(chunk);
            pos = m.end();
        }
    }
    out
}

/// A loaded vocabulary with resolved marker ids.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab: BpeVocab,
    specials: SpecialTokens,
    marker_ids: [u32; 5],
    vocab_size: usize,
}

impl Tokenizer {
    /// Reserve ids for the markers. A marker already present in the
    /// vocabulary (GPT-2 ships `<|endoftext|>`) keeps its id; the others are
    /// appended after the largest id.
    pub fn new(vocab: BpeVocab, specials: SpecialTokens) -> Result<Self, TokenizerError> {
        let markers = specials.all();
        for (i, m) in markers.iter().enumerate() {
            if m.is_empty() {
                return Err(TokenizerError::Vocab("empty marker string".into()));
            }
            if markers[..i].contains(m) {
                return Err(TokenizerError::Vocab(format!("marker {m:?} used twice")));
            }
        }
        for (a, b) in vocab.merges() {
            let joined = format!("{a}{b}");
            if markers.contains(&joined.as_str()) {
                return Err(TokenizerError::Vocab(format!(
                    "merge ({a:?}, {b:?}) would produce marker {joined:?}"
                )));
            }
        }
        let mut next = vocab.id_bound();
        let mut marker_ids = [0u32; 5];
        for (slot, m) in marker_ids.iter_mut().zip(markers) {
            *slot = match vocab.id(m) {
                Some(id) => id,
                None => {
                    next += 1;
                    next - 1
                }
            };
        }
        Ok(Self {
            vocab,
            specials,
            marker_ids,
            vocab_size: next as usize,
        })
    }

    /// Byte-level vocabulary (no merges) with the default markers: 261 ids.
    pub fn byte_level() -> Self {
        Self::new(BpeVocab::byte_level(), SpecialTokens::default()).expect("default markers")
    }

    pub fn from_files(vocab: &Path, merges: &Path) -> Result<Self, TokenizerError> {
        Self::new(
            BpeVocab::from_files(vocab, merges)?,
            SpecialTokens::default(),
        )
    }

    pub fn vocab(&self) -> &BpeVocab {
        &self.vocab
    }

    pub fn specials(&self) -> &SpecialTokens {
        &self.specials
    }

    /// Number of logits a generator backend must produce.
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn marker_id(&self, marker: Marker) -> u32 {
        self.marker_ids[marker as usize]
    }

    pub fn marker_of(&self, id: u32) -> Option<Marker> {
        Marker::ALL
            .into_iter()
            .find(|&m| self.marker_ids[m as usize] == id)
    }

    pub fn is_marker(&self, id: u32) -> bool {
        self.marker_ids.contains(&id)
    }

    fn marker_str(&self, marker: Marker) -> &str {
        self.specials.all()[marker as usize]
    }

    /// Leftmost marker occurrence in `text` (longest marker wins a tie).
    fn next_marker(&self, text: &str) -> Option<(usize, Marker)> {
        Marker::ALL
            .into_iter()
            .filter_map(|m| {
                let s = self.marker_str(m);
                text.find(s).map(|pos| (pos, std::cmp::Reverse(s.len()), m))
            })
            .min_by_key(|&(pos, len, _)| (pos, len))
            .map(|(pos, _, m)| (pos, m))
    }

    fn encode_plain(&self, text: &str, out: &mut Vec<u32>) {
        for chunk in pretokenize(text) {
            let units: String = chunk.bytes().map(|b| self.vocab.unit_for_byte(b)).collect();
            for piece in self.vocab.bpe(&units) {
                let id = self
                    .vocab
                    .id(&piece)
                    .expect("merge results and byte units are in the vocabulary");
                out.push(id);
            }
        }
    }

    pub fn encode(&self, text: &str) -> TokenSequence {
        let mut ids = Vec::new();
        let mut rest = text;
        while let Some((pos, marker)) = self.next_marker(rest) {
            self.encode_plain(&rest[..pos], &mut ids);
            ids.push(self.marker_id(marker));
            rest = &rest[pos + self.marker_str(marker).len()..];
        }
        self.encode_plain(rest, &mut ids);
        ids.into()
    }

    /// Raw bytes for `ids`; markers render as their marker strings.
    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>, TokenizerError> {
        let mut bytes = Vec::new();
        for &id in ids {
            if let Some(m) = self.marker_of(id) {
                bytes.extend_from_slice(self.marker_str(m).as_bytes());
                continue;
            }
            let tok = self.vocab.token(id).ok_or(TokenizerError::UnknownId(id))?;
            for c in tok.chars() {
                // Tokens outside the byte alphabet cannot come out of encode;
                // keep their UTF-8 so nothing is silently dropped.
                match self.vocab.byte_for_unit(c) {
                    Some(b) => bytes.push(b),
                    None => bytes.extend_from_slice(c.encode_utf8(&mut [0; 4]).as_bytes()),
                }
            }
        }
        Ok(bytes)
    }

    /// Inverse of [`encode`](Self::encode). Byte sequences that are not valid
    /// UTF-8 (possible for arbitrary model output) are decoded lossily.
    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let bytes = self.decode_bytes(ids)?;
        Ok(match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
        })
    }

    fn check_segment(&self, field: &'static str, text: &str) -> Result<(), TokenizerError> {
        if text.trim().is_empty() {
            return Err(TokenizerError::EmptyField(field));
        }
        if let Some((_, m)) = self.next_marker(text) {
            return Err(TokenizerError::ReservedMarker {
                field,
                marker: self.marker_str(m).to_string(),
            });
        }
        Ok(())
    }

    /// `<C> context <A> answer <Q>`
    pub fn build_qg_prompt(
        &self,
        context: &str,
        answer: &str,
    ) -> Result<TokenSequence, TokenizerError> {
        self.check_segment("context", context)?;
        self.check_segment("answer", answer)?;
        let mut ids = vec![self.marker_id(Marker::Context)];
        self.encode_plain(context, &mut ids);
        ids.push(self.marker_id(Marker::Answer));
        self.encode_plain(answer, &mut ids);
        ids.push(self.marker_id(Marker::Question));
        Ok(ids.into())
    }

    /// `<C> context <Q> question <A> answer <D>`
    pub fn build_dg_prompt(
        &self,
        context: &str,
        question: &str,
        answer: &str,
    ) -> Result<TokenSequence, TokenizerError> {
        self.check_segment("context", context)?;
        self.check_segment("question", question)?;
        self.check_segment("answer", answer)?;
        let mut ids = vec![self.marker_id(Marker::Context)];
        self.encode_plain(context, &mut ids);
        ids.push(self.marker_id(Marker::Question));
        self.encode_plain(question, &mut ids);
        ids.push(self.marker_id(Marker::Answer));
        self.encode_plain(answer, &mut ids);
        ids.push(self.marker_id(Marker::Distractor));
        Ok(ids.into())
    }

    /// `<C> context <Q> question <A> option`, with context tokens dropped
    /// from the end when the sequence would exceed `max_len`.
    pub fn build_qa_input(
        &self,
        context: &str,
        question: &str,
        option: &str,
        max_len: Option<usize>,
    ) -> Result<TokenSequence, TokenizerError> {
        self.check_segment("context", context)?;
        self.check_segment("question", question)?;
        self.check_segment("option", option)?;
        let mut ctx = Vec::new();
        self.encode_plain(context, &mut ctx);
        let mut tail = vec![self.marker_id(Marker::Question)];
        self.encode_plain(question, &mut tail);
        tail.push(self.marker_id(Marker::Answer));
        self.encode_plain(option, &mut tail);

        if let Some(limit) = max_len {
            let fixed = 1 + tail.len();
            if fixed > limit {
                return Err(TokenizerError::Overlength {
                    needed: fixed,
                    limit,
                });
            }
            ctx.truncate(limit - fixed);
        }
        let mut ids = Vec::with_capacity(1 + ctx.len() + tail.len());
        ids.push(self.marker_id(Marker::Context));
        ids.extend(ctx);
        ids.extend(tail);
        Ok(ids.into())
    }
}
