//! Inference contracts and their implementations.
//!
//! A [`GeneratorBackend`] maps a token sequence to next-token logits; a
//! [`ScorerBackend`] maps a context/question/option encoding to one real
//! score. Three implementations exist for each: a hash-based mock, a scripted
//! replay used by tests, and an HTTP client for an external model server.
//!
//! Wire protocol of the HTTP backends:
//!
//! ```text
//! POST {endpoint}/v1/logits  {"ids":[int,...]}  ->  {"logits":[float,...]}
//! POST {endpoint}/v1/score   {"ids":[int,...]}  ->  {"score": float}
//! errors: non-2xx status with {"error": string}
//! ```

use std::path::PathBuf;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};

use crate::decoding::LogitVector;
use crate::hash::{fnv1a_ids, splitmix64};
use crate::tokenizer::{Marker, Tokenizer};

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("server returned status {status} after {attempts} attempt(s): {message}")]
    Status {
        status: u16,
        message: String,
        attempts: u32,
    },
    #[error("malformed response after {attempts} attempt(s): {message}")]
    Protocol { message: String, attempts: u32 },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("script exhausted after {consumed} entries")]
    ScriptExhausted { consumed: usize },
    #[error("no scripted score for option {0:?}")]
    UnscriptedOption(String),
    #[error("invalid backend input: {0}")]
    InvalidInput(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

/// Next-token logits for a token sequence.
pub trait GeneratorBackend: Send + Sync {
    fn vocab_size(&self) -> usize;
    fn next_logits(&self, ids: &[u32]) -> Result<LogitVector, BackendError>;
}

/// One real score for an encoded context/question/option sequence.
pub trait ScorerBackend: Send + Sync {
    fn score(&self, ids: &[u32]) -> Result<f64, BackendError>;
}

impl<T: GeneratorBackend + ?Sized> GeneratorBackend for Box<T> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn next_logits(&self, ids: &[u32]) -> Result<LogitVector, BackendError> {
        (**self).next_logits(ids)
    }
}

impl<T: ScorerBackend + ?Sized> ScorerBackend for Box<T> {
    fn score(&self, ids: &[u32]) -> Result<f64, BackendError> {
        (**self).score(ids)
    }
}

// --- mock -----------------------------------------------------------------

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// Deterministic pseudo-model.
///
/// For input `ids` the sequence hash is `h = splitmix64(fnv1a(ids) ^ seed)`,
/// where `fnv1a` runs over the ids as little-endian `u32` bytes. The logit of
/// token `t` is `k / 2^21 - 4` with `k = splitmix64(h ^ t * 0x9e3779b97f4a7c15) >> 40`,
/// i.e. a value in `[-4, 4)` that is exactly representable as `f32`.
/// Optional per-token biases are added afterwards.
#[derive(Debug, Clone)]
pub struct MockGenerator {
    vocab_size: usize,
    seed: u64,
    bias: Vec<(u32, f32)>,
}

impl MockGenerator {
    pub fn new(vocab_size: usize, seed: u64) -> Self {
        Self {
            vocab_size,
            seed,
            bias: Vec::new(),
        }
    }

    /// Add `delta` to the logit of `id` on every call.
    pub fn with_bias(mut self, id: u32, delta: f32) -> Self {
        self.bias.push((id, delta));
        self
    }

    /// Mock tuned to the tokenizer's markers: distractor and end markers are
    /// boosted so continuations stay short and contain several segments.
    pub fn for_tokenizer(tok: &Tokenizer, seed: u64) -> Self {
        Self::new(tok.vocab_size(), seed)
            .with_bias(tok.marker_id(Marker::Distractor), 3.5)
            .with_bias(tok.marker_id(Marker::End), 2.5)
    }
}

pub fn mock_next_logits(ids: &[u32], vocab_size: usize, seed: u64) -> Vec<f32> {
    let h = splitmix64(fnv1a_ids(ids) ^ seed);
    (0..vocab_size as u64)
        .map(|t| {
            let k = splitmix64(h ^ t.wrapping_mul(GOLDEN)) >> 40;
            (k as f64 / f64::from(1u32 << 21) - 4.0) as f32
        })
        .collect()
}

impl GeneratorBackend for MockGenerator {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_logits(&self, ids: &[u32]) -> Result<LogitVector, BackendError> {
        if ids.is_empty() {
            return Err(BackendError::InvalidInput("empty token sequence".into()));
        }
        let mut v = mock_next_logits(ids, self.vocab_size, self.seed);
        for &(id, delta) in &self.bias {
            if let Some(x) = v.get_mut(id as usize) {
                *x += delta;
            }
        }
        Ok(LogitVector(v))
    }
}

/// Deterministic scorer: `(splitmix64(fnv1a(ids) ^ seed) >> 11) / 2^53 * 8 - 4`.
#[derive(Debug, Clone, Copy)]
pub struct MockScorer {
    seed: u64,
}

impl MockScorer {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl ScorerBackend for MockScorer {
    fn score(&self, ids: &[u32]) -> Result<f64, BackendError> {
        if ids.is_empty() {
            return Err(BackendError::InvalidInput("empty token sequence".into()));
        }
        let k = splitmix64(fnv1a_ids(ids) ^ self.seed) >> 11;
        Ok(k as f64 / (1u64 << 53) as f64 * 8.0 - 4.0)
    }
}

// --- scripted ---------------------------------------------------------------

const SCRIPT_PEAK: f32 = 1000.0;

#[derive(Debug)]
struct Session {
    prompt_len: usize,
    last_input: Vec<u32>,
    entry: usize,
}

#[derive(Debug, Default)]
struct ReplayState {
    consumed: usize,
    session: Option<Session>,
}

/// Replays canned continuations, one per generation.
///
/// A call whose input is the previous input plus one token continues the
/// current generation; any other input starts a new one and takes the next
/// script entry. Within an entry the logits peak at the next scripted token,
/// and at the end marker once the entry is used up.
#[derive(Debug)]
pub struct ScriptedGenerator {
    entries: Vec<Vec<u32>>,
    end_id: u32,
    vocab_size: usize,
    state: Mutex<ReplayState>,
}

impl ScriptedGenerator {
    pub fn new(
        entries: Vec<Vec<u32>>,
        end_id: u32,
        vocab_size: usize,
    ) -> Result<Self, BackendError> {
        if entries.is_empty() {
            return Err(BackendError::Config("script must not be empty".into()));
        }
        if let Some(bad) = entries
            .iter()
            .flatten()
            .find(|&&id| id as usize >= vocab_size)
        {
            return Err(BackendError::Config(format!(
                "scripted id {bad} outside vocabulary"
            )));
        }
        Ok(Self {
            entries,
            end_id,
            vocab_size,
            state: Mutex::new(ReplayState::default()),
        })
    }

    /// Entries given as text; marker strings inside them become marker ids.
    pub fn from_texts<S: AsRef<str>>(tok: &Tokenizer, texts: &[S]) -> Result<Self, BackendError> {
        let entries = texts.iter().map(|t| tok.encode(t.as_ref()).ids).collect();
        Self::new(entries, tok.marker_id(Marker::End), tok.vocab_size())
    }

    /// Number of script entries consumed so far.
    pub fn consumed(&self) -> usize {
        self.state.lock().consumed
    }
}

impl GeneratorBackend for ScriptedGenerator {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_logits(&self, ids: &[u32]) -> Result<LogitVector, BackendError> {
        let mut st = self.state.lock();
        let continues = st
            .session
            .as_ref()
            .is_some_and(|s| ids.len() == s.last_input.len() + 1 && ids.starts_with(&s.last_input));
        if !continues {
            if st.consumed >= self.entries.len() {
                return Err(BackendError::ScriptExhausted {
                    consumed: st.consumed,
                });
            }
            let entry = st.consumed;
            st.consumed += 1;
            st.session = Some(Session {
                prompt_len: ids.len(),
                last_input: Vec::new(),
                entry,
            });
        }
        let session = st.session.as_mut().expect("session set above");
        session.last_input = ids.to_vec();
        let step = ids.len() - session.prompt_len;
        let target = self.entries[session.entry]
            .get(step)
            .copied()
            .unwrap_or(self.end_id);
        let mut v = vec![0.0f32; self.vocab_size];
        v[target as usize] = SCRIPT_PEAK;
        Ok(LogitVector(v))
    }
}

#[derive(Debug)]
enum ScoreScript {
    Sequence(Vec<f64>),
    ByOption {
        tokenizer: Box<Tokenizer>,
        table: Vec<(String, f64)>,
    },
}

/// Replays scores either in call order or looked up by option text.
#[derive(Debug)]
pub struct ScriptedScorer {
    script: ScoreScript,
    cursor: Mutex<usize>,
}

impl ScriptedScorer {
    /// One score per call, in order.
    pub fn sequence(scores: Vec<f64>) -> Result<Self, BackendError> {
        if scores.is_empty() {
            return Err(BackendError::Config("script must not be empty".into()));
        }
        Ok(Self {
            script: ScoreScript::Sequence(scores),
            cursor: Mutex::new(0),
        })
    }

    /// Score looked up by the option segment (the text after the last answer
    /// marker) of each scored sequence.
    pub fn by_option(
        tokenizer: &Tokenizer,
        table: Vec<(String, f64)>,
    ) -> Result<Self, BackendError> {
        if table.is_empty() {
            return Err(BackendError::Config("script must not be empty".into()));
        }
        Ok(Self {
            script: ScoreScript::ByOption {
                tokenizer: Box::new(tokenizer.clone()),
                table,
            },
            cursor: Mutex::new(0),
        })
    }
}

impl ScorerBackend for ScriptedScorer {
    fn score(&self, ids: &[u32]) -> Result<f64, BackendError> {
        match &self.script {
            ScoreScript::Sequence(scores) => {
                let mut cur = self.cursor.lock();
                let s = *scores
                    .get(*cur)
                    .ok_or(BackendError::ScriptExhausted { consumed: *cur })?;
                *cur += 1;
                Ok(s)
            }
            ScoreScript::ByOption { tokenizer, table } => {
                let answer = tokenizer.marker_id(Marker::Answer);
                let start = ids.iter().rposition(|&i| i == answer).map_or(0, |p| p + 1);
                let option = tokenizer
                    .decode(&ids[start..])
                    .map_err(|e| BackendError::InvalidInput(e.to_string()))?;
                table
                    .iter()
                    .find(|(o, _)| *o == option)
                    .map(|&(_, s)| s)
                    .ok_or(BackendError::UnscriptedOption(option))
            }
        }
    }
}

// --- HTTP -------------------------------------------------------------------

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut free = self.free.lock();
        while *free == 0 {
            self.cv.wait(&mut free);
        }
        *free -= 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock() += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Serialize)]
struct IdsRequest<'a> {
    ids: &'a [u32],
}

#[derive(Deserialize)]
struct LogitsResponse {
    logits: Vec<f32>,
}

#[derive(Deserialize)]
struct ScoreResponse {
    score: f64,
}

#[derive(Deserialize)]
struct ErrorResponse {
    error: String,
}

enum Attempt {
    Done(String),
    Retry(BackendError),
}

/// Blocking JSON client with per-attempt timeouts, exponential backoff and a
/// bounded number of in-flight requests. The whole call, backoff included,
/// never exceeds `timeout * (retries + 1)`.
#[derive(Debug)]
pub struct HttpClient {
    endpoint: String,
    timeout: Duration,
    retries: u32,
    backoff: Duration,
    agent: ureq::Agent,
    limiter: Limiter,
}

impl HttpClient {
    pub fn new(
        endpoint: &str,
        timeout: Duration,
        retries: u32,
        max_in_flight: usize,
    ) -> Result<Self, BackendError> {
        if timeout.is_zero() {
            return Err(BackendError::Config("timeout must be positive".into()));
        }
        if !(endpoint.starts_with("http://") || endpoint.starts_with("https://")) {
            return Err(BackendError::Config(format!(
                "endpoint {endpoint:?} is not an http(s) URL"
            )));
        }
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            timeout,
            retries,
            backoff: Duration::from_millis(25),
            agent,
            limiter: Limiter::new(max_in_flight),
        })
    }

    /// Base delay before the first retry; doubled for each later retry.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn attempt(&self, url: &str, body: &[u8], timeout: Duration, n: u32) -> Attempt {
        let result = self
            .agent
            .post(url)
            .config()
            .timeout_global(Some(timeout))
            .build()
            .header("content-type", "application/json")
            .send(body);
        let mut resp = match result {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => {
                return Attempt::Retry(BackendError::Timeout { attempts: n })
            }
            Err(e) => {
                return Attempt::Retry(BackendError::Transport {
                    message: e.to_string(),
                    attempts: n,
                })
            }
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(ureq::Error::Timeout(_)) => {
                return Attempt::Retry(BackendError::Timeout { attempts: n })
            }
            Err(e) => {
                return Attempt::Retry(BackendError::Transport {
                    message: e.to_string(),
                    attempts: n,
                })
            }
        };
        if (200..300).contains(&status) {
            Attempt::Done(text)
        } else {
            let message = serde_json::from_str::<ErrorResponse>(&text)
                .map(|e| e.error)
                .unwrap_or(text);
            Attempt::Retry(BackendError::Status {
                status,
                message,
                attempts: n,
            })
        }
    }

    /// POST `ids` to `path` and return the 2xx body and the attempt count.
    fn post_ids(&self, path: &str, ids: &[u32]) -> Result<(String, u32), BackendError> {
        let body = serde_json::to_vec(&IdsRequest { ids }).expect("ids serialize");
        let url = format!("{}{}", self.endpoint, path);
        let _slot = self.limiter.acquire();
        let deadline = Instant::now() + self.timeout * (self.retries + 1);
        let mut last = BackendError::Timeout { attempts: 0 };
        for n in 1..=self.retries + 1 {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                break;
            }
            match self.attempt(&url, &body, self.timeout.min(remaining), n) {
                Attempt::Done(text) => return Ok((text, n)),
                Attempt::Retry(err) => {
                    tracing::debug!(%url, attempt = n, error = %err, "backend request failed");
                    last = err;
                }
            }
            if n <= self.retries {
                let delay = self.backoff.saturating_mul(1 << (n - 1).min(16));
                let remaining = deadline.saturating_duration_since(Instant::now());
                std::thread::sleep(delay.min(remaining));
            }
        }
        Err(last)
    }

    pub fn next_logits(&self, ids: &[u32]) -> Result<Vec<f32>, BackendError> {
        let (text, attempts) = self.post_ids("/v1/logits", ids)?;
        serde_json::from_str::<LogitsResponse>(&text)
            .map(|r| r.logits)
            .map_err(|e| BackendError::Protocol {
                message: e.to_string(),
                attempts,
            })
    }

    pub fn score(&self, ids: &[u32]) -> Result<f64, BackendError> {
        let (text, attempts) = self.post_ids("/v1/score", ids)?;
        serde_json::from_str::<ScoreResponse>(&text)
            .map(|r| r.score)
            .map_err(|e| BackendError::Protocol {
                message: e.to_string(),
                attempts,
            })
    }
}

#[derive(Debug)]
pub struct HttpGenerator {
    client: HttpClient,
    vocab_size: usize,
}

impl HttpGenerator {
    pub fn new(client: HttpClient, vocab_size: usize) -> Self {
        Self { client, vocab_size }
    }
}

impl GeneratorBackend for HttpGenerator {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_logits(&self, ids: &[u32]) -> Result<LogitVector, BackendError> {
        let logits = self.client.next_logits(ids)?;
        if logits.len() != self.vocab_size {
            return Err(BackendError::Protocol {
                message: format!("expected {} logits, got {}", self.vocab_size, logits.len()),
                attempts: 1,
            });
        }
        Ok(LogitVector(logits))
    }
}

#[derive(Debug)]
pub struct HttpScorer {
    client: HttpClient,
}

impl HttpScorer {
    pub fn new(client: HttpClient) -> Self {
        Self { client }
    }
}

impl ScorerBackend for HttpScorer {
    fn score(&self, ids: &[u32]) -> Result<f64, BackendError> {
        self.client.score(ids)
    }
}

// --- configuration ------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Scripted,
    Http,
}

/// Script file for scripted backends: exactly one of the three fields.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptFile {
    #[serde(default)]
    pub continuations: Vec<String>,
    #[serde(default)]
    pub scores: Vec<f64>,
    #[serde(default)]
    pub option_scores: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    pub retries: u32,
    pub max_in_flight: usize,
    /// Seed of the mock backend.
    pub seed: u64,
    /// Script file of the scripted backend.
    pub script: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: None,
            timeout_ms: 30_000,
            retries: 2,
            max_in_flight: 4,
            seed: 0,
            script: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.timeout_ms == 0 {
            return Err(BackendError::Config("timeout_ms must be positive".into()));
        }
        match self.kind {
            BackendKind::Http if self.endpoint.is_none() => Err(BackendError::Config(
                "http backend requires an endpoint".into(),
            )),
            BackendKind::Scripted if self.script.is_none() => Err(BackendError::Config(
                "scripted backend requires a script file".into(),
            )),
            _ => Ok(()),
        }
    }

    fn client(&self) -> Result<HttpClient, BackendError> {
        let endpoint = self.endpoint.as_deref().unwrap_or_default();
        HttpClient::new(
            endpoint,
            Duration::from_millis(self.timeout_ms),
            self.retries,
            self.max_in_flight,
        )
    }

    fn script_file(&self) -> Result<ScriptFile, BackendError> {
        let path = self.script.as_ref().expect("validated");
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))
    }

    pub fn build_generator(
        &self,
        tok: &Tokenizer,
    ) -> Result<Box<dyn GeneratorBackend>, BackendError> {
        self.validate()?;
        Ok(match self.kind {
            BackendKind::Mock => Box::new(MockGenerator::for_tokenizer(tok, self.seed)),
            BackendKind::Scripted => Box::new(ScriptedGenerator::from_texts(
                tok,
                &self.script_file()?.continuations,
            )?),
            BackendKind::Http => Box::new(HttpGenerator::new(self.client()?, tok.vocab_size())),
        })
    }

    pub fn build_scorer(&self, tok: &Tokenizer) -> Result<Box<dyn ScorerBackend>, BackendError> {
        self.validate()?;
        Ok(match self.kind {
            BackendKind::Mock => Box::new(MockScorer::new(self.seed)),
            BackendKind::Scripted => {
                let script = self.script_file()?;
                if script.option_scores.is_empty() {
                    Box::new(ScriptedScorer::sequence(script.scores)?)
                } else {
                    Box::new(ScriptedScorer::by_option(tok, script.option_scores)?)
                }
            }
            BackendKind::Http => Box::new(HttpScorer::new(self.client()?)),
        })
    }
}
