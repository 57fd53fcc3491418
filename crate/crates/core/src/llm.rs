//! Chat-completion backends: a live HTTP client, ground-truth oracles for
//! end-to-end testing, and position-keyed replay of recorded transcripts.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::LabelVocabulary;
use crate::prompt::{estimate_messages, Message, DEFAULT_TOKEN_LIMIT};

pub const API_KEY_ENV: &str = "TABLESAGE_API_KEY";
pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo-0301";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const IDK_REPLY: &str = "I don't know";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("request {request_id} needs ~{estimate} tokens, limit is {limit}")]
    TokenBudget {
        request_id: String,
        estimate: usize,
        limit: usize,
    },
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("replay: {0}")]
    Replay(String),
    #[error("request {0} carries no oracle answer")]
    NoHint(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("transcript {path}: {message}")]
    Transcript { path: PathBuf, message: String },
}

pub type Result<T, E = LlmError> = std::result::Result<T, E>;

/// Ground truth the pipeline attaches to a request so oracles never have to
/// read prompts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleHint {
    pub gold: Vec<String>,
    /// True when the reply is a comma-separated list, one entry per column.
    pub per_column: bool,
    /// Labels offered in the prompt.
    pub label_space: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_name: String,
    pub temperature: f64,
    pub messages: Vec<Message>,
    pub request_id: String,
    #[serde(skip)]
    pub hint: Option<OracleHint>,
}

impl ChatRequest {
    pub fn token_estimate(&self) -> usize {
        estimate_messages(&self.messages)
    }
}

/// Hex SHA-256 over the role/content sequence.
pub fn messages_hash(messages: &[Message]) -> String {
    let mut h = Sha256::new();
    for m in messages {
        h.update(serde_json::to_string(&m.role).unwrap().as_bytes());
        h.update([0u8]);
        h.update(m.content.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

fn whitespace_insensitive(messages: &[Message]) -> Vec<Message> {
    messages
        .iter()
        .map(|m| Message {
            role: m.role,
            content: m.content.split_whitespace().collect::<Vec<_>>().join(" "),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Oracle,
    SynonymOracle,
    NoisyOracle,
    Scripted,
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "http" => BackendKind::Http,
            "oracle" => BackendKind::Oracle,
            "synonym" | "synonym_oracle" => BackendKind::SynonymOracle,
            "noisy" | "noisy_oracle" => BackendKind::NoisyOracle,
            "scripted" => BackendKind::Scripted,
            other => {
                return Err(format!(
                    "unknown backend {other:?} (http|oracle|synonym|noisy|scripted)"
                ))
            }
        })
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Http => "http",
            BackendKind::Oracle => "oracle",
            BackendKind::SynonymOracle => "synonym",
            BackendKind::NoisyOracle => "noisy",
            BackendKind::Scripted => "scripted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub corruption_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub transcript: Option<PathBuf>,
    #[serde(default)]
    pub strict_replay: bool,
    pub token_limit: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl BackendConfig {
    pub fn new(kind: BackendKind) -> Self {
        BackendConfig {
            kind,
            endpoint: None,
            corruption_rate: 0.0,
            seed: 0,
            transcript: None,
            strict_replay: true,
            token_limit: DEFAULT_TOKEN_LIMIT,
            retry: RetryPolicy::default(),
        }
    }

    pub fn noisy(rate: f64, seed: u64) -> Self {
        BackendConfig {
            corruption_rate: rate,
            seed,
            ..Self::new(BackendKind::NoisyOracle)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.corruption_rate) {
            return Err(LlmError::Config(format!(
                "corruption rate {} outside [0, 1]",
                self.corruption_rate
            )));
        }
        if self.token_limit == 0 {
            return Err(LlmError::Config("token limit must be positive".into()));
        }
        if self.kind == BackendKind::Scripted && self.transcript.is_none() {
            return Err(LlmError::Config(
                "scripted backend needs a transcript".into(),
            ));
        }
        Ok(())
    }
}

/// Exponential backoff for transient HTTP failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_delay_ms: u64,
    pub factor: f64,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            initial_delay_ms: 1000,
            factor: 2.0,
            jitter: true,
        }
    }
}

/// Classified failure of one attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttemptError {
    Transient(String),
    Fatal(String),
}

impl AttemptError {
    /// 429 and 5xx are worth retrying; every other 4xx is not.
    pub fn from_status(status: u16, body: &str) -> Self {
        let msg = format!("HTTP {status}: {body}");
        if status == 429 || status >= 500 {
            AttemptError::Transient(msg)
        } else {
            AttemptError::Fatal(msg)
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based), jitter excluded.
    pub fn base_delay(&self, attempt: u32) -> Duration {
        let ms = self.initial_delay_ms as f64 * self.factor.powi(attempt as i32 - 1);
        Duration::from_millis(ms as u64)
    }

    /// Runs `op` until it succeeds, fails fatally, or attempts run out.
    pub fn run<T>(
        &self,
        mut op: impl FnMut(u32) -> Result<T, AttemptError>,
        mut sleep: impl FnMut(Duration),
    ) -> Result<T> {
        let max = self.max_attempts.max(1);
        let mut rng = rand::rng();
        let mut attempt = 1;
        loop {
            match op(attempt) {
                Ok(v) => return Ok(v),
                Err(AttemptError::Fatal(message)) => {
                    return Err(LlmError::Transport {
                        attempts: attempt,
                        message,
                    })
                }
                Err(AttemptError::Transient(message)) if attempt >= max => {
                    return Err(LlmError::Transport {
                        attempts: attempt,
                        message,
                    })
                }
                Err(AttemptError::Transient(message)) => {
                    let mut delay = self.base_delay(attempt);
                    if self.jitter {
                        delay = delay.mul_f64(rng.random_range(0.5..1.0));
                    }
                    log::warn!("attempt {attempt} failed ({message}); retrying in {delay:?}");
                    sleep(delay);
                    attempt += 1;
                }
            }
        }
    }
}

/// Anything that can answer a chat request.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String>;

    /// Replay sources serve responses by position and cannot be called
    /// concurrently.
    fn sequential_only(&self) -> bool {
        false
    }
}

pub struct HttpBackend {
    endpoint: String,
    api_key: String,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(
        endpoint: impl Into<String>,
        api_key: impl Into<String>,
        retry: RetryPolicy,
    ) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        HttpBackend {
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            retry,
            agent,
        }
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<String, AttemptError> {
        let resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .header("Content-Type", "application/json")
            .send(serde_json::to_vec(body).expect("json body"));
        let mut resp = match resp {
            Ok(r) => r,
            Err(ureq::Error::Timeout(t)) => {
                return Err(AttemptError::Transient(format!("timeout: {t}")))
            }
            Err(
                e
                @ (ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound),
            ) => return Err(AttemptError::Transient(e.to_string())),
            Err(e) => return Err(AttemptError::Fatal(e.to_string())),
        };
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| AttemptError::Transient(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(AttemptError::from_status(status, &text));
        }
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| AttemptError::Fatal(format!("bad JSON: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| AttemptError::Fatal("response has no choices[0].message.content".into()))
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let body = serde_json::json!({
            "model": request.model_name,
            "temperature": request.temperature,
            "messages": request.messages,
        });
        self.retry.run(|_| self.attempt(&body), std::thread::sleep)
    }
}

/// Oracles answer from the request's [`OracleHint`].
#[derive(Debug, Clone)]
pub enum OracleBackend {
    /// Answers the gold label, or "I don't know" when the gold label was not
    /// offered in the prompt.
    Exact,
    /// Answers a configured synonym of the gold label when one exists.
    Synonym(LabelVocabulary),
    /// Corrupts each answer with probability `rate` into a wrong offered
    /// label or "I don't know".
    Noisy { rate: f64, seed: u64 },
}

fn stable_u64(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

impl OracleBackend {
    fn exact(gold: &str, hint: &OracleHint) -> String {
        if hint.label_space.iter().any(|l| l == gold) {
            gold.to_string()
        } else {
            IDK_REPLY.to_string()
        }
    }

    fn answer_one(&self, gold: &str, hint: &OracleHint, rng: &mut ChaCha8Rng) -> String {
        let exact = Self::exact(gold, hint);
        match self {
            OracleBackend::Exact => exact,
            OracleBackend::Synonym(vocab) => {
                if exact == gold {
                    vocab
                        .synonyms_of(gold)
                        .next()
                        .map(str::to_string)
                        .unwrap_or(exact)
                } else {
                    exact
                }
            }
            OracleBackend::Noisy { rate, .. } => {
                if rng.random::<f64>() >= *rate {
                    return exact;
                }
                let wrong: Vec<&String> = hint.label_space.iter().filter(|l| *l != gold).collect();
                if wrong.is_empty() || rng.random_range(0..4) == 0 {
                    IDK_REPLY.to_string()
                } else {
                    wrong[rng.random_range(0..wrong.len())].clone()
                }
            }
        }
    }
}

impl ChatBackend for OracleBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let hint = request
            .hint
            .as_ref()
            .ok_or_else(|| LlmError::NoHint(request.request_id.clone()))?;
        let seed = match self {
            OracleBackend::Noisy { seed, .. } => *seed,
            _ => 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_u64(&request.request_id));
        let answers: Vec<String> = hint
            .gold
            .iter()
            .map(|g| self.answer_one(g, hint, &mut rng))
            .collect();
        Ok(if hint.per_column {
            answers.join(", ")
        } else {
            answers
                .into_iter()
                .next()
                .unwrap_or_else(|| IDK_REPLY.to_string())
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub request_id: String,
    pub messages: Vec<Message>,
    pub response: String,
    pub timestamp: String,
    pub token_estimate: usize,
    pub messages_hash: String,
}

impl TranscriptRecord {
    pub fn new(request: &ChatRequest, response: &str, timestamp: String) -> Self {
        TranscriptRecord {
            request_id: request.request_id.clone(),
            messages: request.messages.clone(),
            response: response.to_string(),
            timestamp,
            token_estimate: request.token_estimate(),
            messages_hash: messages_hash(&request.messages),
        }
    }
}

/// Append-only log of requests and responses, unique by request id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    records: Vec<TranscriptRecord>,
    ids: HashSet<String>,
}

pub fn now_timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[TranscriptRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, record: TranscriptRecord) -> Result<()> {
        if !self.ids.insert(record.request_id.clone()) {
            return Err(LlmError::Replay(format!(
                "duplicate request id {}",
                record.request_id
            )));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn record(&mut self, request: &ChatRequest, response: &str) -> Result<()> {
        self.push(TranscriptRecord::new(request, response, now_timestamp()))
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let err = |e: &dyn fmt::Display| LlmError::Transcript {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let mut file = fs::File::create(path).map_err(|e| err(&e))?;
        for r in &self.records {
            let line = serde_json::to_string(r).map_err(|e| err(&e))?;
            writeln!(file, "{line}").map_err(|e| err(&e))?;
        }
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let err = |e: &dyn fmt::Display| LlmError::Transcript {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let file = fs::File::open(path).map_err(|e| err(&e))?;
        let mut t = Transcript::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| err(&e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TranscriptRecord =
                serde_json::from_str(&line).map_err(|e| err(&format!("line {}: {e}", i + 1)))?;
            t.push(rec).map_err(|e| err(&e))?;
        }
        Ok(t)
    }
}

/// Serves recorded responses in order, checking each request against the
/// recorded message hash.
pub struct ScriptedBackend {
    records: Vec<TranscriptRecord>,
    cursor: Mutex<usize>,
    strict: bool,
}

impl ScriptedBackend {
    pub fn new(transcript: Transcript, strict: bool) -> Self {
        ScriptedBackend {
            records: transcript.records,
            cursor: Mutex::new(0),
            strict,
        }
    }

    pub fn remaining(&self) -> usize {
        self.records.len() - *self.cursor.lock().unwrap()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let mut cursor = self.cursor.lock().unwrap();
        let pos = *cursor;
        let Some(rec) = self.records.get(pos) else {
            return Err(LlmError::Replay(format!(
                "transcript exhausted after {} responses (request {})",
                self.records.len(),
                request.request_id
            )));
        };
        if messages_hash(&request.messages) != rec.messages_hash {
            let near = messages_hash(&whitespace_insensitive(&request.messages))
                == messages_hash(&whitespace_insensitive(&rec.messages));
            if self.strict {
                return Err(LlmError::Replay(format!(
                    "request {} (position {pos}) diverges from recorded {}{}",
                    request.request_id,
                    rec.request_id,
                    if near { " (whitespace only)" } else { "" }
                )));
            }
            log::warn!(
                "request {} differs from recorded {}{}; serving recorded response",
                request.request_id,
                rec.request_id,
                if near { " in whitespace only" } else { "" }
            );
        }
        *cursor += 1;
        Ok(rec.response.clone())
    }

    fn sequential_only(&self) -> bool {
        true
    }
}

/// Backend built from a [`BackendConfig`], with the token gate in front.
pub struct Backend {
    inner: Box<dyn ChatBackend>,
    token_limit: usize,
}

impl Backend {
    pub fn new(inner: Box<dyn ChatBackend>, token_limit: usize) -> Self {
        Backend { inner, token_limit }
    }

    pub fn from_config(config: &BackendConfig, vocab: &LabelVocabulary) -> Result<Self> {
        config.validate()?;
        let inner: Box<dyn ChatBackend> = match config.kind {
            BackendKind::Oracle => Box::new(OracleBackend::Exact),
            BackendKind::SynonymOracle => Box::new(OracleBackend::Synonym(vocab.clone())),
            BackendKind::NoisyOracle => Box::new(OracleBackend::Noisy {
                rate: config.corruption_rate,
                seed: config.seed,
            }),
            BackendKind::Scripted => {
                let path = config.transcript.as_ref().expect("validated");
                Box::new(ScriptedBackend::new(
                    Transcript::read_jsonl(path)?,
                    config.strict_replay,
                ))
            }
            BackendKind::Http => {
                let key = std::env::var(API_KEY_ENV).map_err(|_| {
                    LlmError::Config(format!("set {API_KEY_ENV} to use the http backend"))
                })?;
                Box::new(HttpBackend::new(
                    config.endpoint.as_deref().unwrap_or(DEFAULT_ENDPOINT),
                    key,
                    config.retry.clone(),
                ))
            }
        };
        Ok(Backend::new(inner, config.token_limit))
    }

    pub fn token_limit(&self) -> usize {
        self.token_limit
    }
}

impl ChatBackend for Backend {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let estimate = request.token_estimate();
        if estimate > self.token_limit {
            return Err(LlmError::TokenBudget {
                request_id: request.request_id.clone(),
                estimate,
                limit: self.token_limit,
            });
        }
        self.inner.complete(request)
    }

    fn sequential_only(&self) -> bool {
        self.inner.sequential_only()
    }
}

/// Scripted backend config reading `path`.
pub fn replay_source(path: impl Into<PathBuf>, strict: bool) -> BackendConfig {
    BackendConfig {
        transcript: Some(path.into()),
        strict_replay: strict,
        ..BackendConfig::new(BackendKind::Scripted)
    }
}
