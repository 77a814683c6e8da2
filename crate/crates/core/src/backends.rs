//! Generation and translation contracts, the HTTP client, and deterministic mocks.
//!
//! Wire format (JSON over HTTP POST):
//!
//! ```text
//! /v1/generate   {"prompt": str, "max_tokens": int, "temperature": 0, "stop": [str]} -> {"text": str}
//! /v1/translate  {"text": str, "source": str, "target": str}                          -> {"text": str}
//! ```

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LanguageCode;
use crate::promptkit::{ANSWER_CUE, PASSAGE_LABEL, QUESTION_CUE};
use crate::util::fnv1a;

pub const BACKEND_URL_ENV: &str = "QAM_BACKEND_URL";
pub const BACKEND_TOKEN_ENV: &str = "QAM_BACKEND_TOKEN";
pub const DEFAULT_PARALLELISM: usize = 4;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed payload: {0}")]
    Payload(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("empty input")]
    EmptyInput,
    #[error("backend returned empty output")]
    EmptyOutput,
}

impl BackendError {
    /// Transport faults and 5xx responses are worth another attempt.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoding {
    #[default]
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_tokens: usize,
    pub decoding: Decoding,
    pub stop_sequences: Vec<String>,
}

impl GenerationRequest {
    pub fn greedy(prompt: impl Into<String>, max_tokens: usize, stop_sequences: &[&str]) -> Self {
        GenerationRequest {
            prompt: prompt.into(),
            max_tokens,
            decoding: Decoding::Greedy,
            stop_sequences: stop_sequences.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationResponse {
    pub text: String,
    pub backend_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranslationRequest {
    pub text: String,
    pub source: LanguageCode,
    pub target: LanguageCode,
}

impl TranslationRequest {
    pub fn new(text: impl Into<String>, source: &LanguageCode, target: &LanguageCode) -> Self {
        TranslationRequest {
            text: text.into(),
            source: source.clone(),
            target: target.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.source == self.target {
            return Err(BackendError::InvalidRequest(format!(
                "source and target are both {}",
                self.source
            )));
        }
        if self.text.is_empty() {
            return Err(BackendError::EmptyInput);
        }
        Ok(())
    }
}

/// A text-generation service. Responses carry only the continuation,
/// truncated at the first stop sequence.
pub trait TextGenerator: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError>;
}

pub trait Translator: Send + Sync {
    fn translate(&self, request: &TranslationRequest) -> Result<String, BackendError>;
}

impl<T: TextGenerator + ?Sized> TextGenerator for &T {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        (**self).generate(request)
    }
}

impl<T: Translator + ?Sized> Translator for &T {
    fn translate(&self, request: &TranslationRequest) -> Result<String, BackendError> {
        (**self).translate(request)
    }
}

impl<T: TextGenerator + ?Sized> TextGenerator for Box<T> {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        (**self).generate(request)
    }
}

impl<T: Translator + ?Sized> Translator for Box<T> {
    fn translate(&self, request: &TranslationRequest) -> Result<String, BackendError> {
        (**self).translate(request)
    }
}

/// Cuts `text` at the earliest occurrence of any stop sequence.
pub fn truncate_at_stop<'a>(text: &'a str, stops: &[String]) -> &'a str {
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    &text[..cut]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    /// Runs `op` until it succeeds, fails with a non-retryable error, or
    /// the attempt budget is spent. Delay doubles after each failure.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, BackendError>) -> Result<T, BackendError> {
        let mut delay = self.base_delay;
        let mut attempt = 1;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < self.attempts.max(1) => {
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[derive(Serialize)]
struct GenerateBody<'a> {
    prompt: &'a str,
    max_tokens: usize,
    temperature: u8,
    stop: &'a [String],
}

#[derive(Serialize)]
struct TranslateBody<'a> {
    text: &'a str,
    source: &'a str,
    target: &'a str,
}

#[derive(Deserialize)]
struct TextReply {
    text: String,
}

/// JSON body sent to `/v1/generate`, keys in documented order.
pub fn generate_wire_body(request: &GenerationRequest) -> String {
    serde_json::to_string(&GenerateBody {
        prompt: &request.prompt,
        max_tokens: request.max_tokens,
        temperature: 0,
        stop: &request.stop_sequences,
    })
    .expect("request body serializes")
}

/// JSON body sent to `/v1/translate`, keys in documented order.
pub fn translate_wire_body(request: &TranslationRequest) -> String {
    serde_json::to_string(&TranslateBody {
        text: &request.text,
        source: request.source.as_str(),
        target: request.target.as_str(),
    })
    .expect("request body serializes")
}

/// Blocking HTTP client for both endpoints.
pub struct HttpBackend {
    base_url: String,
    bearer_token: Option<String>,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            bearer_token: None,
            retry: RetryPolicy::default(),
            agent,
        }
    }

    /// Resolves the base URL from `url` or, failing that, `QAM_BACKEND_URL`.
    pub fn from_env(url: Option<&str>, timeout: Duration) -> Result<Self, BackendError> {
        let url = match url {
            Some(u) => u.to_string(),
            None => std::env::var(BACKEND_URL_ENV).map_err(|_| {
                BackendError::InvalidRequest(format!("no backend url configured and {BACKEND_URL_ENV} unset"))
            })?,
        };
        let mut backend = HttpBackend::new(url, timeout);
        backend.bearer_token = std::env::var(BACKEND_TOKEN_ENV).ok();
        Ok(backend)
    }

    pub fn with_bearer_token(mut self, token: impl Into<String>) -> Self {
        self.bearer_token = Some(token.into());
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn post(&self, path: &str, body: &str) -> Result<String, BackendError> {
        let url = format!("{}{}", self.base_url, path);
        self.retry.run(|| {
            let mut req = self.agent.post(&url).header("Content-Type", "application/json");
            if let Some(token) = &self.bearer_token {
                req = req.header("Authorization", &format!("Bearer {token}"));
            }
            let mut resp = req
                .send(body.as_bytes())
                .map_err(|e| BackendError::Transport(e.to_string()))?;
            let status = resp.status().as_u16();
            let text = resp
                .body_mut()
                .read_to_string()
                .map_err(|e| BackendError::Transport(e.to_string()))?;
            if !(200..300).contains(&status) {
                return Err(BackendError::Status { status, body: text });
            }
            let reply: TextReply = serde_json::from_str(&text).map_err(|e| BackendError::Payload(e.to_string()))?;
            Ok(reply.text)
        })
    }
}

impl TextGenerator for HttpBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        request.validate()?;
        let text = self.post("/v1/generate", &generate_wire_body(request))?;
        Ok(GenerationResponse {
            text: truncate_at_stop(&text, &request.stop_sequences).to_string(),
            backend_id: format!("http:{}", self.base_url),
        })
    }
}

impl Translator for HttpBackend {
    fn translate(&self, request: &TranslationRequest) -> Result<String, BackendError> {
        request.validate()?;
        let text = self.post("/v1/translate", &translate_wire_body(request))?;
        if text.is_empty() {
            return Err(BackendError::EmptyOutput);
        }
        Ok(text)
    }
}

/// Deterministic translator that prefixes the target language tag:
/// `("hello", en, fi)` becomes `"[fi] hello"`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TaggingTranslator;

impl Translator for TaggingTranslator {
    fn translate(&self, request: &TranslationRequest) -> Result<String, BackendError> {
        request.validate()?;
        Ok(format!("[{}] {}", request.target, request.text))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Answer,
    Question,
}

fn strip_edges(token: &str) -> &str {
    token.trim_matches(|c: char| !c.is_alphanumeric())
}

fn first_digit_run(text: &str) -> Option<&str> {
    let start = text.find(|c: char| c.is_ascii_digit())?;
    let rest = &text[start..];
    let len = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
    Some(&rest[..len])
}

fn first_capitalized(text: &str) -> Option<&str> {
    text.split_whitespace()
        .map(strip_edges)
        .find(|t| t.chars().next().is_some_and(char::is_uppercase))
}

fn first_token(text: &str) -> &str {
    text.split_whitespace()
        .map(strip_edges)
        .find(|t| !t.is_empty())
        .unwrap_or("")
}

/// The passage span the mock keys on for each stage.
///
/// Answers take the first maximal digit run, else the first capitalized
/// token. Questions ask about the first capitalized token, so passages with
/// a number yield a non-trivial pair and passages without one yield a
/// question that contains its own answer.
fn mock_span(passage_text: &str, stage: Stage) -> &str {
    let span = match stage {
        Stage::Answer => first_digit_run(passage_text).or_else(|| first_capitalized(passage_text)),
        Stage::Question => first_capitalized(passage_text),
    };
    span.unwrap_or_else(|| first_token(passage_text))
}

fn corrupt(span: &str, passage_text: &str, rng: &mut ChaCha8Rng) -> String {
    let mut out = format!("{span}#{:04x}", rng.random::<u16>());
    while passage_text.contains(out.as_str()) {
        out.push('#');
    }
    out
}

/// A seeded stand-in for a prompted language model.
///
/// With probability `noise_rate` the extracted span is replaced by a string
/// that does not occur in the passage.
pub fn mock_qa_generate(passage_text: &str, stage: Stage, noise_rate: f64, seed: u64) -> String {
    let stage_tag = match stage {
        Stage::Answer => 0x9e37_79b9_7f4a_7c15,
        Stage::Question => 0xc2b2_ae3d_27d4_eb4f,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(passage_text.as_bytes()) ^ stage_tag);
    let noisy = rng.random_bool(noise_rate.clamp(0.0, 1.0));
    let mut span = mock_span(passage_text, stage).to_string();
    if noisy {
        span = corrupt(&span, passage_text, &mut rng);
    }
    match stage {
        Stage::Answer => span,
        Stage::Question => format!("What is mentioned about {span}?"),
    }
}

/// Mock generator that understands the answer/question prompt layout.
///
/// It reads the target passage from the last `Passage:` line of the prompt,
/// picks the stage from the trailing cue, and continues with the next block
/// the way a real model would, so stop sequences are exercised.
#[derive(Debug, Clone, Copy)]
pub struct MockQaBackend {
    pub noise_rate: f64,
    pub seed: u64,
}

impl MockQaBackend {
    pub fn new(noise_rate: f64, seed: u64) -> Self {
        MockQaBackend { noise_rate, seed }
    }
}

impl TextGenerator for MockQaBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        request.validate()?;
        let prompt = request.prompt.trim_end();
        let stage = if prompt.ends_with(QUESTION_CUE) {
            Stage::Question
        } else if prompt.ends_with(ANSWER_CUE) {
            Stage::Answer
        } else {
            return Err(BackendError::InvalidRequest(
                "prompt does not end with a known cue".into(),
            ));
        };
        let passage = prompt
            .lines()
            .rev()
            .find_map(|l| l.trim_start().strip_prefix(PASSAGE_LABEL))
            .map(str::trim)
            .ok_or_else(|| BackendError::InvalidRequest("prompt has no passage".into()))?;
        let out = mock_qa_generate(passage, stage, self.noise_rate, self.seed);
        let raw = format!(" {out}\nPassage: {passage}");
        Ok(GenerationResponse {
            text: truncate_at_stop(&raw, &request.stop_sequences).to_string(),
            backend_id: format!("mock-qa:{}:{}", self.noise_rate, self.seed),
        })
    }
}

/// Returns a fixed continuation for every request.
#[derive(Debug, Clone)]
pub struct ScriptedGenerator {
    pub text: String,
}

impl TextGenerator for ScriptedGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        request.validate()?;
        Ok(GenerationResponse {
            text: truncate_at_stop(&self.text, &request.stop_sequences).to_string(),
            backend_id: "scripted".into(),
        })
    }
}
