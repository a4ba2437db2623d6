//! Client for completion endpoints that speak the open `/completions` wire
//! contract, used both for sampled generation and for scoring continuations
//! with prompt-echo log-probabilities.

mod http;
pub mod mock;
pub mod wire;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpTransport;
use wire::{CompletionRequest, CompletionResponse};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransportError {
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("malformed response: {0}")]
    Decode(String),
}

impl TransportError {
    fn is_transient(&self) -> bool {
        match self {
            TransportError::Status { status, .. } => *status >= 500,
            TransportError::Timeout | TransportError::Connection(_) => true,
            TransportError::Decode(_) => false,
        }
    }
}

/// Anything that can answer a completion request.
pub trait Transport: Send + Sync {
    fn post_completions(&self, request: &CompletionRequest) -> Result<CompletionResponse, TransportError>;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClientError {
    #[error("endpoint returned HTTP {status}: {body}")]
    EndpointError { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("endpoint did not return log-probabilities")]
    NoLogprobSupport,
    #[error("token {token:?} at offset {offset} straddles the prompt/continuation boundary at {boundary}")]
    BoundaryMismatch { token: String, offset: usize, boundary: usize },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("invalid sampling parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub top_p: f64,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub stop: Option<Vec<String>>,
    /// Request per-token log-probabilities for the generated text.
    #[serde(default)]
    pub logprobs: bool,
}

impl SamplingParams {
    /// Nucleus sampling used for task generation: top-p 0.95, temperature
    /// 0.5, at most 256 tokens.
    pub fn generation() -> Self {
        SamplingParams {
            top_p: 0.95,
            temperature: 0.5,
            max_tokens: 256,
            stop: None,
            logprobs: false,
        }
    }

    /// Greedy decoding for extractive evaluation: short answers stopping at
    /// the first newline.
    pub fn greedy_extraction() -> Self {
        SamplingParams {
            top_p: 1.0,
            temperature: 0.0,
            max_tokens: 64,
            stop: Some(vec!["\n".to_owned()]),
            logprobs: false,
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.max_tokens < 1 {
            return Err(ClientError::InvalidParams("max_tokens must be at least 1".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ClientError::InvalidParams(format!("top_p {} not in (0, 1]", self.top_p)));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(ClientError::InvalidParams(format!("temperature {} is negative", self.temperature)));
        }
        Ok(())
    }
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams::generation()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCompletion {
    pub text: String,
    pub token_logprobs: Vec<(String, f64)>,
    pub echo_logprobs: Option<Vec<(String, f64)>>,
}

/// Summed log-likelihood of a continuation and the number of tokens it
/// spans.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuationScore {
    pub total: f64,
    pub tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    #[serde(with = "millis")]
    pub base_delay: Duration,
    #[serde(with = "millis")]
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[derive(Clone)]
pub struct CompletionClient {
    transport: Arc<dyn Transport>,
    retry: RetryPolicy,
    max_in_flight: usize,
    model: Option<String>,
}

impl CompletionClient {
    pub fn new(transport: Arc<dyn Transport>, max_in_flight: usize) -> Self {
        CompletionClient {
            transport,
            retry: RetryPolicy::default(),
            max_in_flight: max_in_flight.max(1),
            model: None,
        }
    }

    /// Client for `<base_url>/completions`.
    pub fn http(base_url: &str, api_key: Option<String>, timeout: Duration, max_in_flight: usize) -> Self {
        Self::new(Arc::new(HttpTransport::new(base_url, api_key, timeout)), max_in_flight)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_model(mut self, model: Option<String>) -> Self {
        self.model = model;
        self
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    fn send(&self, request: &CompletionRequest) -> Result<CompletionResponse, ClientError> {
        let mut attempt = 0;
        loop {
            match self.transport.post_completions(request) {
                Ok(resp) => return Ok(resp),
                Err(err) if err.is_transient() && attempt < self.retry.max_retries => {
                    log::debug!("transient failure (attempt {}): {err}", attempt + 1);
                    std::thread::sleep(self.retry.delay(attempt));
                    attempt += 1;
                }
                Err(err) if err.is_transient() && attempt > 0 => {
                    return Err(ClientError::RetriesExhausted {
                        attempts: attempt + 1,
                        last: err.to_string(),
                    })
                }
                Err(TransportError::Status { status, body }) => return Err(ClientError::EndpointError { status, body }),
                Err(TransportError::Timeout) => return Err(ClientError::Timeout),
                Err(err @ TransportError::Connection(_)) => {
                    return Err(ClientError::RetriesExhausted {
                        attempts: attempt + 1,
                        last: err.to_string(),
                    })
                }
                Err(TransportError::Decode(msg)) => return Err(ClientError::Malformed(msg)),
            }
        }
    }

    pub fn request(&self, prompt: &str, params: &SamplingParams) -> CompletionRequest {
        CompletionRequest {
            model: self.model.clone(),
            prompt: prompt.to_owned(),
            max_tokens: params.max_tokens,
            temperature: params.temperature,
            top_p: params.top_p,
            logprobs: params.logprobs.then_some(1),
            echo: false,
            stop: params.stop.clone(),
        }
    }

    pub fn complete(&self, prompt: &str, params: &SamplingParams) -> Result<ScoredCompletion, ClientError> {
        params.validate()?;
        let resp = self.send(&self.request(prompt, params))?;
        let choice = resp
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ClientError::Malformed("response has no choices".into()))?;
        let token_logprobs = match (&choice.logprobs, params.logprobs) {
            (Some(lp), true) => lp
                .tokens
                .iter()
                .zip(&lp.token_logprobs)
                .map(|(t, l)| (t.clone(), l.unwrap_or(0.0)))
                .collect(),
            (None, true) => return Err(ClientError::NoLogprobSupport),
            _ => Vec::new(),
        };
        Ok(ScoredCompletion {
            text: choice.text,
            token_logprobs,
            echo_logprobs: None,
        })
    }

    /// Total natural-log likelihood of `continuation` following `prompt`.
    pub fn score_continuation(&self, prompt: &str, continuation: &str) -> Result<f64, ClientError> {
        self.score_continuation_detailed(prompt, continuation).map(|s| s.total)
    }

    pub fn score_continuation_detailed(&self, prompt: &str, continuation: &str) -> Result<ContinuationScore, ClientError> {
        if continuation.is_empty() {
            return Ok(ContinuationScore { total: 0.0, tokens: 0 });
        }
        let full = format!("{prompt}{continuation}");
        let request = CompletionRequest {
            model: self.model.clone(),
            prompt: full.clone(),
            max_tokens: 1,
            temperature: 0.0,
            top_p: 1.0,
            logprobs: Some(1),
            echo: true,
            stop: None,
        };
        let resp = self.send(&request)?;
        let logprobs = resp
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.logprobs)
            .ok_or(ClientError::NoLogprobSupport)?;
        continuation_logprob(&logprobs, prompt.chars().count(), full.chars().count())
    }

    /// Runs `f` over every item with at most `max_in_flight` calls
    /// outstanding. Output index `i` belongs to input index `i`.
    pub fn batch<T, R, F>(&self, items: &[T], f: F) -> Vec<Result<R, ClientError>>
    where
        T: Sync,
        R: Send,
        F: Fn(&CompletionClient, &T) -> Result<R, ClientError> + Sync,
    {
        run_bounded(items, self.max_in_flight, |item| f(self, item))
    }

    pub fn batch_complete(&self, prompts: &[(String, SamplingParams)]) -> Vec<Result<ScoredCompletion, ClientError>> {
        self.batch(prompts, |client, (prompt, params)| client.complete(prompt, params))
    }
}

/// Sums the log-probabilities of tokens covering character range
/// `boundary..end` of the echoed text.
pub fn continuation_logprob(logprobs: &wire::Logprobs, boundary: usize, end: usize) -> Result<ContinuationScore, ClientError> {
    let n = logprobs.tokens.len();
    if logprobs.token_logprobs.len() != n || logprobs.text_offset.len() != n {
        return Err(ClientError::Malformed("logprob arrays differ in length".into()));
    }
    let mut total = 0.0;
    let mut tokens = 0;
    let mut covered = 0;
    for i in 0..n {
        let offset = logprobs.text_offset[i];
        let token = &logprobs.tokens[i];
        let token_end = offset + token.chars().count();
        if offset >= end {
            break;
        }
        if offset < boundary && token_end > boundary {
            return Err(ClientError::BoundaryMismatch {
                token: token.clone(),
                offset,
                boundary,
            });
        }
        if offset >= boundary {
            let lp = logprobs.token_logprobs[i].ok_or(ClientError::NoLogprobSupport)?;
            total += lp;
            tokens += 1;
            covered += token_end.min(end) - offset;
        }
    }
    if covered != end - boundary {
        return Err(ClientError::BoundaryMismatch {
            token: String::new(),
            offset: boundary + covered,
            boundary,
        });
    }
    Ok(ContinuationScore { total, tokens })
}

/// Work-queue over scoped threads. Results come back in input order.
pub fn run_bounded<T, R, F>(items: &[T], max_in_flight: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = max_in_flight.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("result slots poisoned")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|r| r.expect("every slot is filled"))
        .collect()
}
