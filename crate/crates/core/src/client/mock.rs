//! Deterministic stand-in for a completion endpoint.
//!
//! The mock tokenizes per character, so offsets are trivially aligned and
//! scores are fully determined by the tape. A tape is JSON:
//!
//! ```json
//! {
//!   "default_completion": "OK",
//!   "default_logprob": -1.0,
//!   "completions": [{"when_contains": "Passage 3", "text": "no pipe here"}],
//!   "logprobs": [{"when_contains": "Question", "suffix": " yes", "each": -0.25}],
//!   "failures": [{"when_contains": "flaky", "status": 503, "times": 2}],
//!   "delay_ms": 0
//! }
//! ```
//!
//! Rules are tried in order and the first match wins.

use std::fs::OpenOptions;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::wire::{CompletionChoice, CompletionRequest, CompletionResponse, Logprobs};
use super::{Transport, TransportError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRule {
    pub when_contains: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogprobRule {
    #[serde(default)]
    pub when_contains: String,
    /// The prompt must end with this text. Its characters receive the
    /// rule's logprobs.
    pub suffix: String,
    /// One value per character of `suffix`.
    #[serde(default)]
    pub token_logprobs: Option<Vec<f64>>,
    /// Used for every suffix character when `token_logprobs` is absent.
    #[serde(default)]
    pub each: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRule {
    #[serde(default)]
    pub when_contains: String,
    pub status: u16,
    /// How many matching requests fail before the rule is spent.
    #[serde(default = "one")]
    pub times: usize,
    #[serde(default)]
    pub body: String,
}

fn one() -> usize {
    1
}

fn default_logprob() -> f64 {
    -1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockTape {
    #[serde(default)]
    pub default_completion: String,
    #[serde(default = "default_logprob")]
    pub default_logprob: f64,
    #[serde(default)]
    pub completions: Vec<CompletionRule>,
    #[serde(default)]
    pub logprobs: Vec<LogprobRule>,
    #[serde(default)]
    pub failures: Vec<FailureRule>,
    #[serde(default)]
    pub delay_ms: u64,
}

impl Default for MockTape {
    fn default() -> Self {
        MockTape {
            default_completion: String::new(),
            default_logprob: default_logprob(),
            completions: Vec::new(),
            logprobs: Vec::new(),
            failures: Vec::new(),
            delay_ms: 0,
        }
    }
}

impl MockTape {
    pub fn load(path: impl AsRef<Path>) -> io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    pub fn validate(&self) -> Result<(), String> {
        for (i, rule) in self.logprobs.iter().enumerate() {
            match (&rule.token_logprobs, rule.each) {
                (Some(v), _) if v.len() != rule.suffix.chars().count() => {
                    return Err(format!(
                        "logprobs[{i}]: {} values for a {}-character suffix",
                        v.len(),
                        rule.suffix.chars().count()
                    ))
                }
                (None, None) => return Err(format!("logprobs[{i}]: needs `token_logprobs` or `each`")),
                _ => {}
            }
        }
        Ok(())
    }
}

pub struct MockEngine {
    tape: MockTape,
    remaining_failures: Mutex<Vec<usize>>,
    log: Mutex<Vec<CompletionRequest>>,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
}

struct InFlight<'a>(&'a AtomicUsize);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

impl MockEngine {
    pub fn new(tape: MockTape) -> Self {
        let remaining = tape.failures.iter().map(|f| f.times).collect();
        MockEngine {
            tape,
            remaining_failures: Mutex::new(remaining),
            log: Mutex::new(Vec::new()),
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        }
    }

    pub fn tape(&self) -> &MockTape {
        &self.tape
    }

    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.log.lock().expect("request log poisoned").clone()
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn reset_peak(&self) {
        self.peak.store(0, Ordering::SeqCst);
    }

    fn failure(&self, prompt: &str) -> Option<TransportError> {
        let mut remaining = self.remaining_failures.lock().expect("failure counters poisoned");
        for (rule, left) in self.tape.failures.iter().zip(remaining.iter_mut()) {
            if *left > 0 && prompt.contains(&rule.when_contains) {
                *left -= 1;
                return Some(TransportError::Status {
                    status: rule.status,
                    body: rule.body.clone(),
                });
            }
        }
        None
    }

    fn completion_text(&self, req: &CompletionRequest) -> String {
        let text = self
            .tape
            .completions
            .iter()
            .find(|r| req.prompt.contains(&r.when_contains))
            .map_or(self.tape.default_completion.as_str(), |r| r.text.as_str());
        let mut text: String = text.chars().take(req.max_tokens as usize).collect();
        if let Some(stops) = &req.stop {
            let cut = stops.iter().filter(|s| !s.is_empty()).filter_map(|s| text.find(s.as_str())).min();
            if let Some(cut) = cut {
                text.truncate(cut);
            }
        }
        text
    }

    /// Per-character logprobs of the prompt. The first character has none.
    fn prompt_logprobs(&self, prompt: &str) -> Vec<Option<f64>> {
        let n = prompt.chars().count();
        let mut out = vec![Some(self.tape.default_logprob); n];
        let rule = self
            .tape
            .logprobs
            .iter()
            .find(|r| prompt.contains(&r.when_contains) && prompt.ends_with(&r.suffix));
        if let Some(rule) = rule {
            let k = rule.suffix.chars().count();
            for j in 0..k {
                out[n - k + j] = match &rule.token_logprobs {
                    Some(v) => Some(v[j]),
                    None => rule.each.or(Some(self.tape.default_logprob)),
                };
            }
        }
        if let Some(first) = out.first_mut() {
            *first = None;
        }
        out
    }

    pub fn respond(&self, req: &CompletionRequest) -> Result<CompletionResponse, TransportError> {
        self.log.lock().expect("request log poisoned").push(req.clone());
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        let _guard = InFlight(&self.in_flight);
        self.peak.fetch_max(now, Ordering::SeqCst);
        if self.tape.delay_ms > 0 {
            std::thread::sleep(Duration::from_millis(self.tape.delay_ms));
        }
        if let Some(err) = self.failure(&req.prompt) {
            return Err(err);
        }

        let generated = self.completion_text(req);
        let logprobs = req.logprobs.map(|_| {
            let mut tokens = Vec::new();
            let mut token_logprobs = Vec::new();
            let mut text_offset = Vec::new();
            let mut offset = 0;
            if req.echo {
                for (c, lp) in req.prompt.chars().zip(self.prompt_logprobs(&req.prompt)) {
                    tokens.push(c.to_string());
                    token_logprobs.push(lp);
                    text_offset.push(offset);
                    offset += 1;
                }
            }
            for c in generated.chars() {
                tokens.push(c.to_string());
                token_logprobs.push(Some(self.tape.default_logprob));
                text_offset.push(offset);
                offset += 1;
            }
            Logprobs {
                tokens,
                token_logprobs,
                text_offset,
            }
        });
        let text = if req.echo {
            format!("{}{generated}", req.prompt)
        } else {
            generated
        };
        Ok(CompletionResponse {
            id: format!("mock-{}", self.log.lock().expect("request log poisoned").len()),
            object: "text_completion".into(),
            choices: vec![CompletionChoice {
                text,
                index: 0,
                logprobs,
                finish_reason: Some("stop".into()),
            }],
        })
    }
}

impl Transport for MockEngine {
    fn post_completions(&self, request: &CompletionRequest) -> Result<CompletionResponse, TransportError> {
        self.respond(request)
    }
}

/// HTTP front for a [`MockEngine`]. Serves `POST /completions` (also under
/// `/v1`) and `GET /requests`, which returns the request log.
pub struct MockServer {
    engine: Arc<MockEngine>,
    server: Arc<tiny_http::Server>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

impl MockServer {
    /// Binds `addr` (port 0 picks a free port) and starts `threads` workers.
    pub fn start(engine: Arc<MockEngine>, addr: &str, threads: usize, request_log: Option<PathBuf>) -> io::Result<Self> {
        let server = tiny_http::Server::http(addr).map_err(|e| io::Error::other(e.to_string()))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| io::Error::other("mock server is not bound to an IP address"))?;
        let server = Arc::new(server);
        let log_file = match request_log {
            Some(path) => Some(Arc::new(Mutex::new(OpenOptions::new().create(true).append(true).open(path)?))),
            None => None,
        };
        let workers = (0..threads.max(1))
            .map(|_| {
                let server = Arc::clone(&server);
                let engine = Arc::clone(&engine);
                let log_file = log_file.clone();
                std::thread::spawn(move || {
                    while let Ok(request) = server.recv() {
                        if let Err(e) = handle(&engine, log_file.as_deref(), request) {
                            log::warn!("mock server: {e}");
                        }
                    }
                })
            })
            .collect();
        Ok(MockServer {
            engine,
            server,
            addr,
            workers,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn engine(&self) -> &Arc<MockEngine> {
        &self.engine
    }

    /// Blocks until the workers exit.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn json_response(status: u16, body: String) -> tiny_http::Response<io::Cursor<Vec<u8>>> {
    let header = tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header is valid");
    tiny_http::Response::from_string(body).with_status_code(status).with_header(header)
}

fn handle(engine: &MockEngine, log_file: Option<&Mutex<std::fs::File>>, mut request: tiny_http::Request) -> io::Result<()> {
    let path = request.url().split('?').next().unwrap_or("").to_owned();
    let method = request.method().clone();
    let response = match (method, path.as_str()) {
        (tiny_http::Method::Post, "/completions" | "/v1/completions") => {
            let mut body = String::new();
            request.as_reader().read_to_string(&mut body)?;
            match serde_json::from_str::<CompletionRequest>(&body) {
                Err(e) => json_response(400, serde_json::json!({ "error": e.to_string() }).to_string()),
                Ok(req) => {
                    if let Some(file) = log_file {
                        let mut f = file.lock().expect("request log file poisoned");
                        writeln!(f, "{}", serde_json::to_string(&req).unwrap_or_default())?;
                    }
                    match engine.respond(&req) {
                        Ok(resp) => json_response(200, serde_json::to_string(&resp).unwrap_or_default()),
                        Err(TransportError::Status { status, body }) => json_response(status, body),
                        Err(e) => json_response(500, serde_json::json!({ "error": e.to_string() }).to_string()),
                    }
                }
            }
        }
        (tiny_http::Method::Get, "/requests") => json_response(200, serde_json::to_string(&engine.requests()).unwrap_or_default()),
        _ => json_response(404, serde_json::json!({ "error": format!("no route for {path}") }).to_string()),
    };
    request.respond(response)
}
