use std::time::Duration;

use super::wire::{CompletionRequest, CompletionResponse};
use super::{Transport, TransportError};

/// Posts to `<base>/completions` over HTTP.
pub struct HttpTransport {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(base_url: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        HttpTransport {
            agent,
            url: format!("{}/completions", base_url.trim_end_matches('/')),
            api_key,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

fn is_timeout(err: &ureq::Transport) -> bool {
    use std::error::Error;
    let mut source = err.source();
    while let Some(e) = source {
        if let Some(io) = e.downcast_ref::<std::io::Error>() {
            if matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) {
                return true;
            }
        }
        source = e.source();
    }
    err.to_string().contains("timed out")
}

impl Transport for HttpTransport {
    fn post_completions(&self, request: &CompletionRequest) -> Result<CompletionResponse, TransportError> {
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        match req.send_json(request) {
            Ok(resp) => resp
                .into_json::<CompletionResponse>()
                .map_err(|e| TransportError::Decode(e.to_string())),
            Err(ureq::Error::Status(status, resp)) => Err(TransportError::Status {
                status,
                body: resp.into_string().unwrap_or_default(),
            }),
            Err(ureq::Error::Transport(t)) if is_timeout(&t) => Err(TransportError::Timeout),
            Err(ureq::Error::Transport(t)) => Err(TransportError::Connection(t.to_string())),
        }
    }
}
