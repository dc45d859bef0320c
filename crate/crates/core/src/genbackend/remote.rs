use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::wire::{decode_png, WireError, WireRequest, WireResponse, GENERATE_PATH};
use super::{Backend, GenError, GenImage, GenRequest, Provenance};

pub const BACKEND_URL_ENV: &str = "ULTRAMAN_BACKEND_URL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Delay before the second attempt; doubles afterwards.
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff_ms: 1000,
        }
    }
}

/// HTTP client for a generation service.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    base_url: String,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

enum Attempt {
    Done(Result<GenImage, GenError>),
    Retry(String),
}

impl RemoteBackend {
    pub fn new(base_url: impl Into<String>, retry: RetryPolicy) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(10))
            .timeout(Duration::from_secs(600))
            .build();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            retry,
            agent,
        }
    }

    /// Reads the base url from `ULTRAMAN_BACKEND_URL`.
    pub fn from_env(retry: RetryPolicy) -> Option<Self> {
        std::env::var(BACKEND_URL_ENV)
            .ok()
            .filter(|s| !s.is_empty())
            .map(|u| Self::new(u, retry))
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn attempt(&self, body: &str, req: &GenRequest) -> Attempt {
        let url = format!("{}{}", self.base_url, GENERATE_PATH);
        let resp = self
            .agent
            .post(&url)
            .set("Content-Type", "application/json")
            .send_string(body);
        match resp {
            Ok(resp) => Attempt::Done(parse_success(resp, req)),
            Err(ureq::Error::Status(status, resp)) => {
                let text = resp.into_string().unwrap_or_default();
                let message = serde_json::from_str::<WireError>(&text)
                    .map(|e| e.error)
                    .unwrap_or(text);
                if status >= 500 {
                    Attempt::Retry(format!("HTTP {status}: {message}"))
                } else {
                    Attempt::Done(Err(GenError::Http { status, message }))
                }
            }
            Err(e) => Attempt::Retry(e.to_string()),
        }
    }
}

fn parse_success(resp: ureq::Response, req: &GenRequest) -> Result<GenImage, GenError> {
    let text = resp.into_string().map_err(|e| GenError::Malformed(e.to_string()))?;
    let body: WireResponse = serde_json::from_str(&text).map_err(|e| GenError::Malformed(e.to_string()))?;
    let pixels = decode_png(&body.image_png_b64)?.to_rgba8();
    if pixels.dimensions() != req.dimensions() {
        return Err(GenError::DimensionMismatch {
            expected: req.dimensions(),
            actual: pixels.dimensions(),
        });
    }
    Ok(GenImage {
        pixels,
        provenance: Provenance {
            backend_id: format!("remote:{}", body.model_id),
            seed: req.seed,
            request_hash: req.hash(),
        },
    })
}

impl Backend for RemoteBackend {
    fn id(&self) -> String {
        format!("remote:{}", self.base_url)
    }

    /// Transport failures and 5xx answers are retried with exponential
    /// backoff; 4xx answers and malformed bodies fail immediately.
    fn generate(&self, req: &GenRequest) -> Result<GenImage, GenError> {
        req.validate()?;
        let body = serde_json::to_string(&WireRequest::from_request(req)?)
            .map_err(|e| GenError::InvalidRequest(e.to_string()))?;
        let attempts = self.retry.attempts.max(1);
        let mut delay = Duration::from_millis(self.retry.initial_backoff_ms);
        let mut last = String::new();
        for i in 0..attempts {
            if i > 0 {
                log::warn!("generation attempt {i} failed ({last}); retrying in {delay:?}");
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.attempt(&body, req) {
                Attempt::Done(r) => return r,
                Attempt::Retry(msg) => last = msg,
            }
        }
        Err(GenError::Transport { attempts, message: last })
    }
}
