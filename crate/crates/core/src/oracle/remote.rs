use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::Duration;

use reqwest::blocking::{Client, RequestBuilder};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};

use super::wire::{self, ClassifyRequest, ClassifyResponse, ErrorResponse, MetaResponse};
use super::{Oracle, ProbVector};

fn default_timeout_ms() -> u64 {
    5_000
}

fn default_retry_limit() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    250
}

/// Connection settings for a remote classification service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleEndpoint {
    pub base_url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retry_limit")]
    pub retry_limit: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token: Option<String>,
    /// Class order used to index named scores. When absent the service's
    /// own order is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
    /// First retry delay; doubles on each further retry.
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
}

impl OracleEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout_ms: default_timeout_ms(),
            retry_limit: default_retry_limit(),
            auth_token: None,
            categories: None,
            backoff_base_ms: default_backoff_ms(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base_url.trim_end_matches('/'), path)
    }
}

/// Blocking HTTP transport with retry and exponential backoff.
#[derive(Debug)]
struct Transport {
    endpoint: OracleEndpoint,
    client: Client,
    retries: AtomicU64,
}

enum Attempt<T> {
    Done(T),
    Retry(String),
    Fail(Error),
}

impl Transport {
    fn new(endpoint: OracleEndpoint) -> Result<Self> {
        let client = Client::builder()
            .timeout(Duration::from_millis(endpoint.timeout_ms))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self {
            endpoint,
            client,
            retries: AtomicU64::new(0),
        })
    }

    fn with_auth(&self, req: RequestBuilder) -> RequestBuilder {
        match &self.endpoint.auth_token {
            Some(token) => req.bearer_auth(token),
            None => req,
        }
    }

    fn send<T: for<'de> Deserialize<'de>>(&self, build: impl Fn(&Client) -> RequestBuilder) -> Result<T> {
        let mut last = String::new();
        for attempt in 0..=self.endpoint.retry_limit {
            if attempt > 0 {
                self.retries.fetch_add(1, Ordering::SeqCst);
                let wait = self.endpoint.backoff_base_ms << (attempt - 1).min(16);
                thread::sleep(Duration::from_millis(wait));
            }
            match self.attempt(&build) {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(why) => {
                    tracing::debug!(attempt, %why, "retrying request");
                    last = why;
                }
            }
        }
        Err(Error::Transport(format!(
            "giving up after {} retries: {last}",
            self.endpoint.retry_limit
        )))
    }

    fn attempt<T: for<'de> Deserialize<'de>>(&self, build: &impl Fn(&Client) -> RequestBuilder) -> Attempt<T> {
        let resp = match self.with_auth(build(&self.client)).send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status();
        let body = match resp.bytes() {
            Ok(b) => b,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        if status.is_success() {
            return match serde_json::from_slice(&body) {
                Ok(v) => Attempt::Done(v),
                Err(e) => Attempt::Fail(Error::Protocol(format!("malformed response body: {e}"))),
            };
        }
        let detail = serde_json::from_slice::<ErrorResponse>(&body)
            .map(|e| e.error)
            .unwrap_or_else(|_| String::from_utf8_lossy(&body).into_owned());
        if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
            Attempt::Retry(format!("HTTP {status}: {detail}"))
        } else {
            Attempt::Fail(Error::Protocol(format!("HTTP {status}: {detail}")))
        }
    }

    fn classify(&self, x: &[f64]) -> Result<ClassifyResponse> {
        let url = self.endpoint.url(wire::CLASSIFY_PATH);
        let body = ClassifyRequest { features: x.to_vec() };
        self.send(|c| c.post(&url).json(&body))
    }

    fn meta(&self) -> Result<MetaResponse> {
        let url = self.endpoint.url(wire::META_PATH);
        self.send(|c| c.get(&url))
    }
}

/// One-shot classification against a remote endpoint.
pub fn remote_classify(endpoint: &OracleEndpoint, x: &[f64]) -> Result<ProbVector> {
    let transport = Transport::new(endpoint.clone())?;
    let resp = transport.classify(x)?;
    wire::decode_scores(&resp, endpoint.categories.as_deref(), None)
}

/// An [`Oracle`] served over HTTP.
#[derive(Debug)]
pub struct RemoteOracle {
    transport: Transport,
    meta: MetaResponse,
    categories: Vec<String>,
}

impl RemoteOracle {
    /// Fetches `/v1/meta` to learn the input dimension and class order.
    pub fn connect(endpoint: OracleEndpoint) -> Result<Self> {
        let transport = Transport::new(endpoint)?;
        let meta = transport.meta()?;
        let categories = match &transport.endpoint.categories {
            Some(c) => {
                if c.len() != meta.num_classes {
                    return arg_err(format!(
                        "endpoint lists {} categories but the service has {} classes",
                        c.len(),
                        meta.num_classes
                    ));
                }
                c.clone()
            }
            None => meta.labels.clone(),
        };
        Ok(Self {
            transport,
            meta,
            categories,
        })
    }

    pub fn meta(&self) -> &MetaResponse {
        &self.meta
    }

    /// Number of retries performed so far.
    pub fn retries(&self) -> u64 {
        self.transport.retries.load(Ordering::SeqCst)
    }
}

impl Oracle for RemoteOracle {
    fn input_dim(&self) -> usize {
        self.meta.input_dim
    }

    fn num_classes(&self) -> usize {
        self.meta.num_classes
    }

    fn query_probs(&self, x: &[f64]) -> Result<ProbVector> {
        if x.len() != self.meta.input_dim {
            return arg_err(format!(
                "input has {} features, service expects {}",
                x.len(),
                self.meta.input_dim
            ));
        }
        let resp = self.transport.classify(x)?;
        wire::decode_scores(&resp, Some(&self.categories), Some(self.meta.num_classes))
    }
}
