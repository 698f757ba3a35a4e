//! Minimal HTTP transport abstraction shared by the completion backend and
//! the fetchers, so tests can substitute recorded or scripted exchanges.
//!
//! Recorded exchanges live in JSON files of the form
//!
//! ```json
//! {"exchanges": [{"request": {"method": "GET", "url": "https://..."},
//!                 "response": {"status": 200, "headers": {"content-type": "..."},
//!                              "body": "...", "json": null}}]}
//! ```
//!
//! where `json` (any JSON value) is an alternative to a string `body`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpRequest {
    pub method: String,
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: Option<Vec<u8>>,
    pub timeout: Duration,
}

impl HttpRequest {
    pub fn get(url: impl Into<String>) -> Self {
        Self {
            method: "GET".into(),
            url: url.into(),
            headers: Vec::new(),
            body: None,
            timeout: Duration::from_secs(30),
        }
    }

    pub fn post_json(url: impl Into<String>, body: &serde_json::Value) -> Self {
        Self {
            method: "POST".into(),
            url: url.into(),
            headers: vec![("content-type".into(), "application/json".into())],
            body: Some(serde_json::to_vec(body).expect("json value serializes")),
            timeout: Duration::from_secs(30),
        }
    }

    pub fn header(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.headers.push((name.into(), value.into()));
        self
    }

    pub fn timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HttpResponse {
    pub status: u16,
    /// Lower-cased header names.
    pub headers: BTreeMap<String, String>,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn new(status: u16, body: impl Into<Vec<u8>>) -> Self {
        Self {
            status,
            headers: BTreeMap::new(),
            body: body.into(),
        }
    }

    pub fn with_header(mut self, name: &str, value: impl Into<String>) -> Self {
        self.headers.insert(name.to_ascii_lowercase(), value.into());
        self
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.get(&name.to_ascii_lowercase()).map(String::as_str)
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("response body exceeds {limit} bytes")]
    TooLarge { limit: usize },
}

#[async_trait]
pub trait Transport: Send + Sync {
    async fn send(&self, request: HttpRequest) -> Result<HttpResponse, TransportError>;
}

/// Real network transport backed by `reqwest`.
#[derive(Debug, Clone)]
pub struct ReqwestTransport {
    client: reqwest::Client,
    max_body_bytes: usize,
}

impl ReqwestTransport {
    pub fn new(user_agent: &str) -> Self {
        let client = reqwest::Client::builder()
            .user_agent(user_agent)
            .build()
            .expect("http client builds with default settings");
        Self {
            client,
            max_body_bytes: 64 * 1024 * 1024,
        }
    }
}

impl Default for ReqwestTransport {
    fn default() -> Self {
        Self::new(concat!("qda/", env!("CARGO_PKG_VERSION")))
    }
}

#[async_trait]
impl Transport for ReqwestTransport {
    async fn send(&self, request: HttpRequest) -> Result<HttpResponse, TransportError> {
        let method = reqwest::Method::from_bytes(request.method.as_bytes())
            .map_err(|e| TransportError::Connect(e.to_string()))?;
        let mut builder = self
            .client
            .request(method, &request.url)
            .timeout(request.timeout);
        for (name, value) in &request.headers {
            builder = builder.header(name, value);
        }
        if let Some(body) = request.body {
            builder = builder.body(body);
        }
        let map_err = |e: reqwest::Error| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Connect(e.to_string())
            }
        };
        let mut response = builder.send().await.map_err(map_err)?;
        let status = response.status().as_u16();
        let headers = response
            .headers()
            .iter()
            .filter_map(|(k, v)| Some((k.as_str().to_ascii_lowercase(), v.to_str().ok()?.to_string())))
            .collect();
        let mut body = Vec::new();
        while let Some(chunk) = response.chunk().await.map_err(map_err)? {
            body.extend_from_slice(&chunk);
            if body.len() > self.max_body_bytes {
                return Err(TransportError::TooLarge {
                    limit: self.max_body_bytes,
                });
            }
        }
        Ok(HttpResponse {
            status,
            headers,
            body,
        })
    }
}

/// Wraps another transport and records every request it sees.
pub struct RecordingTransport<T> {
    inner: T,
    log: Mutex<Vec<HttpRequest>>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<HttpRequest> {
        self.log.lock().unwrap().clone()
    }

    pub fn count(&self) -> usize {
        self.log.lock().unwrap().len()
    }
}

#[async_trait]
impl<T: Transport> Transport for RecordingTransport<T> {
    async fn send(&self, request: HttpRequest) -> Result<HttpResponse, TransportError> {
        self.log.lock().unwrap().push(request.clone());
        self.inner.send(request).await
    }
}

/// Transport that refuses every request.
#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineTransport;

#[async_trait]
impl Transport for OfflineTransport {
    async fn send(&self, request: HttpRequest) -> Result<HttpResponse, TransportError> {
        Err(TransportError::Connect(format!("offline: refused {} {}", request.method, request.url)))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordedExchange {
    pub request: RecordedRequest,
    pub response: RecordedResponse,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordedRequest {
    pub method: String,
    pub url: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordedResponse {
    pub status: u16,
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
    #[serde(default)]
    pub body: Option<String>,
    #[serde(default)]
    pub json: Option<serde_json::Value>,
}

#[derive(Debug, Deserialize)]
struct ExchangeFile {
    exchanges: Vec<RecordedExchange>,
}

/// Serves responses from recorded exchanges, matched on method and URL.
#[derive(Debug, Default)]
pub struct ReplayTransport {
    exchanges: HashMap<(String, String), HttpResponse>,
}

impl ReplayTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, method: &str, url: &str, response: HttpResponse) {
        self.exchanges
            .insert((method.to_ascii_uppercase(), url.to_string()), response);
    }

    pub fn add_exchange(&mut self, exchange: RecordedExchange) {
        let body = match (exchange.response.body, exchange.response.json) {
            (Some(text), _) => text.into_bytes(),
            (None, Some(json)) => serde_json::to_vec(&json).expect("json value serializes"),
            (None, None) => Vec::new(),
        };
        let response = HttpResponse {
            status: exchange.response.status,
            headers: exchange
                .response
                .headers
                .into_iter()
                .map(|(k, v)| (k.to_ascii_lowercase(), v))
                .collect(),
            body,
        };
        self.insert(&exchange.request.method, &exchange.request.url, response);
    }

    /// Loads one exchange file.
    pub fn load_file(&mut self, path: &Path) -> std::io::Result<()> {
        let text = std::fs::read_to_string(path)?;
        let file: ExchangeFile = serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?;
        for exchange in file.exchanges {
            self.add_exchange(exchange);
        }
        Ok(())
    }

    /// Loads every `*.json` exchange file in `dir`.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mut replay = Self::new();
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        paths.sort();
        for path in paths {
            replay.load_file(&path)?;
        }
        Ok(replay)
    }
}

#[async_trait]
impl Transport for ReplayTransport {
    async fn send(&self, request: HttpRequest) -> Result<HttpResponse, TransportError> {
        self.exchanges
            .get(&(request.method.to_ascii_uppercase(), request.url.clone()))
            .cloned()
            .ok_or_else(|| {
                TransportError::Connect(format!("no recorded exchange for {} {}", request.method, request.url))
            })
    }
}
