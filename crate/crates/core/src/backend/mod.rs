//! Completion gateway: the single point through which agents reach a model.
//!
//! Two adapters exist: [`HttpBackend`] speaks a two-message chat-completion
//! protocol over HTTP, and [`MockBackend`] answers with the deterministic
//! extractive rules in [`mock_complete`].

mod http;
mod mock;

use std::collections::BTreeMap;
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::agents::AgentRole;
use crate::transport::{ReqwestTransport, Transport};

pub use http::HttpBackend;
pub use mock::{mock_complete, stopwords, tokenize, MockBackend, STOPWORDS_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub role: AgentRole,
    pub system_instruction: String,
    pub user_content: String,
    pub max_output_chars: usize,
    pub temperature: f32,
}

impl CompletionRequest {
    pub fn new(role: AgentRole, system_instruction: String, user_content: String) -> Self {
        Self {
            role,
            system_instruction,
            user_content,
            max_output_chars: 16_000,
            temperature: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.user_content.trim().is_empty() {
            return Err(BackendError::InvalidRequest("user content is empty".into()));
        }
        if self.max_output_chars == 0 {
            return Err(BackendError::InvalidRequest("max_output_chars must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} outside [0, 1]",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn input_chars(&self) -> usize {
        self.system_instruction.chars().count() + self.user_content.chars().count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Complete,
    Truncated,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub input_chars: usize,
    pub output_chars: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub usage: Usage,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("backend unavailable after {attempts} attempt(s): {last_error}")]
    BackendUnavailable { attempts: u32, last_error: String },
    #[error("backend rejected credentials (HTTP {status})")]
    AuthFailure { status: u16 },
    #[error("backend contract violation: {0}")]
    ContractViolation(String),
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
    #[error("backend misconfigured: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Mock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_backoff_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint_url: Option<String>,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env_var: Option<String>,
    pub model_name: Option<String>,
    /// Per-role model overrides; roles not listed use `model_name`.
    pub role_models: BTreeMap<AgentRole, String>,
    pub retry: RetryPolicy,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
    pub temperature: f32,
    pub max_output_chars: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint_url: None,
            api_key_env_var: None,
            model_name: None,
            role_models: BTreeMap::new(),
            retry: RetryPolicy::default(),
            timeout_ms: 120_000,
            max_in_flight: 4,
            temperature: 0.0,
            max_output_chars: 16_000,
        }
    }
}

impl BackendConfig {
    pub fn mock() -> Self {
        Self::default()
    }

    pub fn http(endpoint_url: impl Into<String>, api_key_env_var: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Http,
            endpoint_url: Some(endpoint_url.into()),
            api_key_env_var: Some(api_key_env_var.into()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.retry.max_attempts < 1 {
            return Err(BackendError::Config("retry.max_attempts must be at least 1".into()));
        }
        if self.kind == BackendKind::Http {
            if self.endpoint_url.as_deref().is_none_or(str::is_empty) {
                return Err(BackendError::Config("http backend requires endpoint_url".into()));
            }
            if self.api_key_env_var.as_deref().is_none_or(str::is_empty) {
                return Err(BackendError::Config("http backend requires api_key_env_var".into()));
            }
        }
        Ok(())
    }

    pub fn model_for(&self, role: AgentRole) -> Option<&str> {
        self.role_models
            .get(&role)
            .or(self.model_name.as_ref())
            .map(String::as_str)
    }
}

#[async_trait]
pub trait Backend: Send + Sync {
    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError>;

    /// True when identical requests always produce identical responses.
    fn is_deterministic(&self) -> bool {
        false
    }
}

#[async_trait]
impl<B: Backend + ?Sized> Backend for Arc<B> {
    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(request).await
    }

    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }
}

/// Builds the backend described by `config`, sending HTTP through `transport`.
pub fn build_backend(
    config: &BackendConfig,
    transport: Arc<dyn Transport>,
) -> Result<Arc<dyn Backend>, BackendError> {
    config.validate()?;
    Ok(match config.kind {
        BackendKind::Mock => Arc::new(MockBackend),
        BackendKind::Http => Arc::new(HttpBackend::new(config.clone(), transport)?),
    })
}

/// One-shot completion using a backend built from `config`.
pub async fn complete(
    request: &CompletionRequest,
    config: &BackendConfig,
) -> Result<CompletionResponse, BackendError> {
    let backend = build_backend(config, Arc::new(ReqwestTransport::default()))?;
    backend.complete(request).await
}
