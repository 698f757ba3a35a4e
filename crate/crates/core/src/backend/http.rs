use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use super::{Backend, BackendConfig, BackendError, CompletionRequest, CompletionResponse, FinishReason, Usage};
use crate::transport::{HttpRequest, HttpResponse, Transport, TransportError};

/// Upper bound on a server-requested retry delay.
const MAX_RETRY_AFTER: Duration = Duration::from_secs(60);

/// Chat-completion client: one system and one user message per call.
pub struct HttpBackend {
    config: BackendConfig,
    api_key: String,
    transport: Arc<dyn Transport>,
    in_flight: Semaphore,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.config.endpoint_url)
            .field("model", &self.config.model_name)
            .finish_non_exhaustive()
    }
}

enum Outcome {
    Done(CompletionResponse),
    Transient { error: String, wait: Option<Duration> },
}

impl HttpBackend {
    /// Reads the bearer token from the environment variable named in
    /// `config.api_key_env_var`.
    pub fn new(config: BackendConfig, transport: Arc<dyn Transport>) -> Result<Self, BackendError> {
        config.validate()?;
        let var = config.api_key_env_var.clone().unwrap_or_default();
        let api_key = std::env::var(&var)
            .map_err(|_| BackendError::Config(format!("environment variable {var} is not set")))?;
        Ok(Self::with_api_key(config, api_key, transport))
    }

    pub fn with_api_key(config: BackendConfig, api_key: String, transport: Arc<dyn Transport>) -> Self {
        let permits = config.max_in_flight.max(1);
        Self {
            config,
            api_key,
            transport,
            in_flight: Semaphore::new(permits),
        }
    }

    fn body(&self, request: &CompletionRequest) -> Value {
        let mut body = json!({
            "messages": [
                {"role": "system", "content": request.system_instruction},
                {"role": "user", "content": request.user_content},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output_chars.div_ceil(4),
        });
        if let Some(model) = self.config.model_for(request.role) {
            body["model"] = json!(model);
        }
        body
    }

    async fn attempt(&self, payload: &Value, request: &CompletionRequest) -> Result<Outcome, BackendError> {
        let http = HttpRequest::post_json(self.config.endpoint_url.clone().unwrap_or_default(), payload)
            .header("authorization", format!("Bearer {}", self.api_key))
            .timeout(Duration::from_millis(self.config.timeout_ms));
        let response = match self.transport.send(http).await {
            Ok(r) => r,
            Err(TransportError::Timeout) => {
                return Ok(Outcome::Transient {
                    error: "request timed out".into(),
                    wait: None,
                })
            }
            Err(e) => {
                return Ok(Outcome::Transient {
                    error: e.to_string(),
                    wait: None,
                })
            }
        };
        match response.status {
            401 | 403 => Err(BackendError::AuthFailure {
                status: response.status,
            }),
            429 | 500..=599 => Ok(Outcome::Transient {
                error: format!("HTTP {}", response.status),
                wait: retry_after(&response),
            }),
            200..=299 => parse_completion(&response, request).map(Outcome::Done),
            status => Err(BackendError::ContractViolation(format!(
                "HTTP {status}: {}",
                String::from_utf8_lossy(&response.body).chars().take(300).collect::<String>()
            ))),
        }
    }
}

#[async_trait]
impl Backend for HttpBackend {
    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        request.validate()?;
        let _permit = self
            .in_flight
            .acquire()
            .await
            .map_err(|_| BackendError::Config("backend is shutting down".into()))?;
        let payload = self.body(request);
        let max_attempts = self.config.retry.max_attempts.max(1);
        let mut last_error = String::new();
        for attempt in 1..=max_attempts {
            match self.attempt(&payload, request).await? {
                Outcome::Done(resp) => return Ok(resp),
                Outcome::Transient { error, wait } => {
                    tracing::warn!(attempt, %error, role = %request.role, "transient backend failure");
                    last_error = error;
                    if attempt < max_attempts {
                        let backoff = Duration::from_millis(
                            self.config.retry.base_backoff_ms.saturating_mul(1 << (attempt - 1).min(16)),
                        );
                        tokio::time::sleep(wait.unwrap_or(backoff).min(MAX_RETRY_AFTER)).await;
                    }
                }
            }
        }
        Err(BackendError::BackendUnavailable {
            attempts: max_attempts,
            last_error,
        })
    }
}

fn retry_after(response: &HttpResponse) -> Option<Duration> {
    response
        .header("retry-after")
        .and_then(|v| v.trim().parse::<u64>().ok())
        .map(Duration::from_secs)
}

fn parse_completion(response: &HttpResponse, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
    let value: Value = serde_json::from_slice(&response.body)
        .map_err(|e| BackendError::ContractViolation(format!("response is not JSON: {e}")))?;
    let choice = value
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| BackendError::ContractViolation("response has no choices".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::ContractViolation("choice has no message content".into()))?
        .to_string();
    let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("length") => FinishReason::Truncated,
        Some("stop") | Some("end_turn") | None => FinishReason::Complete,
        Some(_) => FinishReason::Error,
    };
    if finish_reason == FinishReason::Complete && text.is_empty() {
        return Err(BackendError::ContractViolation("complete response with empty text".into()));
    }
    Ok(CompletionResponse {
        usage: Usage {
            input_chars: request.input_chars(),
            output_chars: text.chars().count(),
        },
        text,
        finish_reason,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::VecDeque;
    use std::sync::Mutex;

    use super::*;
    use crate::agents::AgentRole;
    use crate::backend::RetryPolicy;

    /// Replies with a fixed sequence of responses and records request bodies.
    struct Scripted {
        replies: Mutex<VecDeque<Result<HttpResponse, TransportError>>>,
        bodies: Mutex<Vec<Vec<u8>>>,
    }

    impl Scripted {
        fn new(replies: Vec<Result<HttpResponse, TransportError>>) -> Arc<Self> {
            Arc::new(Self {
                replies: Mutex::new(replies.into()),
                bodies: Mutex::new(Vec::new()),
            })
        }
        fn calls(&self) -> usize {
            self.bodies.lock().unwrap().len()
        }
    }

    #[async_trait]
    impl Transport for Scripted {
        async fn send(&self, request: HttpRequest) -> Result<HttpResponse, TransportError> {
            self.bodies.lock().unwrap().push(request.body.unwrap_or_default());
            self.replies
                .lock()
                .unwrap()
                .pop_front()
                .unwrap_or(Ok(HttpResponse::new(500, "exhausted")))
        }
    }

    fn ok_body(text: &str) -> HttpResponse {
        HttpResponse::new(
            200,
            serde_json::to_vec(&json!({"choices": [{"message": {"content": text}, "finish_reason": "stop"}]})).unwrap(),
        )
    }

    fn backend(transport: Arc<Scripted>, attempts: u32) -> HttpBackend {
        let mut config = BackendConfig::http("http://stub/v1/chat/completions", "UNUSED");
        config.retry = RetryPolicy {
            max_attempts: attempts,
            base_backoff_ms: 1,
        };
        config.model_name = Some("test-model".into());
        HttpBackend::with_api_key(config, "secret".into(), transport)
    }

    fn request() -> CompletionRequest {
        CompletionRequest::new(AgentRole::Coder, "sys".into(), "user".into())
    }

    #[tokio::test]
    async fn retries_server_errors_then_succeeds() {
        let t = Scripted::new(vec![
            Ok(HttpResponse::new(500, "")),
            Ok(HttpResponse::new(503, "")),
            Ok(ok_body("hello")),
        ]);
        let resp = backend(t.clone(), 3).complete(&request()).await.unwrap();
        assert_eq!(resp.text, "hello");
        assert_eq!(t.calls(), 3);
        let bodies = t.bodies.lock().unwrap();
        assert!(bodies.windows(2).all(|w| w[0] == w[1]), "retries resend identical payloads");
    }

    #[tokio::test]
    async fn auth_failure_is_not_retried() {
        let t = Scripted::new(vec![Ok(HttpResponse::new(401, "")), Ok(ok_body("never"))]);
        let err = backend(t.clone(), 3).complete(&request()).await.unwrap_err();
        assert_eq!(err, BackendError::AuthFailure { status: 401 });
        assert_eq!(t.calls(), 1);
    }

    #[tokio::test]
    async fn exhausted_retries_are_unavailable() {
        let t = Scripted::new(vec![
            Ok(HttpResponse::new(429, "").with_header("retry-after", "0")),
            Err(TransportError::Timeout),
        ]);
        let err = backend(t.clone(), 2).complete(&request()).await.unwrap_err();
        assert!(matches!(err, BackendError::BackendUnavailable { attempts: 2, .. }), "{err:?}");
    }

    #[tokio::test]
    async fn malformed_body_is_contract_violation() {
        let t = Scripted::new(vec![Ok(HttpResponse::new(200, "not json"))]);
        let err = backend(t, 3).complete(&request()).await.unwrap_err();
        assert!(matches!(err, BackendError::ContractViolation(_)));
    }

    #[tokio::test]
    async fn request_body_shape() {
        let t = Scripted::new(vec![Ok(ok_body("x"))]);
        backend(t.clone(), 1).complete(&request()).await.unwrap();
        let body: Value = serde_json::from_slice(&t.bodies.lock().unwrap()[0]).unwrap();
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"], "user");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["max_tokens"], 4000);
    }

    #[tokio::test]
    async fn truncated_finish_reason() {
        let t = Scripted::new(vec![Ok(HttpResponse::new(
            200,
            serde_json::to_vec(&json!({"choices": [{"message": {"content": "partial"}, "finish_reason": "length"}]})).unwrap(),
        ))]);
        let resp = backend(t, 1).complete(&request()).await.unwrap();
        assert_eq!(resp.finish_reason, FinishReason::Truncated);
    }

    #[test]
    fn missing_key_variable_is_config_error() {
        let config = BackendConfig::http("http://stub", "QDA_TEST_SURELY_UNSET_VAR");
        let err = HttpBackend::new(config, Arc::new(crate::transport::OfflineTransport)).unwrap_err();
        assert!(matches!(err, BackendError::Config(_)));
    }
}
