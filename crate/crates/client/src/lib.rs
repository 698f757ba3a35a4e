//! Typed client for the job service's `/v1` HTTP API.

use qda_core::jobs::{ErrorBody, JobEvent, JobSnapshot, MethodInfo, SubmitResponse, Submission};
use qda_core::OutputFormat;
use reqwest::multipart::{Form, Part};
use reqwest::{Response, Url};
use serde::de::DeserializeOwned;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("invalid server url '{0}'")]
    InvalidUrl(String),
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("server returned {status}: {}", body.message)]
    Api { status: u16, body: ErrorBody },
    #[error("server returned {status}: {body}")]
    UnexpectedStatus { status: u16, body: String },
    #[error("could not decode server response: {0}")]
    Decode(String),
}

impl ClientError {
    pub fn api_error(&self) -> Option<&ErrorBody> {
        match self {
            ClientError::Api { body, .. } => Some(body),
            _ => None,
        }
    }
}

/// A file to upload as a multipart submission.
#[derive(Debug, Clone)]
pub struct Upload {
    pub method: String,
    pub filename: String,
    pub bytes: Vec<u8>,
    pub declared_kind: Option<String>,
    pub output_format: Option<String>,
    pub custom_instruction: Option<String>,
}

/// An exported result with its content type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Export {
    pub content_type: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct Client {
    base: Url,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base_url: &str) -> Result<Self, ClientError> {
        let base = Url::parse(base_url).map_err(|_| ClientError::InvalidUrl(base_url.to_string()))?;
        if base.cannot_be_a_base() || !matches!(base.scheme(), "http" | "https") {
            return Err(ClientError::InvalidUrl(base_url.to_string()));
        }
        let http = reqwest::Client::builder()
            .user_agent(concat!("qda-client/", env!("CARGO_PKG_VERSION")))
            .build()?;
        Ok(Self { base, http })
    }

    fn url(&self, segments: &[&str]) -> Url {
        let mut url = self.base.clone();
        {
            let mut path = url.path_segments_mut().expect("checked in new");
            path.pop_if_empty().push("v1");
            for s in segments {
                path.push(s);
            }
        }
        url
    }

    pub async fn health(&self) -> Result<(), ClientError> {
        check(self.http.get(self.url(&["healthz"])).send().await?).await?;
        Ok(())
    }

    pub async fn methods(&self) -> Result<Vec<MethodInfo>, ClientError> {
        json(self.http.get(self.url(&["methods"])).send().await?).await
    }

    pub async fn submit(&self, submission: &Submission) -> Result<SubmitResponse, ClientError> {
        json(self.http.post(self.url(&["jobs"])).json(submission).send().await?).await
    }

    pub async fn submit_upload(&self, upload: Upload) -> Result<SubmitResponse, ClientError> {
        let mut form = Form::new()
            .text("method", upload.method)
            .part("file", Part::bytes(upload.bytes).file_name(upload.filename));
        for (name, value) in [
            ("declared_kind", upload.declared_kind),
            ("output_format", upload.output_format),
            ("custom_instruction", upload.custom_instruction),
        ] {
            if let Some(v) = value {
                form = form.text(name, v);
            }
        }
        json(self.http.post(self.url(&["jobs"])).multipart(form).send().await?).await
    }

    pub async fn job(&self, id: &str) -> Result<JobSnapshot, ClientError> {
        json(self.http.get(self.url(&["jobs", id])).send().await?).await
    }

    /// Reads the job's progress stream to its end, calling `on_event` for
    /// each event as it arrives, and returns all events.
    pub async fn follow(&self, id: &str, mut on_event: impl FnMut(&JobEvent)) -> Result<Vec<JobEvent>, ClientError> {
        let mut response = check(self.http.get(self.url(&["jobs", id, "events"])).send().await?).await?;
        let mut buffer: Vec<u8> = Vec::new();
        let mut events = Vec::new();
        let mut handle = |line: &[u8], events: &mut Vec<JobEvent>| -> Result<(), ClientError> {
            if line.iter().all(u8::is_ascii_whitespace) {
                return Ok(());
            }
            let event: JobEvent = serde_json::from_slice(line).map_err(|e| ClientError::Decode(e.to_string()))?;
            on_event(&event);
            events.push(event);
            Ok(())
        };
        while let Some(chunk) = response.chunk().await? {
            buffer.extend_from_slice(&chunk);
            while let Some(pos) = buffer.iter().position(|&b| b == b'\n') {
                let line: Vec<u8> = buffer.drain(..=pos).collect();
                handle(&line, &mut events)?;
            }
        }
        handle(&buffer, &mut events)?;
        Ok(events)
    }

    /// Follows the job to completion and returns its final snapshot.
    pub async fn wait(&self, id: &str) -> Result<JobSnapshot, ClientError> {
        self.follow(id, |_| {}).await?;
        self.job(id).await
    }

    pub async fn result(&self, id: &str, format: Option<OutputFormat>) -> Result<Export, ClientError> {
        let mut url = self.url(&["jobs", id, "result"]);
        if let Some(f) = format {
            url.query_pairs_mut().append_pair("format", f.as_str());
        }
        let response = check(self.http.get(url).send().await?).await?;
        let content_type = response
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .unwrap_or_default()
            .to_string();
        Ok(Export {
            content_type,
            bytes: response.bytes().await?.to_vec(),
        })
    }
}

async fn check(response: Response) -> Result<Response, ClientError> {
    let status = response.status();
    if status.is_success() {
        return Ok(response);
    }
    let text = response.text().await.unwrap_or_default();
    Err(match serde_json::from_str::<ErrorBody>(&text) {
        Ok(body) => ClientError::Api {
            status: status.as_u16(),
            body,
        },
        Err(_) => ClientError::UnexpectedStatus {
            status: status.as_u16(),
            body: text,
        },
    })
}

async fn json<T: DeserializeOwned>(response: Response) -> Result<T, ClientError> {
    let bytes = check(response).await?.bytes().await?;
    serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode(e.to_string()))
}
