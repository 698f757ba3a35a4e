//! Turns every supported input modality into a [`Document`]: inline text,
//! uploaded files, web pages, GitHub issue threads and interview transcripts.

mod extract;
mod github;
mod html;
mod pdf;
mod transcript;
mod web;

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::model::{Document, Modality, ModelError, Provenance};
use crate::segment::SegmentationPolicy;
use crate::transport::{HttpRequest, HttpResponse, Transport, TransportError};

pub use extract::{extract_text, TextExtractor, BUILTIN_KINDS};
pub use github::{fetch_github, parse_thread_url, ThreadRef};
pub use html::strip_html;
pub use pdf::extract_pdf_text;
pub use transcript::{detect_turns, ingest_transcript};
pub use web::fetch_web;

/// Default cap on document size: 2 MB of text.
pub const DEFAULT_MAX_BYTES: usize = 2 * 1024 * 1024;

/// Where a document comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceSpec {
    InlineText {
        text: String,
    },
    FileUpload {
        filename: String,
        #[serde(with = "base64_bytes")]
        bytes: Vec<u8>,
        /// One of txt, md, pdf, doc-text (or a registered adapter kind);
        /// inferred from the filename extension when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        declared_kind: Option<String>,
    },
    WebLink {
        url: String,
    },
    GithubLink {
        url: String,
    },
    Transcript {
        text: String,
        /// Split on "Name:" turn markers when present.
        #[serde(default = "yes")]
        speaker_markers: bool,
    },
}

fn yes() -> bool {
    true
}

impl SourceSpec {
    pub fn modality(&self) -> Modality {
        match self {
            SourceSpec::InlineText { .. } => Modality::InlineText,
            SourceSpec::FileUpload { .. } => Modality::FileUpload,
            SourceSpec::WebLink { .. } => Modality::WebLink,
            SourceSpec::GithubLink { .. } => Modality::GithubLink,
            SourceSpec::Transcript { .. } => Modality::Transcript,
        }
    }

    /// Checks the variant's own invariants without doing any I/O.
    pub fn validate(&self) -> Result<(), IngestError> {
        match self {
            SourceSpec::InlineText { text } | SourceSpec::Transcript { text, .. } => {
                if text.trim().is_empty() {
                    return Err(IngestError::EmptyInput);
                }
            }
            SourceSpec::FileUpload { filename, bytes, .. } => {
                if bytes.is_empty() {
                    return Err(IngestError::InvalidSource(format!("upload '{filename}' is empty")));
                }
            }
            SourceSpec::WebLink { url } | SourceSpec::GithubLink { url } => {
                check_http_url(url)?;
            }
        }
        Ok(())
    }
}

pub(crate) fn check_http_url(raw: &str) -> Result<url::Url, IngestError> {
    let parsed = url::Url::parse(raw).map_err(|e| IngestError::InvalidSource(format!("invalid url '{raw}': {e}")))?;
    if !matches!(parsed.scheme(), "http" | "https") || parsed.host_str().is_none() {
        return Err(IngestError::InvalidSource(format!("url '{raw}' is not an absolute http(s) url")));
    }
    Ok(parsed)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FetchConfig {
    pub user_agent: String,
    pub timeout_ms: u64,
    pub max_bytes: usize,
    /// Environment variable holding a GitHub token; unauthenticated if unset.
    pub github_token_env_var: Option<String>,
    pub github_api_base: String,
}

impl Default for FetchConfig {
    fn default() -> Self {
        Self {
            user_agent: concat!("qda/", env!("CARGO_PKG_VERSION")).to_string(),
            timeout_ms: 30_000,
            max_bytes: DEFAULT_MAX_BYTES,
            github_token_env_var: None,
            github_api_base: "https://api.github.com".to_string(),
        }
    }
}

impl FetchConfig {
    pub(crate) fn get(&self, url: &str) -> HttpRequest {
        HttpRequest::get(url)
            .header("user-agent", self.user_agent.clone())
            .timeout(std::time::Duration::from_millis(self.timeout_ms))
    }

    pub(crate) fn check_size(&self, len: usize) -> Result<(), IngestError> {
        if len > self.max_bytes {
            return Err(IngestError::TooLarge { limit: self.max_bytes });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IngestError {
    #[error("input text is empty")]
    EmptyInput,
    #[error("invalid source: {0}")]
    InvalidSource(String),
    #[error("unsupported format '{0}'; supported: txt, md, pdf, doc-text")]
    UnsupportedFormat(String),
    #[error("could not decode text: {0}")]
    DecodeError(String),
    #[error("text extraction incomplete: {0}")]
    ExtractionIncomplete(String),
    #[error("not a GitHub issue or pull request url: {0}")]
    NotAThread(String),
    #[error("GitHub rate limit exceeded{}", retry_after_secs.map(|s| format!(", retry after {s}s")).unwrap_or_default())]
    RateLimited { retry_after_secs: Option<u64> },
    #[error("fetch failed: {0}")]
    FetchFailed(String),
    #[error("page has no visible text")]
    EmptyAfterStrip,
    #[error("document exceeds the {limit}-byte limit")]
    TooLarge { limit: usize },
}

impl From<ModelError> for IngestError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::EmptyInput => IngestError::EmptyInput,
            other => IngestError::InvalidSource(other.to_string()),
        }
    }
}

pub(crate) async fn send(
    transport: &dyn Transport,
    request: HttpRequest,
    config: &FetchConfig,
) -> Result<HttpResponse, IngestError> {
    let url = request.url.clone();
    let response = transport.send(request).await.map_err(|e| match e {
        TransportError::TooLarge { .. } => IngestError::TooLarge { limit: config.max_bytes },
        other => IngestError::FetchFailed(format!("{url}: {other}")),
    })?;
    config.check_size(response.body.len())?;
    Ok(response)
}

/// Ingestion entry point with its transport, limits and extractor adapters.
#[derive(Clone)]
pub struct Ingestor {
    transport: Arc<dyn Transport>,
    config: FetchConfig,
    policy: SegmentationPolicy,
    extractors: HashMap<String, Arc<dyn TextExtractor>>,
}

impl Ingestor {
    pub fn new(transport: Arc<dyn Transport>, config: FetchConfig) -> Self {
        Self {
            transport,
            config,
            policy: SegmentationPolicy::default(),
            extractors: HashMap::new(),
        }
    }

    pub fn with_policy(mut self, policy: SegmentationPolicy) -> Self {
        self.policy = policy;
        self
    }

    /// Registers an adapter for an additional declared kind, or replaces a
    /// built-in one.
    pub fn with_extractor(mut self, kind: &str, extractor: Arc<dyn TextExtractor>) -> Self {
        self.extractors.insert(kind.to_ascii_lowercase(), extractor);
        self
    }

    pub fn config(&self) -> &FetchConfig {
        &self.config
    }

    /// Cheap checks that need no I/O: well-formed source, a known file kind,
    /// a GitHub issue or pull request URL.
    pub fn precheck(&self, source: &SourceSpec) -> Result<(), IngestError> {
        source.validate()?;
        match source {
            SourceSpec::FileUpload {
                filename,
                declared_kind,
                ..
            } => {
                let kind = match declared_kind {
                    Some(k) => k.trim().to_ascii_lowercase(),
                    None => kind_from_filename(filename)?,
                };
                if !self.extractors.contains_key(&kind) && !BUILTIN_KINDS.contains(&kind.as_str()) {
                    return Err(IngestError::UnsupportedFormat(kind));
                }
            }
            SourceSpec::GithubLink { url } => {
                parse_thread_url(url)?;
            }
            _ => {}
        }
        Ok(())
    }

    pub async fn ingest(&self, source: &SourceSpec) -> Result<Document, IngestError> {
        source.validate()?;
        let transport = self.transport.as_ref();
        let doc = match source {
            SourceSpec::InlineText { text } => {
                self.config.check_size(text.len())?;
                Document::from_text(text, Provenance::new(Modality::InlineText, None), &self.policy)?
            }
            SourceSpec::FileUpload {
                filename,
                bytes,
                declared_kind,
            } => {
                self.config.check_size(bytes.len())?;
                let kind = match declared_kind {
                    Some(k) => k.trim().to_ascii_lowercase(),
                    None => kind_from_filename(filename)?,
                };
                let text = match self.extractors.get(&kind) {
                    Some(adapter) => adapter.extract(bytes)?,
                    None => extract_text(bytes, &kind)?,
                };
                self.config.check_size(text.len())?;
                Document::from_text(
                    &text,
                    Provenance::new(Modality::FileUpload, Some(filename.clone())),
                    &self.policy,
                )?
                .with_metadata("title", filename.clone())
                .with_metadata("declared_kind", kind)
            }
            SourceSpec::WebLink { url } => fetch_web(url, &self.config, transport, &self.policy).await?,
            SourceSpec::GithubLink { url } => fetch_github(url, &self.config, transport, &self.policy).await?,
            SourceSpec::Transcript { text, speaker_markers } => {
                self.config.check_size(text.len())?;
                ingest_transcript(text, *speaker_markers, &self.policy)?
            }
        };
        Ok(doc)
    }
}

/// Ingests `source` with the given configuration and transport.
pub async fn ingest(
    source: &SourceSpec,
    config: &FetchConfig,
    transport: Arc<dyn Transport>,
) -> Result<Document, IngestError> {
    Ingestor::new(transport, config.clone()).ingest(source).await
}

fn kind_from_filename(filename: &str) -> Result<String, IngestError> {
    let ext = std::path::Path::new(filename)
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "txt" | "text" => Ok("txt".into()),
        "md" | "markdown" => Ok("md".into()),
        "pdf" => Ok("pdf".into()),
        _ => Err(IngestError::UnsupportedFormat(if ext.is_empty() {
            filename.to_string()
        } else {
            ext
        })),
    }
}

pub(crate) fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

mod base64_bytes {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text.trim()).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::OfflineTransport;

    fn ingestor() -> Ingestor {
        Ingestor::new(Arc::new(OfflineTransport), FetchConfig::default())
    }

    #[tokio::test]
    async fn inline_text_two_paragraphs() {
        let doc = ingestor()
            .ingest(&SourceSpec::InlineText {
                text: "Para one.\n\nPara two.".into(),
            })
            .await
            .unwrap();
        assert_eq!(doc.segments.len(), 2);
        assert_eq!(doc.metadata["modality"], "inline_text");
    }

    #[tokio::test]
    async fn unknown_upload_kind_is_unsupported() {
        let src = SourceSpec::FileUpload {
            filename: "x.exe".into(),
            bytes: vec![0x4d, 0x5a],
            declared_kind: Some("exe".into()),
        };
        assert!(matches!(ingestor().ingest(&src).await, Err(IngestError::UnsupportedFormat(_))));
        let src = SourceSpec::FileUpload {
            filename: "x.exe".into(),
            bytes: vec![0x4d, 0x5a],
            declared_kind: None,
        };
        assert!(matches!(ingestor().ingest(&src).await, Err(IngestError::UnsupportedFormat(_))));
    }

    #[tokio::test]
    async fn upload_kind_from_extension() {
        let src = SourceSpec::FileUpload {
            filename: "notes.md".into(),
            bytes: b"# Notes\n\nSome text.".to_vec(),
            declared_kind: None,
        };
        let doc = ingestor().ingest(&src).await.unwrap();
        assert_eq!(doc.metadata["declared_kind"], "md");
        assert_eq!(doc.metadata["origin"], "notes.md");
    }

    #[tokio::test]
    async fn oversize_input_is_rejected() {
        let config = FetchConfig {
            max_bytes: 10,
            ..FetchConfig::default()
        };
        let src = SourceSpec::InlineText {
            text: "more than ten bytes".into(),
        };
        let err = Ingestor::new(Arc::new(OfflineTransport), config).ingest(&src).await.unwrap_err();
        assert_eq!(err, IngestError::TooLarge { limit: 10 });
    }

    #[test]
    fn source_spec_json_shape() {
        let src = SourceSpec::FileUpload {
            filename: "a.txt".into(),
            bytes: b"hi".to_vec(),
            declared_kind: Some("txt".into()),
        };
        let json = serde_json::to_value(&src).unwrap();
        assert_eq!(json["kind"], "file_upload");
        assert_eq!(json["bytes"], "aGk=");
        let back: SourceSpec = serde_json::from_value(json).unwrap();
        assert_eq!(back, src);
        let t: SourceSpec = serde_json::from_str(r#"{"kind":"transcript","text":"A: hi"}"#).unwrap();
        assert_eq!(
            t,
            SourceSpec::Transcript {
                text: "A: hi".into(),
                speaker_markers: true
            }
        );
    }

    #[test]
    fn urls_must_be_absolute_http() {
        for bad in ["ftp://x.org/a", "/relative", "not a url"] {
            let src = SourceSpec::WebLink { url: bad.into() };
            assert!(matches!(src.validate(), Err(IngestError::InvalidSource(_))), "{bad}");
        }
        assert!(SourceSpec::WebLink {
            url: "https://example.com/a".into()
        }
        .validate()
        .is_ok());
    }
}
