use super::html::strip_html;
use super::{check_http_url, now_rfc3339, send, FetchConfig, IngestError};
use crate::model::{Document, Modality, Provenance};
use crate::segment::SegmentationPolicy;
use crate::transport::Transport;

/// Fetches one page and keeps its visible text. Plain-text responses are
/// used as they are.
pub async fn fetch_web(
    url: &str,
    config: &FetchConfig,
    transport: &dyn Transport,
    policy: &SegmentationPolicy,
) -> Result<Document, IngestError> {
    check_http_url(url)?;
    let response = send(transport, config.get(url).header("accept", "text/html, text/plain;q=0.9"), config).await?;
    if !response.is_success() {
        return Err(IngestError::FetchFailed(format!("{url}: HTTP {}", response.status)));
    }
    let body = String::from_utf8_lossy(&response.body);
    let content_type = response.header("content-type").unwrap_or("text/html").to_ascii_lowercase();
    let (text, title) = if content_type.starts_with("text/plain") {
        (body.trim().to_string(), None)
    } else {
        strip_html(&body)
    };
    if text.trim().is_empty() {
        return Err(IngestError::EmptyAfterStrip);
    }
    let mut doc = Document::from_text(&text, Provenance::new(Modality::WebLink, Some(url.to_string())), policy)?
        .with_metadata("fetched_at", now_rfc3339());
    if let Some(title) = title {
        doc = doc.with_metadata("title", title);
    }
    Ok(doc)
}
