use super::pdf::extract_pdf_text;
use super::IngestError;

/// Kinds handled without an adapter.
pub const BUILTIN_KINDS: [&str; 4] = ["txt", "md", "pdf", "doc-text"];

/// Adapter slot for formats outside the built-in set (for example binary
/// word-processor files converted by an external tool).
pub trait TextExtractor: Send + Sync {
    fn extract(&self, bytes: &[u8]) -> Result<String, IngestError>;
}

/// Decodes an uploaded file of the declared kind into text.
pub fn extract_text(bytes: &[u8], declared_kind: &str) -> Result<String, IngestError> {
    match declared_kind.trim().to_ascii_lowercase().as_str() {
        "txt" | "md" | "doc-text" => decode_utf8(bytes),
        "pdf" => extract_pdf_text(bytes),
        other => Err(IngestError::UnsupportedFormat(other.to_string())),
    }
}

fn decode_utf8(bytes: &[u8]) -> Result<String, IngestError> {
    let bytes = bytes.strip_prefix(b"\xef\xbb\xbf").unwrap_or(bytes);
    String::from_utf8(bytes.to_vec()).map_err(|e| {
        IngestError::DecodeError(format!("invalid UTF-8 at byte {}", e.utf8_error().valid_up_to()))
    })
}
