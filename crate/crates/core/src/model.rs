//! Shared data model: documents and their segments, the coding hierarchy
//! produced by the pipelines, and the analysis request/result pair.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::AgentRole;
use crate::method::{Method, OutputFormat};
use crate::pipeline::PipelineConfig;
use crate::segment::{segment_document, SegmentationPolicy};

/// Maximum length of a code label, in characters.
pub const MAX_LABEL_CHARS: usize = 80;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("input text is empty")]
    EmptyInput,
    #[error("invalid document: {0}")]
    InvalidDocument(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// Which input channel a document came through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    InlineText,
    FileUpload,
    WebLink,
    GithubLink,
    Transcript,
}

impl Modality {
    pub const ALL: [Modality; 5] = [
        Modality::InlineText,
        Modality::FileUpload,
        Modality::WebLink,
        Modality::GithubLink,
        Modality::Transcript,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::InlineText => "inline_text",
            Modality::FileUpload => "file_upload",
            Modality::WebLink => "web_link",
            Modality::GithubLink => "github_link",
            Modality::Transcript => "transcript",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where a document's text came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub modality: Modality,
    /// URL or filename, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
}

impl Provenance {
    pub fn new(modality: Modality, origin: Option<String>) -> Self {
        Self { modality, origin }
    }
}

/// An addressable unit of a document. `char_range` is a half-open range of
/// character (not byte) offsets into the owning document's text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub segment_id: usize,
    pub char_range: Range<usize>,
    pub text: String,
}

/// Normalized source text split into segments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub source: Provenance,
    pub text: String,
    pub segments: Vec<Segment>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Document {
    /// Normalizes `text`, segments it with `policy` and derives a
    /// content-addressed `doc_id`.
    pub fn from_text(
        text: &str,
        source: Provenance,
        policy: &SegmentationPolicy,
    ) -> Result<Self, ModelError> {
        let text = normalize_text(text);
        let segments = segment_document(&text, policy)?;
        Self::from_parts(text, segments, source)
    }

    /// Builds a document from already-computed segments, checking the
    /// segment invariants.
    pub fn from_parts(
        text: String,
        segments: Vec<Segment>,
        source: Provenance,
    ) -> Result<Self, ModelError> {
        let mut metadata = BTreeMap::new();
        metadata.insert("modality".to_string(), source.modality.to_string());
        if let Some(origin) = &source.origin {
            metadata.insert("origin".to_string(), origin.clone());
        }
        let doc = Document {
            doc_id: content_id(&text),
            source,
            text,
            segments,
            metadata,
        };
        doc.check_invariants()?;
        Ok(doc)
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    pub fn segment(&self, id: usize) -> Option<&Segment> {
        self.segments.get(id).filter(|s| s.segment_id == id)
    }

    pub fn has_segment(&self, id: usize) -> bool {
        self.segment(id).is_some()
    }

    /// Checks non-empty text, dense ordered ids, in-bounds non-overlapping
    /// ranges, slice equality, and that only whitespace lies between segments.
    pub fn check_invariants(&self) -> Result<(), ModelError> {
        if self.text.trim().is_empty() {
            return Err(ModelError::EmptyInput);
        }
        if self.segments.is_empty() {
            return Err(ModelError::InvalidDocument("document has no segments".into()));
        }
        let chars: Vec<char> = self.text.chars().collect();
        let mut cursor = 0usize;
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.segment_id != i {
                return Err(ModelError::InvalidDocument(format!(
                    "segment ids not dense: position {i} has id {}",
                    seg.segment_id
                )));
            }
            let Range { start, end } = seg.char_range.clone();
            if start < cursor || start >= end || end > chars.len() {
                return Err(ModelError::InvalidDocument(format!(
                    "segment {i} range {start}..{end} is out of order or out of bounds"
                )));
            }
            if chars[cursor..start].iter().any(|c| !c.is_whitespace()) {
                return Err(ModelError::InvalidDocument(format!(
                    "non-whitespace text between segments before segment {i}"
                )));
            }
            let slice: String = chars[start..end].iter().collect();
            if slice != seg.text {
                return Err(ModelError::InvalidDocument(format!(
                    "segment {i} text does not match its range"
                )));
            }
            cursor = end;
        }
        if chars[cursor..].iter().any(|c| !c.is_whitespace()) {
            return Err(ModelError::InvalidDocument(
                "trailing text not covered by any segment".into(),
            ));
        }
        Ok(())
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

/// Line-ending normalization applied to all ingested text: strips a leading
/// byte-order mark, converts CRLF/CR to LF and trims surrounding whitespace.
pub fn normalize_text(text: &str) -> String {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let text = text.replace("\r\n", "\n").replace('\r', "\n");
    text.trim().to_string()
}

fn content_id(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    format!("doc-{}", &hex::encode(digest)[..16])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Code {
    pub code_id: String,
    pub label: String,
    pub description: String,
    pub supporting_segments: Vec<usize>,
    pub supporting_excerpt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubCategory {
    pub subcat_id: String,
    pub label: String,
    pub member_codes: Vec<String>,
}

/// Members are subcategory ids for methods with a subcategory tier, code ids
/// otherwise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub cat_id: String,
    pub label: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Theme {
    pub theme_id: String,
    pub label: String,
    pub narrative: String,
    pub member_categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pattern {
    pub pattern_id: String,
    pub statement: String,
    pub evidence: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreConcept {
    pub label: String,
    pub theory_narrative: String,
    pub linked_categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscourseSections {
    pub key_patterns: Vec<Pattern>,
    pub language_analysis: String,
    pub broader_context: String,
}

/// Timing and size accounting for one pipeline stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub role: AgentRole,
    pub started_at: String,
    pub finished_at: String,
    /// Backend calls made for this stage, across chunks and retries.
    pub attempts: u32,
    pub input_chars: u64,
    pub output_chars: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub method: Method,
    pub doc_id: String,
    /// Title/modality/origin of the analyzed document, for report headers.
    #[serde(default)]
    pub doc_metadata: BTreeMap<String, String>,
    #[serde(default)]
    pub summary: Option<String>,
    #[serde(default)]
    pub codes: Vec<Code>,
    #[serde(default)]
    pub subcategories: Vec<SubCategory>,
    #[serde(default)]
    pub categories: Vec<Category>,
    #[serde(default)]
    pub themes: Vec<Theme>,
    #[serde(default)]
    pub patterns: Vec<Pattern>,
    #[serde(default)]
    pub core_concept: Option<CoreConcept>,
    #[serde(default)]
    pub discourse_sections: Option<DiscourseSections>,
    #[serde(default)]
    pub stage_trace: Vec<StageRecord>,
}

impl AnalysisResult {
    pub fn empty(method: Method, doc_id: impl Into<String>) -> Self {
        Self {
            method,
            doc_id: doc_id.into(),
            doc_metadata: BTreeMap::new(),
            summary: None,
            codes: Vec::new(),
            subcategories: Vec::new(),
            categories: Vec::new(),
            themes: Vec::new(),
            patterns: Vec::new(),
            core_concept: None,
            discourse_sections: None,
            stage_trace: Vec::new(),
        }
    }

    pub fn code(&self, id: &str) -> Option<&Code> {
        self.codes.iter().find(|c| c.code_id == id)
    }

    pub fn subcategory(&self, id: &str) -> Option<&SubCategory> {
        self.subcategories.iter().find(|s| s.subcat_id == id)
    }

    pub fn category(&self, id: &str) -> Option<&Category> {
        self.categories.iter().find(|c| c.cat_id == id)
    }
}

/// A unit of analysis work: which method to run over which document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisRequest {
    pub method: Method,
    pub document: Document,
    #[serde(default)]
    pub custom_instruction: Option<String>,
    pub output_format: OutputFormat,
    #[serde(default)]
    pub config: PipelineConfig,
}

impl AnalysisRequest {
    pub fn new(method: Method, document: Document) -> Self {
        Self {
            method,
            document,
            custom_instruction: None,
            output_format: OutputFormat::OutputArea,
            config: PipelineConfig::default(),
        }
    }

    pub fn with_instruction(mut self, instruction: impl Into<String>) -> Self {
        self.custom_instruction = Some(instruction.into());
        self
    }

    pub fn with_format(mut self, format: OutputFormat) -> Self {
        self.output_format = format;
        self
    }

    pub fn with_config(mut self, config: PipelineConfig) -> Self {
        self.config = config;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if let Some(instruction) = &self.custom_instruction {
            if instruction.trim().is_empty() {
                return Err(ModelError::InvalidRequest(
                    "custom instruction must not be empty when present".into(),
                ));
            }
        }
        self.document.check_invariants()?;
        self.config
            .validate()
            .map_err(|e| ModelError::InvalidRequest(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inline() -> Provenance {
        Provenance::new(Modality::InlineText, None)
    }

    #[test]
    fn from_text_normalizes_and_segments() {
        let doc = Document::from_text(
            "\u{feff}  Para one.\r\n\r\nPara two.\n",
            inline(),
            &SegmentationPolicy::default(),
        )
        .unwrap();
        assert_eq!(doc.text, "Para one.\n\nPara two.");
        assert_eq!(doc.segments.len(), 2);
        assert!(doc.doc_id.starts_with("doc-"));
        assert_eq!(doc.metadata["modality"], "inline_text");
    }

    #[test]
    fn doc_id_is_content_addressed() {
        let policy = SegmentationPolicy::default();
        let a = Document::from_text("same text", inline(), &policy).unwrap();
        let b = Document::from_text("same text", inline(), &policy).unwrap();
        let c = Document::from_text("other text", inline(), &policy).unwrap();
        assert_eq!(a.doc_id, b.doc_id);
        assert_ne!(a.doc_id, c.doc_id);
    }

    #[test]
    fn invariants_reject_bad_segments() {
        let seg = Segment {
            segment_id: 0,
            char_range: 0..3,
            text: "abd".into(),
        };
        let err = Document::from_parts("abc".into(), vec![seg], inline()).unwrap_err();
        assert!(matches!(err, ModelError::InvalidDocument(_)));

        let seg = Segment {
            segment_id: 0,
            char_range: 0..1,
            text: "a".into(),
        };
        let err = Document::from_parts("a b".into(), vec![seg], inline()).unwrap_err();
        assert!(matches!(err, ModelError::InvalidDocument(_)));
    }

    #[test]
    fn blank_instruction_is_rejected() {
        let doc = Document::from_text("x", inline(), &SegmentationPolicy::default()).unwrap();
        let req = AnalysisRequest::new(Method::Thematic, doc).with_instruction("  ");
        assert!(req.validate().is_err());
    }
}
