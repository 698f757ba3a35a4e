//! Typed hand-off artifacts passed between agents.
//!
//! Structured payloads reference source text by segment id. The `sources`
//! field of each payload holds the segment texts shown to the next agent; it
//! is filled by the orchestrator and never parsed from model output.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    RawText,
    SummaryText,
    CodeSet,
    GroupedCodes,
    CategorySet,
    ThemeSet,
    PatternSet,
    DiscourseSections,
    CoreConcept,
}

impl PayloadKind {
    pub const ALL: [PayloadKind; 9] = [
        PayloadKind::RawText,
        PayloadKind::SummaryText,
        PayloadKind::CodeSet,
        PayloadKind::GroupedCodes,
        PayloadKind::CategorySet,
        PayloadKind::ThemeSet,
        PayloadKind::PatternSet,
        PayloadKind::DiscourseSections,
        PayloadKind::CoreConcept,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PayloadKind::RawText => "raw_text",
            PayloadKind::SummaryText => "summary_text",
            PayloadKind::CodeSet => "code_set",
            PayloadKind::GroupedCodes => "grouped_codes",
            PayloadKind::CategorySet => "category_set",
            PayloadKind::ThemeSet => "theme_set",
            PayloadKind::PatternSet => "pattern_set",
            PayloadKind::DiscourseSections => "discourse_sections",
            PayloadKind::CoreConcept => "core_concept",
        }
    }
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentText {
    pub id: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RawText {
    pub segments: Vec<SegmentText>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SummaryText {
    pub summary: String,
    /// Segments kept after condensing; empty means all input segments.
    #[serde(default)]
    pub retained_segments: Vec<usize>,
    #[serde(skip)]
    pub sources: Vec<SegmentText>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeItem {
    pub label: String,
    #[serde(default)]
    pub description: String,
    pub segments: Vec<usize>,
    #[serde(default)]
    pub excerpt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CodeSet {
    pub codes: Vec<CodeItem>,
    #[serde(skip)]
    pub sources: Vec<SegmentText>,
}

/// A named group of member labels (codes or subcategories).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupItem {
    pub label: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroupedCodes {
    pub subcategories: Vec<GroupItem>,
    #[serde(skip)]
    pub sources: Vec<SegmentText>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CategorySet {
    pub categories: Vec<GroupItem>,
    #[serde(skip)]
    pub sources: Vec<SegmentText>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThemeItem {
    pub label: String,
    #[serde(default)]
    pub narrative: String,
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ThemeSet {
    pub themes: Vec<ThemeItem>,
    #[serde(skip)]
    pub sources: Vec<SegmentText>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternItem {
    pub statement: String,
    pub evidence: Vec<usize>,
    /// Category labels the pattern relates to (grounded theory only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

/// Patterns, optionally with the categories and themes extracted alongside
/// them (content analysis produces all three in one stage).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PatternSet {
    pub patterns: Vec<PatternItem>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<GroupItem>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub themes: Vec<ThemeItem>,
    #[serde(skip)]
    pub sources: Vec<SegmentText>,
}

/// One discourse section; each discourse agent fills exactly one field.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DiscourseSectionsPayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language_analysis: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub broader_context: Option<String>,
    #[serde(default)]
    pub evidence: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreItem {
    pub label: String,
    pub theory_narrative: String,
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CoreConceptPayload {
    pub core_concept: Option<CoreItem>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StagePayload {
    RawText(RawText),
    SummaryText(SummaryText),
    CodeSet(CodeSet),
    GroupedCodes(GroupedCodes),
    CategorySet(CategorySet),
    ThemeSet(ThemeSet),
    PatternSet(PatternSet),
    DiscourseSections(DiscourseSectionsPayload),
    CoreConcept(CoreConceptPayload),
}

impl StagePayload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            StagePayload::RawText(_) => PayloadKind::RawText,
            StagePayload::SummaryText(_) => PayloadKind::SummaryText,
            StagePayload::CodeSet(_) => PayloadKind::CodeSet,
            StagePayload::GroupedCodes(_) => PayloadKind::GroupedCodes,
            StagePayload::CategorySet(_) => PayloadKind::CategorySet,
            StagePayload::ThemeSet(_) => PayloadKind::ThemeSet,
            StagePayload::PatternSet(_) => PayloadKind::PatternSet,
            StagePayload::DiscourseSections(_) => PayloadKind::DiscourseSections,
            StagePayload::CoreConcept(_) => PayloadKind::CoreConcept,
        }
    }

    /// Segment texts shown alongside the payload.
    pub fn sources(&self) -> &[SegmentText] {
        match self {
            StagePayload::RawText(p) => &p.segments,
            StagePayload::SummaryText(p) => &p.sources,
            StagePayload::CodeSet(p) => &p.sources,
            StagePayload::GroupedCodes(p) => &p.sources,
            StagePayload::CategorySet(p) => &p.sources,
            StagePayload::ThemeSet(p) => &p.sources,
            StagePayload::PatternSet(p) => &p.sources,
            StagePayload::DiscourseSections(_) | StagePayload::CoreConcept(_) => &[],
        }
    }

    pub fn set_sources(&mut self, sources: Vec<SegmentText>) {
        match self {
            StagePayload::RawText(p) => p.segments = sources,
            StagePayload::SummaryText(p) => p.sources = sources,
            StagePayload::CodeSet(p) => p.sources = sources,
            StagePayload::GroupedCodes(p) => p.sources = sources,
            StagePayload::CategorySet(p) => p.sources = sources,
            StagePayload::ThemeSet(p) => p.sources = sources,
            StagePayload::PatternSet(p) => p.sources = sources,
            StagePayload::DiscourseSections(_) | StagePayload::CoreConcept(_) => {}
        }
    }

    /// JSON body of a structured payload (sources excluded); `None` for raw
    /// text, which is rendered purely as annotated segments.
    pub fn body_json(&self) -> Option<serde_json::Value> {
        let value = match self {
            StagePayload::RawText(_) => return None,
            StagePayload::SummaryText(p) => serde_json::to_value(p),
            StagePayload::CodeSet(p) => serde_json::to_value(p),
            StagePayload::GroupedCodes(p) => serde_json::to_value(p),
            StagePayload::CategorySet(p) => serde_json::to_value(p),
            StagePayload::ThemeSet(p) => serde_json::to_value(p),
            StagePayload::PatternSet(p) => serde_json::to_value(p),
            StagePayload::DiscourseSections(p) => serde_json::to_value(p),
            StagePayload::CoreConcept(p) => serde_json::to_value(p),
        };
        Some(value.expect("payload types always serialize"))
    }

    /// Every segment id the payload refers to, ascending.
    pub fn referenced_segments(&self) -> BTreeSet<usize> {
        let mut ids: BTreeSet<usize> = self.sources().iter().map(|s| s.id).collect();
        match self {
            StagePayload::SummaryText(p) => ids.extend(&p.retained_segments),
            StagePayload::CodeSet(p) => {
                ids.extend(p.codes.iter().flat_map(|c| c.segments.iter().copied()))
            }
            StagePayload::PatternSet(p) => {
                ids.extend(p.patterns.iter().flat_map(|c| c.evidence.iter().copied()))
            }
            StagePayload::DiscourseSections(p) => ids.extend(&p.evidence),
            _ => {}
        }
        ids
    }
}
