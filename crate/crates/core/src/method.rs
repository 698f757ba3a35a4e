//! Analysis methods, output formats and the per-method result shape.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The five supported qualitative analysis methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Thematic,
    Narrative,
    Content,
    Discourse,
    GroundedTheory,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Thematic,
        Method::Narrative,
        Method::Content,
        Method::Discourse,
        Method::GroundedTheory,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Thematic => "thematic",
            Method::Narrative => "narrative",
            Method::Content => "content",
            Method::Discourse => "discourse",
            Method::GroundedTheory => "grounded_theory",
        }
    }

    /// Human-readable name used in prompts and reports.
    pub fn title(self) -> &'static str {
        match self {
            Method::Thematic => "thematic analysis",
            Method::Narrative => "narrative analysis",
            Method::Content => "content analysis",
            Method::Discourse => "discourse analysis",
            Method::GroundedTheory => "grounded theory",
        }
    }

    /// Tiers of an [`AnalysisResult`](crate::model::AnalysisResult) that this
    /// method populates, in report order.
    pub fn result_shape(self) -> &'static [Tier] {
        match self {
            Method::Thematic => &[
                Tier::Summary,
                Tier::Codes,
                Tier::Subcategories,
                Tier::Categories,
                Tier::Themes,
            ],
            Method::Content => &[
                Tier::Summary,
                Tier::Codes,
                Tier::Categories,
                Tier::Themes,
                Tier::Patterns,
            ],
            Method::Narrative => &[
                Tier::Summary,
                Tier::Codes,
                Tier::Subcategories,
                Tier::Categories,
            ],
            Method::Discourse => &[Tier::DiscourseSections],
            Method::GroundedTheory => &[
                Tier::Codes,
                Tier::Categories,
                Tier::Patterns,
                Tier::Themes,
                Tier::CoreConcept,
            ],
        }
    }

    pub fn has_tier(self, tier: Tier) -> bool {
        self.result_shape().contains(&tier)
    }

    /// Whether categories group subcategories (true) or codes directly.
    pub fn categories_group_subcategories(self) -> bool {
        self.has_tier(Tier::Subcategories)
    }

    pub fn valid_names() -> String {
        Method::ALL
            .iter()
            .map(|m| m.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown method '{given}', expected one of: {}", Method::valid_names())]
pub struct UnknownMethod {
    pub given: String,
}

impl FromStr for Method {
    type Err = UnknownMethod;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .trim()
            .chars()
            .filter(|c| !matches!(c, '_' | '-' | ' '))
            .flat_map(char::to_lowercase)
            .collect();
        match key.as_str() {
            "thematic" | "thematicanalysis" => Ok(Method::Thematic),
            "narrative" | "narrativeanalysis" => Ok(Method::Narrative),
            "content" | "contentanalysis" => Ok(Method::Content),
            "discourse" | "discourseanalysis" => Ok(Method::Discourse),
            "groundedtheory" | "grounded" => Ok(Method::GroundedTheory),
            _ => Err(UnknownMethod {
                given: s.to_string(),
            }),
        }
    }
}

/// One populated layer of an analysis result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Summary,
    Codes,
    Subcategories,
    Categories,
    Themes,
    Patterns,
    CoreConcept,
    DiscourseSections,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Summary => "summary",
            Tier::Codes => "codes",
            Tier::Subcategories => "subcategories",
            Tier::Categories => "categories",
            Tier::Themes => "themes",
            Tier::Patterns => "patterns",
            Tier::CoreConcept => "core_concept",
            Tier::DiscourseSections => "discourse_sections",
        }
    }
}

/// Export formats for a finished analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    OutputArea,
    DocReport,
}

impl OutputFormat {
    pub const ALL: [OutputFormat; 3] = [
        OutputFormat::Csv,
        OutputFormat::OutputArea,
        OutputFormat::DocReport,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::OutputArea => "output_area",
            OutputFormat::DocReport => "doc_report",
        }
    }

    pub fn content_type(self) -> &'static str {
        match self {
            OutputFormat::Csv => "text/csv; charset=utf-8",
            OutputFormat::OutputArea => "application/json",
            OutputFormat::DocReport => "text/markdown; charset=utf-8",
        }
    }

    pub fn file_extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::OutputArea => "json",
            OutputFormat::DocReport => "md",
        }
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unsupported output format '{given}', expected csv, json or report")]
pub struct UnsupportedFormat {
    pub given: String,
}

impl FromStr for OutputFormat {
    type Err = UnsupportedFormat;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" | "output_area" | "outputarea" => Ok(OutputFormat::OutputArea),
            "report" | "doc" | "doc_report" | "docreport" | "md" | "markdown" => {
                Ok(OutputFormat::DocReport)
            }
            _ => Err(UnsupportedFormat {
                given: s.to_string(),
            }),
        }
    }
}
