//! Agent roles, their prompt contracts and the parsing of raw completions
//! into typed stage payloads.

mod parse;
mod payload;
mod prompt;
mod repair;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::method::Method;

pub use parse::{extract_json_block, parse_agent_output};
pub use payload::{
    CategorySet, CodeItem, CodeSet, CoreConceptPayload, CoreItem, DiscourseSectionsPayload,
    GroupItem, GroupedCodes, PatternItem, PatternSet, PayloadKind, RawText, SegmentText,
    StagePayload, SummaryText, ThemeItem, ThemeSet,
};
pub use prompt::{output_schema, render_prompt, PromptLibrary, PROMPT_VERSION, RenderedPrompt, TemplateError, SEGMENTS_END, SEGMENTS_HEADER};
pub use repair::repair_json;
pub(crate) use parse::clean_label;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum AgentError {
    #[error("{role} expects a {expected} payload, got {actual}")]
    PayloadKindMismatch {
        role: AgentRole,
        expected: PayloadKind,
        actual: PayloadKind,
    },
    #[error("{role} output is not parseable JSON: {reason}")]
    AgentOutputUnparseable {
        role: AgentRole,
        reason: String,
        raw: String,
    },
    #[error("{role} output does not match its schema: {reason}")]
    SchemaViolation {
        role: AgentRole,
        reason: String,
        raw: String,
    },
}

impl AgentError {
    /// Whether a fresh attempt at the same stage could succeed.
    pub fn is_retryable(&self) -> bool {
        !matches!(self, AgentError::PayloadKindMismatch { .. })
    }

    pub fn raw(&self) -> Option<&str> {
        match self {
            AgentError::AgentOutputUnparseable { raw, .. } | AgentError::SchemaViolation { raw, .. } => {
                Some(raw)
            }
            AgentError::PayloadKindMismatch { .. } => None,
        }
    }
}

/// A specialized single-turn agent. Each role consumes exactly one payload
/// kind and produces exactly one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgentRole {
    Analyzer,
    Coder,
    CodeReviewer,
    SubCategorizer,
    Categorizer,
    ThemeSynthesizer,
    Summarizer,
    PatternExtractor,
    KeyPatternIdentifier,
    LanguageAnalyzer,
    ContextInterpreter,
    GroundedCoder,
    GroundedCategorizer,
    GroundedPatternAgent,
    GroundedThemeAgent,
    CoreCoder,
}

/// How the deterministic mock treats a role.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoleFamily {
    Summarizing,
    Coding,
    Reviewing,
    Grouping,
    Synthesizing,
}

impl AgentRole {
    pub const ALL: [AgentRole; 16] = [
        AgentRole::Analyzer,
        AgentRole::Coder,
        AgentRole::CodeReviewer,
        AgentRole::SubCategorizer,
        AgentRole::Categorizer,
        AgentRole::ThemeSynthesizer,
        AgentRole::Summarizer,
        AgentRole::PatternExtractor,
        AgentRole::KeyPatternIdentifier,
        AgentRole::LanguageAnalyzer,
        AgentRole::ContextInterpreter,
        AgentRole::GroundedCoder,
        AgentRole::GroundedCategorizer,
        AgentRole::GroundedPatternAgent,
        AgentRole::GroundedThemeAgent,
        AgentRole::CoreCoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentRole::Analyzer => "Analyzer",
            AgentRole::Coder => "Coder",
            AgentRole::CodeReviewer => "CodeReviewer",
            AgentRole::SubCategorizer => "SubCategorizer",
            AgentRole::Categorizer => "Categorizer",
            AgentRole::ThemeSynthesizer => "ThemeSynthesizer",
            AgentRole::Summarizer => "Summarizer",
            AgentRole::PatternExtractor => "PatternExtractor",
            AgentRole::KeyPatternIdentifier => "KeyPatternIdentifier",
            AgentRole::LanguageAnalyzer => "LanguageAnalyzer",
            AgentRole::ContextInterpreter => "ContextInterpreter",
            AgentRole::GroundedCoder => "GroundedCoder",
            AgentRole::GroundedCategorizer => "GroundedCategorizer",
            AgentRole::GroundedPatternAgent => "GroundedPatternAgent",
            AgentRole::GroundedThemeAgent => "GroundedThemeAgent",
            AgentRole::CoreCoder => "CoreCoder",
        }
    }

    /// File stem of the role's prompt template.
    pub fn template_stem(self) -> String {
        let mut out = String::new();
        for (i, c) in self.name().chars().enumerate() {
            if c.is_ascii_uppercase() {
                if i > 0 {
                    out.push('_');
                }
                out.push(c.to_ascii_lowercase());
            } else {
                out.push(c);
            }
        }
        out
    }

    pub fn input_kind(self) -> PayloadKind {
        use AgentRole::*;
        match self {
            Analyzer | Summarizer | GroundedCoder | KeyPatternIdentifier => PayloadKind::RawText,
            Coder => PayloadKind::SummaryText,
            CodeReviewer | SubCategorizer | GroundedCategorizer | PatternExtractor => PayloadKind::CodeSet,
            Categorizer => PayloadKind::GroupedCodes,
            ThemeSynthesizer | GroundedPatternAgent => PayloadKind::CategorySet,
            LanguageAnalyzer | ContextInterpreter | GroundedThemeAgent => PayloadKind::PatternSet,
            CoreCoder => PayloadKind::ThemeSet,
        }
    }

    pub fn output_kind(self) -> PayloadKind {
        use AgentRole::*;
        match self {
            Analyzer | Summarizer => PayloadKind::SummaryText,
            Coder | CodeReviewer | GroundedCoder => PayloadKind::CodeSet,
            SubCategorizer => PayloadKind::GroupedCodes,
            Categorizer | GroundedCategorizer => PayloadKind::CategorySet,
            ThemeSynthesizer | GroundedThemeAgent => PayloadKind::ThemeSet,
            PatternExtractor | KeyPatternIdentifier | GroundedPatternAgent => PayloadKind::PatternSet,
            LanguageAnalyzer | ContextInterpreter => PayloadKind::DiscourseSections,
            CoreCoder => PayloadKind::CoreConcept,
        }
    }

    pub fn family(self) -> RoleFamily {
        use AgentRole::*;
        match self {
            Analyzer | Summarizer => RoleFamily::Summarizing,
            Coder | GroundedCoder => RoleFamily::Coding,
            CodeReviewer => RoleFamily::Reviewing,
            SubCategorizer | Categorizer | GroundedCategorizer => RoleFamily::Grouping,
            ThemeSynthesizer | PatternExtractor | KeyPatternIdentifier | LanguageAnalyzer
            | ContextInterpreter | GroundedPatternAgent | GroundedThemeAgent | CoreCoder => {
                RoleFamily::Synthesizing
            }
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentRole::ALL
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(s) || r.template_stem() == s)
            .ok_or_else(|| format!("unknown agent role '{s}'"))
    }
}

/// Canonical agent order for a method.
pub fn role_sequence(method: Method) -> &'static [AgentRole] {
    use AgentRole::*;
    match method {
        Method::Thematic => &[Analyzer, Coder, CodeReviewer, SubCategorizer, Categorizer, ThemeSynthesizer],
        Method::Narrative => &[Summarizer, Coder, SubCategorizer, Categorizer],
        Method::Content => &[Summarizer, Coder, PatternExtractor],
        Method::Discourse => &[KeyPatternIdentifier, LanguageAnalyzer, ContextInterpreter],
        Method::GroundedTheory => &[
            GroundedCoder,
            GroundedCategorizer,
            GroundedPatternAgent,
            GroundedThemeAgent,
            CoreCoder,
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use AgentRole::*;

    #[test]
    fn sequences_match_method_rosters() {
        assert_eq!(
            role_sequence(Method::Thematic),
            &[Analyzer, Coder, CodeReviewer, SubCategorizer, Categorizer, ThemeSynthesizer]
        );
        assert_eq!(
            role_sequence(Method::GroundedTheory),
            &[GroundedCoder, GroundedCategorizer, GroundedPatternAgent, GroundedThemeAgent, CoreCoder]
        );
        assert_eq!(role_sequence(Method::Content), &[Summarizer, Coder, PatternExtractor]);
        let lens: Vec<usize> = Method::ALL.iter().map(|m| role_sequence(*m).len()).collect();
        assert_eq!(lens, vec![6, 4, 3, 3, 5]);
    }

    #[test]
    fn template_stems() {
        assert_eq!(CodeReviewer.template_stem(), "code_reviewer");
        assert_eq!(KeyPatternIdentifier.template_stem(), "key_pattern_identifier");
        assert_eq!("code_reviewer".parse::<AgentRole>().unwrap(), CodeReviewer);
        assert_eq!("coder".parse::<AgentRole>().unwrap(), Coder);
    }

    #[test]
    fn every_role_is_used_by_some_method() {
        for role in AgentRole::ALL {
            assert!(
                Method::ALL.iter().any(|m| role_sequence(*m).contains(&role)),
                "{role} unused"
            );
        }
    }
}
