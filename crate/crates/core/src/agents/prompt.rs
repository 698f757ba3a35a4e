//! Prompt templates and rendering.
//!
//! Templates are plain text resources with `{name}` placeholders. The
//! built-in set is compiled in; [`PromptLibrary::from_dir`] loads overrides
//! at runtime. Substitution is single-pass, so placeholder-like text inside
//! inserted values is never expanded.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use super::payload::{PayloadKind, StagePayload};
use super::{AgentError, AgentRole};
use crate::method::Method;

pub const PROMPT_VERSION: &str = "v1";

/// Header line of the annotated source-segment section of a user prompt.
pub const SEGMENTS_HEADER: &str = "SOURCE SEGMENTS:";
/// Terminator of the source-segment section.
pub const SEGMENTS_END: &str = "END OF SEGMENTS";

const GOAL_OPEN: &str = "--- USER ANALYSIS GOAL ---";
const GOAL_CLOSE: &str = "--- END USER ANALYSIS GOAL ---";

const SYSTEM_PLACEHOLDERS: &[&str] = &["role", "method", "output_schema", "custom_instruction"];
const USER_PLACEHOLDERS: &[&str] = &["payload"];

macro_rules! builtin_prompts {
    ($($stem:literal),* $(,)?) => {
        &[$(($stem, include_str!(concat!("../../resources/prompts/v1/", $stem, ".txt")))),*]
    };
}

const BUILTIN_SYSTEM: &[(&str, &str)] = builtin_prompts!(
    "analyzer",
    "coder",
    "code_reviewer",
    "sub_categorizer",
    "categorizer",
    "theme_synthesizer",
    "summarizer",
    "pattern_extractor",
    "key_pattern_identifier",
    "language_analyzer",
    "context_interpreter",
    "grounded_coder",
    "grounded_categorizer",
    "grounded_pattern_agent",
    "grounded_theme_agent",
    "core_coder",
);
const BUILTIN_USER: &str = include_str!("../../resources/prompts/v1/user.txt");

const SCHEMAS: &[(PayloadKind, &str)] = &[
    (PayloadKind::RawText, include_str!("../../schemas/raw_text.schema.json")),
    (PayloadKind::SummaryText, include_str!("../../schemas/summary_text.schema.json")),
    (PayloadKind::CodeSet, include_str!("../../schemas/code_set.schema.json")),
    (PayloadKind::GroupedCodes, include_str!("../../schemas/grouped_codes.schema.json")),
    (PayloadKind::CategorySet, include_str!("../../schemas/category_set.schema.json")),
    (PayloadKind::ThemeSet, include_str!("../../schemas/theme_set.schema.json")),
    (PayloadKind::PatternSet, include_str!("../../schemas/pattern_set.schema.json")),
    (
        PayloadKind::DiscourseSections,
        include_str!("../../schemas/discourse_sections.schema.json"),
    ),
    (PayloadKind::CoreConcept, include_str!("../../schemas/core_concept.schema.json")),
];

/// Published JSON schema for a payload kind.
pub fn output_schema(kind: PayloadKind) -> &'static str {
    SCHEMAS
        .iter()
        .find(|(k, _)| *k == kind)
        .map(|(_, s)| *s)
        .expect("every payload kind has a schema")
}

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("template {name}: unknown placeholder {{{placeholder}}}")]
    UnknownPlaceholder { name: String, placeholder: String },
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone)]
struct Template {
    pieces: Vec<Piece>,
}

impl Template {
    fn parse(name: &str, source: &str, allowed: &[&str]) -> Result<Self, TemplateError> {
        let mut pieces = Vec::new();
        let mut literal = String::new();
        let mut rest = source;
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            let ident_len = after
                .find(|c: char| !(c.is_ascii_lowercase() || c == '_'))
                .unwrap_or(after.len());
            if ident_len > 0 && after[ident_len..].starts_with('}') {
                let ident = &after[..ident_len];
                if !allowed.contains(&ident) {
                    return Err(TemplateError::UnknownPlaceholder {
                        name: name.to_string(),
                        placeholder: ident.to_string(),
                    });
                }
                literal.push_str(&rest[..open]);
                if !literal.is_empty() {
                    pieces.push(Piece::Text(std::mem::take(&mut literal)));
                }
                pieces.push(Piece::Slot(ident.to_string()));
                rest = &after[ident_len + 1..];
            } else {
                literal.push_str(&rest[..=open]);
                rest = after;
            }
        }
        literal.push_str(rest);
        if !literal.is_empty() {
            pieces.push(Piece::Text(literal));
        }
        Ok(Self { pieces })
    }

    fn render(&self, values: &HashMap<&str, &str>) -> String {
        let mut out = String::new();
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(name) => out.push_str(values.get(name.as_str()).copied().unwrap_or("")),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system_instruction: String,
    pub user_content: String,
}

/// A complete set of system templates (one per role) plus the user scaffold.
#[derive(Debug, Clone)]
pub struct PromptLibrary {
    system: HashMap<AgentRole, Template>,
    user: Template,
}

impl PromptLibrary {
    pub fn builtin() -> &'static PromptLibrary {
        static LIB: OnceLock<PromptLibrary> = OnceLock::new();
        LIB.get_or_init(|| {
            let mut system = HashMap::new();
            for role in AgentRole::ALL {
                let stem = role.template_stem();
                let (_, source) = BUILTIN_SYSTEM
                    .iter()
                    .find(|(s, _)| *s == stem)
                    .expect("builtin template for every role");
                let template = Template::parse(&stem, source, SYSTEM_PLACEHOLDERS)
                    .expect("builtin templates are valid");
                system.insert(role, template);
            }
            let user = Template::parse("user", BUILTIN_USER, USER_PLACEHOLDERS)
                .expect("builtin user scaffold is valid");
            PromptLibrary { system, user }
        })
    }

    /// Loads `<role_stem>.txt` and `user.txt` from `dir`; files that are
    /// missing fall back to the built-in templates.
    pub fn from_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut lib = Self::builtin().clone();
        let read = |name: &str| -> Result<Option<String>, TemplateError> {
            let path = dir.join(format!("{name}.txt"));
            match std::fs::read_to_string(&path) {
                Ok(s) => Ok(Some(s)),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                Err(source) => Err(TemplateError::Io {
                    path: path.display().to_string(),
                    source,
                }),
            }
        };
        for role in AgentRole::ALL {
            let stem = role.template_stem();
            if let Some(src) = read(&stem)? {
                lib.system
                    .insert(role, Template::parse(&stem, &src, SYSTEM_PLACEHOLDERS)?);
            }
        }
        if let Some(src) = read("user")? {
            lib.user = Template::parse("user", &src, USER_PLACEHOLDERS)?;
        }
        Ok(lib)
    }

    pub fn render(
        &self,
        method: Method,
        role: AgentRole,
        payload: &StagePayload,
        custom_instruction: Option<&str>,
    ) -> Result<RenderedPrompt, AgentError> {
        if payload.kind() != role.input_kind() {
            return Err(AgentError::PayloadKindMismatch {
                role,
                expected: role.input_kind(),
                actual: payload.kind(),
            });
        }
        let goal = custom_instruction
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|g| format!("\n{GOAL_OPEN}\n{g}\n{GOAL_CLOSE}\n"))
            .unwrap_or_default();
        let values = HashMap::from([
            ("role", role.name()),
            ("method", method.title()),
            ("output_schema", output_schema(role.output_kind()).trim_end()),
            ("custom_instruction", goal.as_str()),
        ]);
        let system_instruction = self.system[&role].render(&values).trim_end().to_string();

        let body = render_payload(payload);
        let user_content = self.user.render(&HashMap::from([("payload", body.as_str())]));
        Ok(RenderedPrompt {
            system_instruction,
            user_content,
        })
    }
}

/// Renders `payload` with the built-in templates.
pub fn render_prompt(
    method: Method,
    role: AgentRole,
    payload: &StagePayload,
    custom_instruction: Option<&str>,
) -> Result<RenderedPrompt, AgentError> {
    PromptLibrary::builtin().render(method, role, payload, custom_instruction)
}

/// Structured payloads become a fenced JSON block; source text follows as
/// `«[S<id>]»`-annotated segments.
fn render_payload(payload: &StagePayload) -> String {
    let mut out = String::new();
    if let Some(body) = payload.body_json() {
        let json = serde_json::to_string_pretty(&body).expect("json value serializes");
        let _ = write!(out, "INPUT ({}):\n```json\n{json}\n```\n", payload.kind());
    }
    let sources = payload.sources();
    if !sources.is_empty() {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(SEGMENTS_HEADER);
        out.push('\n');
        for seg in sources {
            let _ = writeln!(out, "«[S{}]» {}", seg.id, seg.text);
        }
        out.push_str(SEGMENTS_END);
        out.push('\n');
    }
    out
}
