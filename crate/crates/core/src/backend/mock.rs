//! Deterministic rule-based stand-in for a language model.
//!
//! The mock reads the same prompt a real model would see: the fenced JSON
//! input block and the `«[S<id>]»`-annotated source segments. Its rules:
//!
//! * Summarizing roles: first sentence of each source segment, at most five,
//!   joined by spaces; all input segments are retained.
//! * Coding roles: the `k = min(10, distinct)` most frequent non-stopword
//!   tokens (frequency descending, then lexicographic), each supported by the
//!   first segment containing it. A token is a run of alphanumeric
//!   characters, lower-cased, at least two characters long and containing a
//!   letter.
//! * CodeReviewer: echoes the codes, dropping case-insensitive duplicates.
//! * Grouping roles: consecutive groups of three in input order, labelled
//!   with the first member's label plus `-group`.
//! * All other roles: one item stating `mock <Role>: <first 40 chars of
//!   input>`, with evidence the first segment id in the input. The input
//!   text is the segment text for raw input, otherwise the item labels (or
//!   pattern statements) joined by `, `. Roles that must link categories link
//!   every category named in the input and emit nothing when there are none.

use std::collections::{BTreeMap, HashSet};
use std::sync::OnceLock;

use async_trait::async_trait;
use regex::Regex;
use serde_json::{json, Value};

use super::{Backend, BackendError, CompletionRequest, CompletionResponse, FinishReason, Usage};
use crate::agents::{extract_json_block, AgentRole, RoleFamily, SEGMENTS_END, SEGMENTS_HEADER};
use crate::segment::{first_sentence, sentence_spans};

pub const STOPWORDS_VERSION: &str = "v1";
const STOPWORDS_V1: &str = include_str!("../../resources/stopwords-v1.txt");

const MAX_CODES: usize = 10;
const MAX_SUMMARY_SENTENCES: usize = 5;
const GROUP_SIZE: usize = 3;
const PREVIEW_CHARS: usize = 40;
const EXCERPT_CHARS: usize = 120;

pub fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS_V1
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

/// Lower-cased alphanumeric tokens of length two or more containing a letter.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2 && t.chars().any(char::is_alphabetic))
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

#[async_trait]
impl Backend for MockBackend {
    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        request.validate()?;
        Ok(mock_complete(request))
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

struct MockInput {
    segments: Vec<(usize, String)>,
    body: Option<Value>,
}

impl MockInput {
    fn parse(user_content: &str) -> Self {
        static MARKER: OnceLock<Regex> = OnceLock::new();
        let marker = MARKER.get_or_init(|| Regex::new(r"«\[S(\d+)\]» ?").unwrap());

        let mut segments = Vec::new();
        if let Some(start) = user_content.find(SEGMENTS_HEADER) {
            let section = &user_content[start + SEGMENTS_HEADER.len()..];
            let section = section.find(SEGMENTS_END).map_or(section, |end| &section[..end]);
            let marks: Vec<_> = marker.captures_iter(section).collect();
            for (i, cap) in marks.iter().enumerate() {
                let whole = cap.get(0).unwrap();
                let end = marks.get(i + 1).map_or(section.len(), |n| n.get(0).unwrap().start());
                if let Ok(id) = cap[1].parse::<usize>() {
                    segments.push((id, section[whole.end()..end].trim().to_string()));
                }
            }
        }
        let body = extract_json_block(user_content).and_then(|b| serde_json::from_str(b).ok());
        Self { segments, body }
    }

    fn first_segment(&self) -> Option<usize> {
        self.segments.first().map(|(id, _)| *id)
    }

    fn array(&self, key: &str) -> Vec<Value> {
        self.body
            .as_ref()
            .and_then(|b| b.get(key))
            .and_then(Value::as_array)
            .cloned()
            .unwrap_or_default()
    }

    fn labels(&self, key: &str) -> Vec<String> {
        self.array(key)
            .iter()
            .filter_map(|v| v.get("label").and_then(Value::as_str).map(str::to_string))
            .collect()
    }

    /// Category labels named anywhere in the input, in first-seen order.
    fn category_labels(&self) -> Vec<String> {
        let mut out: Vec<String> = self.labels("categories");
        for key in ["patterns", "themes"] {
            for item in self.array(key) {
                for c in item.get("categories").and_then(Value::as_array).into_iter().flatten() {
                    if let Some(c) = c.as_str() {
                        if !out.iter().any(|o| o == c) {
                            out.push(c.to_string());
                        }
                    }
                }
            }
        }
        out
    }

    fn preview(&self) -> String {
        let text = match &self.body {
            None => self
                .segments
                .iter()
                .map(|(_, t)| t.as_str())
                .collect::<Vec<_>>()
                .join(" "),
            Some(_) => ["codes", "subcategories", "categories", "patterns", "themes"]
                .iter()
                .map(|key| self.array(key))
                .find(|items| !items.is_empty())
                .unwrap_or_default()
                .iter()
                .filter_map(|v| {
                    v.get("label")
                        .or_else(|| v.get("statement"))
                        .and_then(Value::as_str)
                })
                .collect::<Vec<_>>()
                .join(", "),
        };
        let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
        collapsed.chars().take(PREVIEW_CHARS).collect::<String>().trim_end().to_string()
    }
}

/// Answers `request` with the fixed extractive rules; a pure function of
/// the role and user content.
pub fn mock_complete(request: &CompletionRequest) -> CompletionResponse {
    let input = MockInput::parse(&request.user_content);
    let role = request.role;
    let payload = match role.family() {
        RoleFamily::Summarizing => summarize(&input),
        RoleFamily::Coding => json!({ "codes": code(&input) }),
        RoleFamily::Reviewing => review(&input),
        RoleFamily::Grouping => {
            let (items, key) = match role {
                AgentRole::SubCategorizer => (input.labels("codes"), "subcategories"),
                AgentRole::Categorizer => (input.labels("subcategories"), "categories"),
                _ => (input.labels("codes"), "categories"),
            };
            json!({ key: group(&items) })
        }
        RoleFamily::Synthesizing => synthesize(role, &input),
    };
    let text = format!(
        "Mock {role} output.\n\n```json\n{}\n```\n",
        serde_json::to_string_pretty(&payload).expect("json value serializes")
    );
    CompletionResponse {
        usage: Usage {
            input_chars: request.input_chars(),
            output_chars: text.chars().count(),
        },
        text,
        finish_reason: FinishReason::Complete,
    }
}

fn summarize(input: &MockInput) -> Value {
    let sentences: Vec<&str> = input
        .segments
        .iter()
        .map(|(_, t)| first_sentence(t))
        .filter(|s| !s.is_empty())
        .take(MAX_SUMMARY_SENTENCES)
        .collect();
    let retained: Vec<usize> = input.segments.iter().map(|(id, _)| *id).collect();
    json!({ "summary": sentences.join(" "), "retained_segments": retained })
}

fn code(input: &MockInput) -> Vec<Value> {
    let stop = stopwords();
    let mut freq: BTreeMap<String, usize> = BTreeMap::new();
    let mut first_seen: BTreeMap<String, usize> = BTreeMap::new();
    for (pos, (_, text)) in input.segments.iter().enumerate() {
        for token in tokenize(text) {
            if stop.contains(token.as_str()) {
                continue;
            }
            *freq.entry(token.clone()).or_default() += 1;
            first_seen.entry(token).or_insert(pos);
        }
    }
    let mut ranked: Vec<(String, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
        .into_iter()
        .take(MAX_CODES)
        .map(|(token, count)| {
            let (seg_id, text) = &input.segments[first_seen[&token]];
            json!({
                "label": token,
                "description": format!("term '{token}' occurs {count} time(s)"),
                "segments": [seg_id],
                "excerpt": excerpt(text, &token),
            })
        })
        .collect()
}

/// The first sentence of `text` containing `token`, capped in length.
fn excerpt(text: &str, token: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let sentence = sentence_spans(&chars, 0..chars.len())
        .into_iter()
        .map(|r| chars[r].iter().collect::<String>())
        .find(|s| tokenize(s).iter().any(|t| t == token))
        .unwrap_or_else(|| text.to_string());
    sentence.chars().take(EXCERPT_CHARS).collect()
}

fn review(input: &MockInput) -> Value {
    let mut seen = HashSet::new();
    let codes: Vec<Value> = input
        .array("codes")
        .into_iter()
        .filter(|c| {
            let label = c.get("label").and_then(Value::as_str).unwrap_or("");
            seen.insert(label.to_lowercase())
        })
        .collect();
    json!({ "codes": codes })
}

fn group(items: &[String]) -> Vec<Value> {
    items
        .chunks(GROUP_SIZE)
        .map(|chunk| json!({ "label": format!("{}-group", chunk[0]), "members": chunk }))
        .collect()
}

fn synthesize(role: AgentRole, input: &MockInput) -> Value {
    let statement = format!("mock {role}: {}", input.preview());
    let first = input.first_segment();
    let one_pattern = |categories: &[String]| -> Vec<Value> {
        first
            .map(|id| {
                let mut p = json!({ "statement": statement, "evidence": [id] });
                if !categories.is_empty() {
                    p["categories"] = json!(categories);
                }
                vec![p]
            })
            .unwrap_or_default()
    };
    let one_theme = |categories: &[String]| -> Vec<Value> {
        if categories.is_empty() {
            Vec::new()
        } else {
            vec![json!({ "label": statement, "narrative": statement, "categories": categories })]
        }
    };
    let evidence: Vec<usize> = first.into_iter().collect();
    match role {
        AgentRole::ThemeSynthesizer | AgentRole::GroundedThemeAgent => {
            json!({ "themes": one_theme(&input.category_labels()) })
        }
        AgentRole::PatternExtractor => {
            let categories = group(&input.labels("codes"));
            let labels: Vec<String> = categories
                .iter()
                .map(|c| c["label"].as_str().unwrap_or_default().to_string())
                .collect();
            json!({
                "patterns": one_pattern(&[]),
                "categories": categories,
                "themes": one_theme(&labels),
            })
        }
        AgentRole::KeyPatternIdentifier => json!({ "patterns": one_pattern(&[]) }),
        AgentRole::GroundedPatternAgent => json!({ "patterns": one_pattern(&input.category_labels()) }),
        AgentRole::LanguageAnalyzer => json!({ "language_analysis": statement, "evidence": evidence }),
        AgentRole::ContextInterpreter => json!({ "broader_context": statement, "evidence": evidence }),
        AgentRole::CoreCoder => {
            let categories = input.category_labels();
            let core = (!categories.is_empty()).then(|| {
                json!({ "label": statement, "theory_narrative": statement, "categories": categories })
            });
            json!({ "core_concept": core })
        }
        other => unreachable!("{other} is not a synthesizing role"),
    }
}
