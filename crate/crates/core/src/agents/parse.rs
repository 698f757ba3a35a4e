use serde::de::DeserializeOwned;
use serde_json::Value;

use super::payload::*;
use super::repair::repair_json;
use super::{AgentError, AgentRole};
use crate::model::MAX_LABEL_CHARS;

/// Returns the body of the first fenced JSON block in `raw`.
///
/// A fence tagged `json` wins over earlier untagged fences; an untagged fence
/// counts only if its body starts with `{` or `[`. An unterminated fence runs
/// to the end of input. Without any fence, a reply that is itself a bare JSON
/// object is accepted.
pub fn extract_json_block(raw: &str) -> Option<&str> {
    let mut untagged = None;
    let mut rest = raw;
    let mut offset = 0;
    while let Some(pos) = rest.find("```") {
        let open = offset + pos;
        let after = open + 3;
        let line_end = raw[after..].find('\n').map_or(raw.len(), |p| after + p);
        let tag = raw[after..line_end].trim();
        let body_start = (line_end + 1).min(raw.len());
        let (body_end, next) = match raw[body_start..].find("```") {
            Some(p) => (body_start + p, body_start + p + 3),
            None => (raw.len(), raw.len()),
        };
        let body = raw[body_start..body_end].trim();
        if tag.eq_ignore_ascii_case("json") {
            return Some(body);
        }
        if untagged.is_none() && tag.is_empty() && (body.starts_with('{') || body.starts_with('[')) {
            untagged = Some(body);
        }
        if next >= raw.len() {
            break;
        }
        offset = next;
        rest = &raw[next..];
    }
    if untagged.is_some() {
        return untagged;
    }
    let trimmed = raw.trim();
    trimmed.starts_with('{').then_some(trimmed)
}

/// Parses a raw completion for `role` into that role's output payload.
pub fn parse_agent_output(role: AgentRole, raw: &str) -> Result<StagePayload, AgentError> {
    let unparseable = |reason: String| AgentError::AgentOutputUnparseable {
        role,
        reason,
        raw: raw.to_string(),
    };
    let block = extract_json_block(raw).ok_or_else(|| unparseable("no JSON block found".into()))?;
    let value: Value = match serde_json::from_str(block) {
        Ok(v) => v,
        Err(first) => serde_json::from_str(&repair_json(block))
            .map_err(|_| unparseable(format!("invalid JSON after repair: {first}")))?,
    };
    let violation = |reason: String| AgentError::SchemaViolation {
        role,
        reason,
        raw: raw.to_string(),
    };
    if !value.is_object() {
        return Err(violation("top-level value must be an object".into()));
    }

    use super::PayloadKind as K;
    let payload = match role.output_kind() {
        K::SummaryText => {
            let mut p: SummaryText = decode(value).map_err(violation)?;
            p.summary = p.summary.trim().to_string();
            if p.summary.is_empty() {
                return Err(violation("summary must not be empty".into()));
            }
            StagePayload::SummaryText(p)
        }
        K::CodeSet => {
            let mut p: CodeSet = decode(value).map_err(violation)?;
            for code in &mut p.codes {
                code.label = clean_label(&code.label);
                if code.label.is_empty() {
                    return Err(violation("code label must not be empty".into()));
                }
                if code.segments.is_empty() {
                    return Err(violation(format!("code '{}' cites no segments", code.label)));
                }
            }
            StagePayload::CodeSet(p)
        }
        K::GroupedCodes => {
            let mut p: GroupedCodes = decode(value).map_err(violation)?;
            check_groups(&mut p.subcategories).map_err(violation)?;
            StagePayload::GroupedCodes(p)
        }
        K::CategorySet => {
            let mut p: CategorySet = decode(value).map_err(violation)?;
            check_groups(&mut p.categories).map_err(violation)?;
            StagePayload::CategorySet(p)
        }
        K::ThemeSet => {
            let mut p: ThemeSet = decode(value).map_err(violation)?;
            check_themes(&mut p.themes).map_err(violation)?;
            StagePayload::ThemeSet(p)
        }
        K::PatternSet => {
            let mut p: PatternSet = decode(value).map_err(violation)?;
            for pattern in &mut p.patterns {
                pattern.statement = pattern.statement.trim().to_string();
                if pattern.statement.is_empty() {
                    return Err(violation("pattern statement must not be empty".into()));
                }
                if pattern.evidence.is_empty() {
                    return Err(violation(format!(
                        "pattern '{}' cites no evidence",
                        pattern.statement
                    )));
                }
            }
            check_groups(&mut p.categories).map_err(violation)?;
            check_themes(&mut p.themes).map_err(violation)?;
            StagePayload::PatternSet(p)
        }
        K::DiscourseSections => {
            let mut p: DiscourseSectionsPayload = decode(value).map_err(violation)?;
            let (field, name) = match role {
                AgentRole::LanguageAnalyzer => (&mut p.language_analysis, "language_analysis"),
                _ => (&mut p.broader_context, "broader_context"),
            };
            match field.as_deref().map(str::trim) {
                Some(text) if !text.is_empty() => *field = Some(text.to_string()),
                _ => return Err(violation(format!("{name} must be a non-empty string"))),
            }
            StagePayload::DiscourseSections(p)
        }
        K::CoreConcept => {
            let mut p: CoreConceptPayload = decode(value).map_err(violation)?;
            if let Some(core) = &mut p.core_concept {
                core.label = clean_label(&core.label);
                if core.label.is_empty() {
                    return Err(violation("core concept label must not be empty".into()));
                }
                if core.categories.is_empty() {
                    return Err(violation("core concept links no categories".into()));
                }
            }
            StagePayload::CoreConcept(p)
        }
        K::RawText => unreachable!("no role produces raw text"),
    };
    Ok(payload)
}

fn decode<T: DeserializeOwned>(value: Value) -> Result<T, String> {
    serde_json::from_value(value).map_err(|e| e.to_string())
}

/// Collapses whitespace (so labels never contain line breaks) and truncates
/// to the label length limit.
pub(crate) fn clean_label(label: &str) -> String {
    let collapsed = label.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.chars().take(MAX_LABEL_CHARS).collect::<String>().trim_end().to_string()
}

fn check_groups(groups: &mut [GroupItem]) -> Result<(), String> {
    for group in groups {
        group.label = clean_label(&group.label);
        if group.label.is_empty() {
            return Err("group label must not be empty".into());
        }
        if group.members.is_empty() {
            return Err(format!("group '{}' has no members", group.label));
        }
    }
    Ok(())
}

fn check_themes(themes: &mut [ThemeItem]) -> Result<(), String> {
    for theme in themes {
        theme.label = clean_label(&theme.label);
        if theme.label.is_empty() {
            return Err("theme label must not be empty".into());
        }
        if theme.categories.is_empty() {
            return Err(format!("theme '{}' links no categories", theme.label));
        }
    }
    Ok(())
}
