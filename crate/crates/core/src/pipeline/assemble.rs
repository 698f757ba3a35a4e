use std::collections::{BTreeMap, HashMap, HashSet};

use crate::agents::{clean_label, CodeItem, CoreItem, GroupItem, PatternItem, ThemeItem};
use crate::method::{Method, Tier};
use crate::model::{
    AnalysisResult, Category, Code, CoreConcept, DiscourseSections, Document, Pattern, StageRecord,
    SubCategory, Theme,
};
use crate::segment::first_sentence;

const EXCERPT_CHARS: usize = 120;

/// Stage outputs gathered during a run, still keyed by label.
#[derive(Debug, Default)]
pub(crate) struct Collected {
    pub summary: Option<String>,
    pub codes: Vec<CodeItem>,
    pub subcategories: Vec<GroupItem>,
    pub categories: Vec<GroupItem>,
    pub themes: Vec<ThemeItem>,
    pub patterns: Vec<PatternItem>,
    pub core: Option<CoreItem>,
    pub language_analysis: Option<String>,
    pub broader_context: Option<String>,
}

pub(crate) fn label_key(label: &str) -> String {
    clean_label(label).to_lowercase()
}

/// Concatenation with case-insensitive label dedupe; the first occurrence wins.
pub(crate) fn dedupe_codes(codes: Vec<CodeItem>) -> Vec<CodeItem> {
    let mut seen = HashSet::new();
    codes.into_iter().filter(|c| seen.insert(label_key(&c.label))).collect()
}

pub(crate) fn dedupe_patterns(patterns: Vec<PatternItem>) -> Vec<PatternItem> {
    let mut seen = HashSet::new();
    patterns
        .into_iter()
        .filter(|p| seen.insert(p.statement.trim().to_lowercase()))
        .collect()
}

/// Every name in `members` must be one of `known`.
pub(crate) fn check_members(members: &[String], known: &[String], what: &str) -> Result<(), String> {
    let known: HashSet<String> = known.iter().map(|k| label_key(k)).collect();
    match members.iter().find(|m| !known.contains(&label_key(m))) {
        Some(m) => Err(format!("{what} references unknown '{m}'")),
        None => Ok(()),
    }
}

/// `groups` must assign every item of `items` to exactly one group, and
/// group labels must be distinct.
pub(crate) fn check_partition(groups: &[GroupItem], items: &[String], what: &str) -> Result<(), String> {
    let known: HashSet<String> = items.iter().map(|k| label_key(k)).collect();
    let mut assigned: HashMap<String, &str> = HashMap::new();
    let mut labels = HashSet::new();
    for group in groups {
        if !labels.insert(label_key(&group.label)) {
            return Err(format!("{what} label '{}' is used twice", group.label));
        }
        for member in &group.members {
            let key = label_key(member);
            if !known.contains(&key) {
                return Err(format!("{what} '{}' references unknown '{member}'", group.label));
            }
            if let Some(previous) = assigned.insert(key, &group.label) {
                return Err(format!(
                    "'{member}' is placed in both {what} '{previous}' and '{}'",
                    group.label
                ));
            }
        }
    }
    match items.iter().find(|i| !assigned.contains_key(&label_key(i))) {
        Some(item) => Err(format!("'{item}' is not placed in any {what}")),
        None => Ok(()),
    }
}

fn resolve(members: &[String], ids: &HashMap<String, String>) -> Vec<String> {
    members
        .iter()
        .filter_map(|m| ids.get(&label_key(m)).cloned())
        .collect()
}

fn id_map<'a>(labels: impl Iterator<Item = &'a str>, prefix: &str) -> HashMap<String, String> {
    labels
        .enumerate()
        .map(|(i, l)| (label_key(l), format!("{prefix}-{}", i + 1)))
        .collect()
}

fn excerpt_for(item: &CodeItem, doc: &Document) -> String {
    let text = if item.excerpt.trim().is_empty() {
        item.segments
            .first()
            .and_then(|id| doc.segment(*id))
            .map(|s| first_sentence(&s.text).to_string())
            .unwrap_or_default()
    } else {
        item.excerpt.trim().to_string()
    };
    text.chars().take(EXCERPT_CHARS).collect()
}

fn doc_metadata(doc: &Document) -> BTreeMap<String, String> {
    doc.metadata
        .iter()
        .filter(|(k, _)| matches!(k.as_str(), "title" | "modality" | "origin"))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

fn patterns(items: Vec<PatternItem>) -> Vec<Pattern> {
    items
        .into_iter()
        .enumerate()
        .map(|(i, p)| Pattern {
            pattern_id: format!("pattern-{}", i + 1),
            statement: p.statement,
            evidence: p.evidence,
        })
        .collect()
}

/// Replaces labels with sequential ids and keeps only the tiers the
/// method's result shape declares.
pub(crate) fn assemble(
    method: Method,
    doc: &Document,
    collected: Collected,
    stage_trace: Vec<StageRecord>,
) -> AnalysisResult {
    let mut result = AnalysisResult::empty(method, doc.doc_id.clone());
    result.doc_metadata = doc_metadata(doc);
    result.stage_trace = stage_trace;

    let code_ids = id_map(collected.codes.iter().map(|c| c.label.as_str()), "code");
    let sub_ids = id_map(collected.subcategories.iter().map(|c| c.label.as_str()), "sub");
    let cat_ids = id_map(collected.categories.iter().map(|c| c.label.as_str()), "cat");
    let category_members = if method.categories_group_subcategories() {
        &sub_ids
    } else {
        &code_ids
    };

    if method.has_tier(Tier::Summary) {
        result.summary = collected.summary;
    }
    if method.has_tier(Tier::Codes) {
        result.codes = collected
            .codes
            .iter()
            .enumerate()
            .map(|(i, c)| Code {
                code_id: format!("code-{}", i + 1),
                label: clean_label(&c.label),
                description: c.description.trim().to_string(),
                supporting_segments: c.segments.clone(),
                supporting_excerpt: excerpt_for(c, doc),
            })
            .collect();
    }
    if method.has_tier(Tier::Subcategories) {
        result.subcategories = collected
            .subcategories
            .iter()
            .enumerate()
            .map(|(i, g)| SubCategory {
                subcat_id: format!("sub-{}", i + 1),
                label: g.label.clone(),
                member_codes: resolve(&g.members, &code_ids),
            })
            .collect();
    }
    if method.has_tier(Tier::Categories) {
        result.categories = collected
            .categories
            .iter()
            .enumerate()
            .map(|(i, g)| Category {
                cat_id: format!("cat-{}", i + 1),
                label: g.label.clone(),
                members: resolve(&g.members, category_members),
            })
            .collect();
    }
    if method.has_tier(Tier::Themes) {
        result.themes = collected
            .themes
            .iter()
            .enumerate()
            .map(|(i, t)| Theme {
                theme_id: format!("theme-{}", i + 1),
                label: t.label.clone(),
                narrative: t.narrative.trim().to_string(),
                member_categories: resolve(&t.categories, &cat_ids),
            })
            .collect();
    }
    if method.has_tier(Tier::CoreConcept) {
        result.core_concept = collected.core.map(|c| CoreConcept {
            label: c.label,
            theory_narrative: c.theory_narrative.trim().to_string(),
            linked_categories: resolve(&c.categories, &cat_ids),
        });
    }
    if method.has_tier(Tier::DiscourseSections) {
        result.discourse_sections = Some(DiscourseSections {
            key_patterns: patterns(collected.patterns),
            language_analysis: collected.language_analysis.unwrap_or_default(),
            broader_context: collected.broader_context.unwrap_or_default(),
        });
    } else if method.has_tier(Tier::Patterns) {
        result.patterns = patterns(collected.patterns);
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(label: &str, seg: usize) -> CodeItem {
        CodeItem {
            label: label.into(),
            description: String::new(),
            segments: vec![seg],
            excerpt: String::new(),
        }
    }

    fn group(label: &str, members: &[&str]) -> GroupItem {
        GroupItem {
            label: label.into(),
            members: members.iter().map(|m| m.to_string()).collect(),
        }
    }

    #[test]
    fn dedupe_keeps_first_case_insensitively() {
        let merged = dedupe_codes(vec![code("Cat", 0), code("dog", 1), code("cat", 2)]);
        assert_eq!(merged, vec![code("Cat", 0), code("dog", 1)]);
    }

    #[test]
    fn dedupe_is_idempotent_on_self_merge() {
        let codes = vec![code("a", 0), code("b", 1)];
        let doubled: Vec<_> = codes.iter().chain(&codes).cloned().collect();
        assert_eq!(dedupe_codes(doubled), codes);
    }

    #[test]
    fn partition_rules() {
        let items = vec!["a".to_string(), "b".to_string()];
        assert!(check_partition(&[group("g", &["A", "b"])], &items, "group").is_ok());
        assert!(check_partition(&[group("g", &["a"])], &items, "group")
            .unwrap_err()
            .contains("not placed"));
        assert!(check_partition(&[group("g", &["a", "b"]), group("h", &["a"])], &items, "group")
            .unwrap_err()
            .contains("both"));
        assert!(check_partition(&[group("g", &["a", "b", "z"])], &items, "group")
            .unwrap_err()
            .contains("unknown"));
    }
}
