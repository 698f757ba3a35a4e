//! Structural checks of an [`AnalysisResult`] against its document and the
//! method's result shape.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::agents::role_sequence;
use crate::method::Tier;
use crate::model::{AnalysisResult, Document, MAX_LABEL_CHARS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViolationKind {
    DanglingReference,
    DuplicateMembership,
    UnassignedMember,
    TierNotAllowed,
    MissingTier,
    StageCountMismatch,
    InvalidItem,
    DocumentMismatch,
    EmptyCoding,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offending_id: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
    pub warnings: Vec<Violation>,
}

impl ValidationReport {
    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    /// One line per violation.
    pub fn summary(&self) -> String {
        self.violations
            .iter()
            .map(|v| match &v.offending_id {
                Some(id) => format!("{} ({id}): {}", v.kind, v.message),
                None => format!("{}: {}", v.kind, v.message),
            })
            .collect::<Vec<_>>()
            .join("; ")
    }
}

struct Checker<'a> {
    doc: &'a Document,
    violations: Vec<Violation>,
}

impl Checker<'_> {
    fn push(&mut self, kind: ViolationKind, id: Option<&str>, message: String) {
        self.violations.push(Violation {
            kind,
            offending_id: id.map(str::to_string),
            message,
        });
    }

    fn label(&mut self, id: &str, label: &str, what: &str) {
        if label.trim().is_empty() {
            self.push(ViolationKind::InvalidItem, Some(id), format!("{what} label is empty"));
        }
        if label.contains(['\n', '\r']) {
            self.push(ViolationKind::InvalidItem, Some(id), format!("{what} label contains a line break"));
        }
    }

    fn segments(&mut self, id: &str, segments: &[usize], what: &str) {
        if segments.is_empty() {
            self.push(ViolationKind::InvalidItem, Some(id), format!("{what} cites no segments"));
        }
        for seg in segments {
            if !self.doc.has_segment(*seg) {
                self.push(
                    ViolationKind::DanglingReference,
                    Some(id),
                    format!("{what} cites segment {seg}, which does not exist"),
                );
            }
        }
    }

    fn unique_ids<'b>(&mut self, ids: impl Iterator<Item = &'b str>, what: &str) -> HashSet<&'b str> {
        let mut seen = HashSet::new();
        for id in ids {
            if !seen.insert(id) {
                self.push(ViolationKind::InvalidItem, Some(id), format!("duplicate {what} id"));
            }
        }
        seen
    }

    /// Each of `groups` references members from `known`; with `partition`
    /// every known id must be used exactly once.
    fn membership(
        &mut self,
        groups: &[(&str, &[String])],
        known: &HashSet<&str>,
        what: &str,
        member_what: &str,
        partition: bool,
    ) {
        let mut owner: HashMap<&str, &str> = HashMap::new();
        for (id, members) in groups {
            if members.is_empty() {
                self.push(ViolationKind::InvalidItem, Some(id), format!("{what} has no members"));
            }
            for m in members.iter() {
                if !known.contains(m.as_str()) {
                    self.push(
                        ViolationKind::DanglingReference,
                        Some(id),
                        format!("{what} references unknown {member_what} '{m}'"),
                    );
                    continue;
                }
                if partition {
                    if let Some(first) = owner.insert(m.as_str(), id) {
                        self.push(
                            ViolationKind::DuplicateMembership,
                            Some(m),
                            format!("{member_what} belongs to both {first} and {id}"),
                        );
                    }
                }
            }
        }
        if partition && !groups.is_empty() {
            let mut unassigned: Vec<&&str> = known.iter().filter(|k| !owner.contains_key(**k)).collect();
            unassigned.sort();
            for id in unassigned {
                self.push(
                    ViolationKind::UnassignedMember,
                    Some(id),
                    format!("{member_what} is not in any {what}"),
                );
            }
        }
    }
}

/// Reports every broken reference, tier violation and stage-count mismatch.
pub fn validate_result(result: &AnalysisResult, document: &Document) -> ValidationReport {
    let method = result.method;
    let mut c = Checker {
        doc: document,
        violations: Vec::new(),
    };
    let mut warnings = Vec::new();

    if result.doc_id != document.doc_id {
        c.push(
            ViolationKind::DocumentMismatch,
            Some(&result.doc_id),
            format!("result is for {}, document is {}", result.doc_id, document.doc_id),
        );
    }
    let expected = role_sequence(method).len();
    if result.stage_trace.len() != expected {
        c.push(
            ViolationKind::StageCountMismatch,
            None,
            format!(
                "{method} expected {expected} stages, found {}",
                result.stage_trace.len()
            ),
        );
    }

    let populated = [
        (Tier::Summary, result.summary.as_deref().is_some_and(|s| !s.trim().is_empty())),
        (Tier::Codes, !result.codes.is_empty()),
        (Tier::Subcategories, !result.subcategories.is_empty()),
        (Tier::Categories, !result.categories.is_empty()),
        (Tier::Themes, !result.themes.is_empty()),
        (Tier::Patterns, !result.patterns.is_empty()),
        (Tier::CoreConcept, result.core_concept.is_some()),
        (Tier::DiscourseSections, result.discourse_sections.is_some()),
    ];
    let coding_empty = method.has_tier(Tier::Codes) && result.codes.is_empty();
    for (tier, present) in populated {
        let allowed = method.has_tier(tier);
        if present && !allowed {
            c.push(
                ViolationKind::TierNotAllowed,
                None,
                format!("{method} results have no {tier:?} tier"),
            );
        }
        // Tiers built on codes may stay empty when nothing was coded.
        let may_be_empty = coding_empty && !matches!(tier, Tier::Summary | Tier::DiscourseSections);
        if allowed && !present && !may_be_empty {
            c.push(ViolationKind::MissingTier, None, format!("{method} requires a non-empty {tier:?} tier"));
        }
    }
    if coding_empty {
        warnings.push(Violation {
            kind: ViolationKind::EmptyCoding,
            offending_id: None,
            message: "empty coding".into(),
        });
    }

    let code_ids = c.unique_ids(result.codes.iter().map(|x| x.code_id.as_str()), "code");
    for code in &result.codes {
        c.label(&code.code_id, &code.label, "code");
        if code.label.chars().count() > MAX_LABEL_CHARS {
            c.push(
                ViolationKind::InvalidItem,
                Some(&code.code_id),
                format!("code label longer than {MAX_LABEL_CHARS} characters"),
            );
        }
        c.segments(&code.code_id, &code.supporting_segments, "code");
    }

    let sub_ids = c.unique_ids(result.subcategories.iter().map(|x| x.subcat_id.as_str()), "subcategory");
    for s in &result.subcategories {
        c.label(&s.subcat_id, &s.label, "subcategory");
    }
    let groups: Vec<(&str, &[String])> = result
        .subcategories
        .iter()
        .map(|s| (s.subcat_id.as_str(), s.member_codes.as_slice()))
        .collect();
    c.membership(&groups, &code_ids, "subcategory", "code", true);

    let cat_ids = c.unique_ids(result.categories.iter().map(|x| x.cat_id.as_str()), "category");
    for cat in &result.categories {
        c.label(&cat.cat_id, &cat.label, "category");
    }
    let groups: Vec<(&str, &[String])> = result
        .categories
        .iter()
        .map(|x| (x.cat_id.as_str(), x.members.as_slice()))
        .collect();
    if method.categories_group_subcategories() {
        c.membership(&groups, &sub_ids, "category", "subcategory", true);
    } else {
        c.membership(&groups, &code_ids, "category", "code", true);
    }

    c.unique_ids(result.themes.iter().map(|x| x.theme_id.as_str()), "theme");
    for t in &result.themes {
        c.label(&t.theme_id, &t.label, "theme");
    }
    let groups: Vec<(&str, &[String])> = result
        .themes
        .iter()
        .map(|x| (x.theme_id.as_str(), x.member_categories.as_slice()))
        .collect();
    c.membership(&groups, &cat_ids, "theme", "category", false);

    c.unique_ids(result.patterns.iter().map(|x| x.pattern_id.as_str()), "pattern");
    for p in &result.patterns {
        c.segments(&p.pattern_id, &p.evidence, "pattern");
    }

    if let Some(core) = &result.core_concept {
        c.label("core_concept", &core.label, "core concept");
        let groups = [("core_concept", core.linked_categories.as_slice())];
        c.membership(&groups, &cat_ids, "core concept", "category", false);
    }

    if let Some(d) = &result.discourse_sections {
        c.unique_ids(d.key_patterns.iter().map(|x| x.pattern_id.as_str()), "pattern");
        if d.key_patterns.is_empty() {
            c.push(ViolationKind::MissingTier, None, "discourse result has no key patterns".into());
        }
        for p in &d.key_patterns {
            c.segments(&p.pattern_id, &p.evidence, "pattern");
        }
        for (name, text) in [
            ("language_analysis", &d.language_analysis),
            ("broader_context", &d.broader_context),
        ] {
            if text.trim().is_empty() {
                c.push(ViolationKind::InvalidItem, Some(name), format!("{name} is empty"));
            }
        }
    }

    ValidationReport {
        ok: c.violations.is_empty(),
        violations: c.violations,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::AgentRole;
    use crate::method::Method;
    use crate::model::{Category, Code, Modality, Provenance, StageRecord, SubCategory, Theme};
    use crate::segment::SegmentationPolicy;

    fn doc() -> Document {
        Document::from_text(
            "the cat sat.",
            Provenance::new(Modality::InlineText, None),
            &SegmentationPolicy::default(),
        )
        .unwrap()
    }

    fn trace(method: Method) -> Vec<StageRecord> {
        role_sequence(method)
            .iter()
            .map(|&role| StageRecord {
                role,
                started_at: "t0".into(),
                finished_at: "t1".into(),
                attempts: 1,
                input_chars: 0,
                output_chars: 0,
            })
            .collect()
    }

    fn thematic(doc: &Document) -> AnalysisResult {
        let mut r = AnalysisResult::empty(Method::Thematic, doc.doc_id.clone());
        r.summary = Some("the cat sat.".into());
        r.codes = vec![Code {
            code_id: "code-1".into(),
            label: "cat".into(),
            description: String::new(),
            supporting_segments: vec![0],
            supporting_excerpt: "the cat sat.".into(),
        }];
        r.subcategories = vec![SubCategory {
            subcat_id: "sub-1".into(),
            label: "cat-group".into(),
            member_codes: vec!["code-1".into()],
        }];
        r.categories = vec![Category {
            cat_id: "cat-1".into(),
            label: "cat-group-group".into(),
            members: vec!["sub-1".into()],
        }];
        r.themes = vec![Theme {
            theme_id: "theme-1".into(),
            label: "t".into(),
            narrative: "n".into(),
            member_categories: vec!["cat-1".into()],
        }];
        r.stage_trace = trace(Method::Thematic);
        r
    }

    #[test]
    fn well_formed_result_is_ok() {
        let d = doc();
        let report = validate_result(&thematic(&d), &d);
        assert!(report.ok, "{report:?}");
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn dangling_subcategory_member() {
        let d = doc();
        let mut r = thematic(&d);
        r.subcategories[0].member_codes.push("code-9".into());
        let report = validate_result(&r, &d);
        assert!(!report.ok);
        let kinds: Vec<_> = report.violations.iter().map(|v| v.kind).collect();
        assert_eq!(kinds, vec![ViolationKind::DanglingReference]);
    }

    #[test]
    fn short_trace_is_stage_count_mismatch() {
        let d = doc();
        let mut r = thematic(&d);
        r.stage_trace.truncate(4);
        let report = validate_result(&r, &d);
        assert!(report.has(ViolationKind::StageCountMismatch));
        assert!(report.summary().contains("expected 6"));
    }

    #[test]
    fn empty_coding_is_a_warning() {
        let d = doc();
        let mut r = AnalysisResult::empty(Method::Thematic, d.doc_id.clone());
        r.summary = Some("s".into());
        r.stage_trace = trace(Method::Thematic);
        let report = validate_result(&r, &d);
        assert!(report.ok, "{report:?}");
        assert_eq!(report.warnings[0].message, "empty coding");
    }

    #[test]
    fn tiers_outside_the_shape_are_rejected() {
        let d = doc();
        let mut r = thematic(&d);
        r.core_concept = Some(crate::model::CoreConcept {
            label: "x".into(),
            theory_narrative: "y".into(),
            linked_categories: vec!["cat-1".into()],
        });
        assert!(validate_result(&r, &d).has(ViolationKind::TierNotAllowed));
    }

    #[test]
    fn unassigned_and_duplicate_members() {
        let d = doc();
        let mut r = thematic(&d);
        r.codes.push(Code {
            code_id: "code-2".into(),
            ..r.codes[0].clone()
        });
        let report = validate_result(&r, &d);
        assert!(report.has(ViolationKind::UnassignedMember));
        r.subcategories.push(SubCategory {
            subcat_id: "sub-2".into(),
            label: "x".into(),
            member_codes: vec!["code-1".into(), "code-2".into()],
        });
        let report = validate_result(&r, &d);
        assert!(report.has(ViolationKind::DuplicateMembership));
        assert!(report.has(ViolationKind::UnassignedMember), "sub-2 is in no category");
    }

    #[test]
    fn validation_is_pure() {
        let d = doc();
        let mut r = thematic(&d);
        r.stage_trace[0].role = AgentRole::Coder;
        r.codes[0].supporting_segments = vec![3];
        assert_eq!(validate_result(&r, &d), validate_result(&r, &d));
    }
}
