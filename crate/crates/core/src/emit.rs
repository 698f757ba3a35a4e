//! Export of finished analyses: one-row-per-code CSV, a markdown report and
//! the canonical JSON view.

use std::fmt::Write as _;

use crate::canonical::to_canonical_json;
use crate::method::{OutputFormat, Tier};
use crate::model::AnalysisResult;

pub const CSV_HEADER: [&str; 6] = ["code", "subcategory", "category", "theme", "supporting_segments", "excerpt"];

/// Separator for multiple themes sharing one category.
pub const THEME_SEPARATOR: &str = "; ";

/// One CSV data row: the code and the labels of the tiers above it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvRow {
    pub code: String,
    pub subcategory: String,
    pub category: String,
    pub theme: String,
    pub supporting_segments: Vec<usize>,
    pub excerpt: String,
}

/// Rows in code order. Tiers the method lacks stay empty.
pub fn csv_rows(result: &AnalysisResult) -> Vec<CsvRow> {
    let via_subcats = result.method.has_tier(Tier::Subcategories);
    result
        .codes
        .iter()
        .map(|code| {
            let sub = result.subcategories.iter().find(|s| s.member_codes.contains(&code.code_id));
            let cat_member = if via_subcats { sub.map(|s| s.subcat_id.as_str()) } else { Some(code.code_id.as_str()) };
            let cat = cat_member.and_then(|m| result.categories.iter().find(|c| c.members.iter().any(|x| x == m)));
            let theme = cat
                .map(|c| {
                    result
                        .themes
                        .iter()
                        .filter(|t| t.member_categories.contains(&c.cat_id))
                        .map(|t| t.label.as_str())
                        .collect::<Vec<_>>()
                        .join(THEME_SEPARATOR)
                })
                .unwrap_or_default();
            CsvRow {
                code: code.label.clone(),
                subcategory: sub.map(|s| s.label.clone()).unwrap_or_default(),
                category: cat.map(|c| c.label.clone()).unwrap_or_default(),
                theme,
                supporting_segments: code.supporting_segments.clone(),
                excerpt: code.supporting_excerpt.clone(),
            }
        })
        .collect()
}

pub fn join_segments(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join(";")
}

pub fn to_csv(result: &AnalysisResult) -> Vec<u8> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(Vec::new());
    writer.write_record(CSV_HEADER).expect("writing to memory");
    for row in csv_rows(result) {
        let segments = join_segments(&row.supporting_segments);
        writer
            .write_record([&row.code, &row.subcategory, &row.category, &row.theme, &segments, &row.excerpt])
            .expect("writing to memory");
    }
    writer.into_inner().expect("writing to memory")
}

pub fn to_output_area(result: &AnalysisResult) -> Vec<u8> {
    to_canonical_json(result).into_bytes()
}

fn seg_list(ids: &[usize]) -> String {
    let ids = ids.iter().map(usize::to_string).collect::<Vec<_>>().join(", ");
    format!("[segments {ids}]")
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn heading(tier: Tier) -> &'static str {
    match tier {
        Tier::Summary => "Summary",
        Tier::Codes => "Codes",
        Tier::Subcategories => "Subcategories",
        Tier::Categories => "Categories",
        Tier::Themes => "Themes",
        Tier::Patterns => "Patterns",
        Tier::CoreConcept => "Core Concept",
        Tier::DiscourseSections => "Discourse",
    }
}

fn labels<'a>(ids: &[String], lookup: impl Fn(&str) -> Option<&'a str>) -> String {
    ids.iter()
        .map(|id| match lookup(id) {
            Some(label) => format!("{label} ({id})"),
            None => id.clone(),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

/// Markdown report: a title block, then one H2 section per tier of the
/// method's result shape. Discourse results get exactly three H2 sections.
pub fn to_report(result: &AnalysisResult) -> Vec<u8> {
    let mut out = String::new();
    let title = result.method.title();
    let mut chars = title.chars();
    let title: String = chars.next().map(|c| c.to_uppercase().chain(chars).collect()).unwrap_or_default();
    let _ = writeln!(out, "# {title} report\n");
    let _ = writeln!(out, "- Method: {}", result.method);
    let _ = writeln!(out, "- Document: {}", result.doc_id);
    for (key, value) in &result.doc_metadata {
        let _ = writeln!(out, "- {}: {}", key, one_line(value));
    }
    let none = "_none_\n";
    let code_label = |id: &str| result.code(id).map(|c| c.label.as_str());
    let sub_label = |id: &str| result.subcategory(id).map(|s| s.label.as_str());
    let cat_label = |id: &str| result.category(id).map(|c| c.label.as_str());

    for &tier in result.method.result_shape() {
        if tier == Tier::DiscourseSections {
            write_discourse(&mut out, result);
            continue;
        }
        let _ = writeln!(out, "\n## {}\n", heading(tier));
        match tier {
            Tier::Summary => {
                let _ = writeln!(out, "{}", result.summary.as_deref().map(str::trim).filter(|s| !s.is_empty()).unwrap_or("_no summary_"));
            }
            Tier::Codes => {
                if result.codes.is_empty() {
                    out.push_str("_no codes identified_\n");
                }
                for c in &result.codes {
                    let _ = write!(out, "- **{}** ({}) {}", c.label, c.code_id, seg_list(&c.supporting_segments));
                    if !c.description.trim().is_empty() {
                        let _ = write!(out, ": {}", one_line(&c.description));
                    }
                    if !c.supporting_excerpt.is_empty() {
                        let _ = write!(out, "\n  > {}", one_line(&c.supporting_excerpt));
                    }
                    out.push('\n');
                }
            }
            Tier::Subcategories => {
                if result.subcategories.is_empty() {
                    out.push_str(none);
                }
                for s in &result.subcategories {
                    let _ = writeln!(out, "- **{}** ({}): {}", s.label, s.subcat_id, labels(&s.member_codes, code_label));
                }
            }
            Tier::Categories => {
                if result.categories.is_empty() {
                    out.push_str(none);
                }
                let via_subcats = result.method.has_tier(Tier::Subcategories);
                for c in &result.categories {
                    let members = if via_subcats { labels(&c.members, sub_label) } else { labels(&c.members, code_label) };
                    let _ = writeln!(out, "- **{}** ({}): {}", c.label, c.cat_id, members);
                }
            }
            Tier::Themes => {
                if result.themes.is_empty() {
                    out.push_str(none);
                }
                for t in &result.themes {
                    let _ = writeln!(out, "### {} ({})\n", t.label, t.theme_id);
                    if !t.narrative.trim().is_empty() {
                        let _ = writeln!(out, "{}\n", one_line(&t.narrative));
                    }
                    let _ = writeln!(out, "Categories: {}\n", labels(&t.member_categories, cat_label));
                }
            }
            Tier::Patterns => {
                if result.patterns.is_empty() {
                    out.push_str(none);
                }
                for p in &result.patterns {
                    let _ = writeln!(out, "- {} ({}) {}", one_line(&p.statement), p.pattern_id, seg_list(&p.evidence));
                }
            }
            Tier::CoreConcept => match &result.core_concept {
                Some(core) => {
                    let _ = writeln!(out, "**{}**\n", core.label);
                    if !core.theory_narrative.trim().is_empty() {
                        let _ = writeln!(out, "{}\n", one_line(&core.theory_narrative));
                    }
                    let _ = writeln!(out, "Linked categories: {}", labels(&core.linked_categories, cat_label));
                }
                None => out.push_str("_no core concept identified_\n"),
            },
            Tier::DiscourseSections => unreachable!(),
        }
    }
    let trimmed = out.trim_end().len();
    out.truncate(trimmed);
    out.push('\n');
    out.into_bytes()
}

fn write_discourse(out: &mut String, result: &AnalysisResult) {
    let sections = result.discourse_sections.as_ref();
    out.push_str("\n## Key Patterns\n\n");
    match sections.map(|s| s.key_patterns.as_slice()) {
        Some(patterns) if !patterns.is_empty() => {
            for p in patterns {
                let _ = writeln!(out, "- {} ({}) {}", one_line(&p.statement), p.pattern_id, seg_list(&p.evidence));
            }
        }
        _ => out.push_str("_none_\n"),
    }
    for (name, text) in [
        ("Language Analysis", sections.map(|s| s.language_analysis.as_str())),
        ("Broader Context", sections.map(|s| s.broader_context.as_str())),
    ] {
        let _ = writeln!(out, "\n## {name}\n");
        let _ = writeln!(out, "{}", text.map(str::trim).filter(|t| !t.is_empty()).unwrap_or("_none_"));
    }
}

/// Serializes `result` in `format`.
pub fn emit(result: &AnalysisResult, format: OutputFormat) -> Vec<u8> {
    match format {
        OutputFormat::Csv => to_csv(result),
        OutputFormat::OutputArea => to_output_area(result),
        OutputFormat::DocReport => to_report(result),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::method::Method;
    use crate::model::{Category, Code, CoreConcept, DiscourseSections, Pattern, SubCategory, Theme};

    fn code(id: &str, label: &str, segs: Vec<usize>, excerpt: &str) -> Code {
        Code {
            code_id: id.into(),
            label: label.into(),
            description: String::new(),
            supporting_segments: segs,
            supporting_excerpt: excerpt.into(),
        }
    }

    fn thematic() -> AnalysisResult {
        let mut r = AnalysisResult::empty(Method::Thematic, "doc-1");
        r.summary = Some("s".into());
        r.codes = vec![code("code-1", "cat", vec![0], "the cat sat"), code("code-2", "say \"hi\", ok", vec![0, 2], "a,b")];
        r.subcategories = vec![SubCategory {
            subcat_id: "sub-1".into(),
            label: "cat-group".into(),
            member_codes: vec!["code-1".into(), "code-2".into()],
        }];
        r.categories = vec![Category {
            cat_id: "cat-1".into(),
            label: "cat-group-cat".into(),
            members: vec!["sub-1".into()],
        }];
        r.themes = vec![Theme {
            theme_id: "theme-1".into(),
            label: "mock theme".into(),
            narrative: "n".into(),
            member_categories: vec!["cat-1".into()],
        }];
        r
    }

    #[test]
    fn csv_rows_are_quoted_per_rfc4180() {
        let csv = String::from_utf8(to_csv(&thematic())).unwrap();
        assert_eq!(
            csv,
            "code,subcategory,category,theme,supporting_segments,excerpt\n\
             cat,cat-group,cat-group-cat,mock theme,0,the cat sat\n\
             \"say \"\"hi\"\", ok\",cat-group,cat-group-cat,mock theme,0;2,\"a,b\"\n"
        );
    }

    #[test]
    fn empty_coding_csv_is_header_only() {
        let r = AnalysisResult::empty(Method::Thematic, "d");
        assert_eq!(to_csv(&r), b"code,subcategory,category,theme,supporting_segments,excerpt\n");
        let report = String::from_utf8(to_report(&r)).unwrap();
        assert!(report.contains("no codes identified"));
    }

    #[test]
    fn content_categories_group_codes() {
        let mut r = AnalysisResult::empty(Method::Content, "d");
        r.codes = vec![code("code-1", "x", vec![1], "")];
        r.categories = vec![Category {
            cat_id: "cat-1".into(),
            label: "x-group".into(),
            members: vec!["code-1".into()],
        }];
        let rows = csv_rows(&r);
        assert_eq!(rows[0].subcategory, "");
        assert_eq!(rows[0].category, "x-group");
        assert_eq!(rows[0].theme, "");
    }

    #[test]
    fn discourse_report_has_three_sections() {
        let mut r = AnalysisResult::empty(Method::Discourse, "d");
        r.discourse_sections = Some(DiscourseSections {
            key_patterns: vec![Pattern {
                pattern_id: "pattern-1".into(),
                statement: "p".into(),
                evidence: vec![0],
            }],
            language_analysis: "lang".into(),
            broader_context: "ctx".into(),
        });
        let report = String::from_utf8(to_report(&r)).unwrap();
        let h2: Vec<&str> = report.lines().filter(|l| l.starts_with("## ")).collect();
        assert_eq!(h2, ["## Key Patterns", "## Language Analysis", "## Broader Context"]);
        assert!(report.contains("[segments 0]"));
    }

    #[test]
    fn grounded_report_ends_with_core_concept() {
        let mut r = AnalysisResult::empty(Method::GroundedTheory, "d");
        r.codes = vec![code("code-1", "x", vec![1], "")];
        r.categories = vec![Category {
            cat_id: "cat-1".into(),
            label: "x-group".into(),
            members: vec!["code-1".into()],
        }];
        r.core_concept = Some(CoreConcept {
            label: "core".into(),
            theory_narrative: "the theory".into(),
            linked_categories: vec!["cat-1".into()],
        });
        let report = String::from_utf8(to_report(&r)).unwrap();
        let last_h2 = report.lines().filter(|l| l.starts_with("## ")).last().unwrap();
        assert_eq!(last_h2, "## Core Concept");
        assert!(report.contains("the theory"));
    }

    #[test]
    fn emitters_are_deterministic() {
        let r = thematic();
        for format in OutputFormat::ALL {
            assert_eq!(emit(&r, format), emit(&r.clone(), format));
        }
        let back: AnalysisResult = serde_json::from_slice(&to_output_area(&r)).unwrap();
        assert_eq!(back, r);
    }
}
