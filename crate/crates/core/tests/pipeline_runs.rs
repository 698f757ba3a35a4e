use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use qda_core::backend::{Backend, BackendError, CompletionRequest, CompletionResponse, FinishReason, MockBackend, Usage};
use qda_core::model::{Modality, Provenance};
use qda_core::pipeline::{StageStatus, MAX_RETRY_LIMIT};
use qda_core::segment::SegmentationPolicy;
use qda_core::{
    to_canonical_json, validate_result, AgentRole, AnalysisRequest, Document, Method, PipelineConfig,
    PipelineError, Runner,
};

const CAT: &str = "the cat sat on the mat. the cat ran.";

fn doc(text: &str) -> Document {
    Document::from_text(text, Provenance::new(Modality::InlineText, None), &SegmentationPolicy::default()).unwrap()
}

fn mock() -> Runner {
    Runner::new(Arc::new(MockBackend))
}

/// Hand-rolled restatement of the mock coding rule for a single segment:
/// count lower-cased alphabetic words not in a small stoplist, rank by
/// frequency then alphabetically.
fn oracle_codes(text: &str) -> Vec<String> {
    let stop = ["the", "on", "a", "of", "and"];
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for word in text.split(|c: char| !c.is_ascii_alphabetic()) {
        let w = word.to_ascii_lowercase();
        if w.len() >= 2 && !stop.contains(&w.as_str()) {
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut ranked: Vec<_> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.into_iter().map(|(w, _)| w).collect()
}

fn oracle_groups(labels: &[String]) -> Vec<(String, Vec<String>)> {
    labels
        .chunks(3)
        .map(|c| (format!("{}-group", c[0]), c.to_vec()))
        .collect()
}

#[tokio::test]
async fn thematic_cat_corpus_matches_oracle() {
    let result = mock().run(&AnalysisRequest::new(Method::Thematic, doc(CAT)), None).await.unwrap();

    let codes = oracle_codes(CAT);
    assert_eq!(codes, ["cat", "mat", "ran", "sat"]);
    let subs = oracle_groups(&codes);
    let cats = oracle_groups(&subs.iter().map(|s| s.0.clone()).collect::<Vec<_>>());

    assert_eq!(result.summary.as_deref(), Some("the cat sat on the mat."));
    assert_eq!(result.codes.iter().map(|c| c.label.as_str()).collect::<Vec<_>>(), codes);
    assert!(result.codes.iter().all(|c| c.supporting_segments == [0]));
    assert_eq!(result.codes[2].supporting_excerpt, "the cat ran.");
    let sub_labels: Vec<_> = result.subcategories.iter().map(|s| s.label.clone()).collect();
    assert_eq!(sub_labels, ["cat-group", "sat-group"]);
    for (sub, (_, members)) in result.subcategories.iter().zip(&subs) {
        let labels: Vec<_> = sub
            .member_codes
            .iter()
            .map(|id| result.code(id).unwrap().label.clone())
            .collect();
        assert_eq!(&labels, members);
    }
    assert_eq!(result.categories.len(), cats.len());
    assert_eq!(result.categories[0].label, cats[0].0);
    assert_eq!(result.themes.len(), 1);
    assert_eq!(result.themes[0].label, format!("mock ThemeSynthesizer: {}", cats[0].0));
    assert_eq!(result.themes[0].member_categories, ["cat-1"]);
    assert_eq!(result.stage_trace.len(), 6);
}

#[tokio::test]
async fn thematic_cat_corpus_matches_frozen_golden() {
    let result = mock().run(&AnalysisRequest::new(Method::Thematic, doc(CAT)), None).await.unwrap();
    let golden = include_str!("../fixtures/golden/thematic_cat.json");
    assert_eq!(to_canonical_json(&result), golden.trim_end());
}

#[tokio::test]
async fn every_method_validates_and_is_deterministic() {
    let text = "Alice went to the market.\n\nBob stayed home and read.\n\nAlice came back with bread for Bob.";
    for method in Method::ALL {
        let request = AnalysisRequest::new(method, doc(text));
        let a = mock().run(&request, None).await.unwrap();
        let b = mock().run(&request, None).await.unwrap();
        assert_eq!(to_canonical_json(&a), to_canonical_json(&b), "{method}");
        assert!(validate_result(&a, &request.document).ok, "{method}");
        assert_eq!(a.stage_trace.len(), qda_core::plan(method).stages.len());
    }
}

/// Always answers in prose.
struct Prose(AtomicUsize);

#[async_trait]
impl Backend for Prose {
    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        self.0.fetch_add(1, Ordering::SeqCst);
        let _ = request;
        Ok(CompletionResponse {
            text: "I think the text is about cats.".into(),
            finish_reason: FinishReason::Complete,
            usage: Usage::default(),
        })
    }
}

#[tokio::test]
async fn unparseable_output_exhausts_retries() {
    let backend = Arc::new(Prose(AtomicUsize::new(0)));
    let runner = Runner::new(backend.clone());
    let err = runner.run(&AnalysisRequest::new(Method::Thematic, doc(CAT)), None).await.unwrap_err();
    match err {
        PipelineError::StageFailed { role, attempts, .. } => {
            assert_eq!(role, AgentRole::Analyzer);
            assert_eq!(attempts, 3);
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(backend.0.load(Ordering::SeqCst), 3);
}

/// Delegates to the mock, except that one role answers in prose for its
/// first `bad` calls. Records whether retries carried a corrective note.
struct Flaky {
    role: AgentRole,
    bad: usize,
    seen: AtomicUsize,
    corrected: AtomicUsize,
}

#[async_trait]
impl Backend for Flaky {
    async fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        if request.role == self.role {
            let n = self.seen.fetch_add(1, Ordering::SeqCst);
            if n > 0 && request.user_content.contains("previous reply was rejected") {
                self.corrected.fetch_add(1, Ordering::SeqCst);
            }
            if n < self.bad {
                return Ok(CompletionResponse {
                    text: "no json here".into(),
                    finish_reason: FinishReason::Complete,
                    usage: Usage::default(),
                });
            }
        }
        MockBackend.complete(request).await
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

#[tokio::test]
async fn retry_recovers_and_events_follow_contract() {
    let backend = Arc::new(Flaky {
        role: AgentRole::SubCategorizer,
        bad: 2,
        seen: AtomicUsize::new(0),
        corrected: AtomicUsize::new(0),
    });
    let runner = Runner::new(backend.clone());
    let mut handle = runner.start(AnalysisRequest::new(Method::Thematic, doc(CAT)));
    let mut events = Vec::new();
    while let Some(ev) = handle.next_event().await {
        events.push(ev);
    }
    let result = handle.join().await.unwrap();
    assert_eq!(backend.corrected.load(Ordering::SeqCst), 2);
    assert_eq!(result.stage_trace[3].attempts, 3);

    let done: Vec<usize> = events
        .iter()
        .filter(|e| e.status == StageStatus::Done)
        .map(|e| e.stage_index)
        .collect();
    assert_eq!(done, [0, 1, 2, 3, 4, 5]);
    let retrying = events.iter().filter(|e| e.status == StageStatus::Retrying).count();
    assert_eq!(retrying, 2);
    assert!(events.iter().all(|e| e.status != StageStatus::Retrying || e.stage_index == 3));
}

#[tokio::test]
async fn failed_stage_event_sequence() {
    let backend = Arc::new(Flaky {
        role: AgentRole::CodeReviewer,
        bad: usize::MAX,
        seen: AtomicUsize::new(0),
        corrected: AtomicUsize::new(0),
    });
    let mut handle = Runner::new(backend).start(AnalysisRequest::new(Method::Thematic, doc(CAT)));
    let mut events = Vec::new();
    while let Some(ev) = handle.next_event().await {
        events.push((ev.stage_index, ev.status));
    }
    assert!(handle.join().await.is_err());
    use StageStatus::*;
    assert_eq!(
        events,
        [
            (0, Started),
            (0, Done),
            (1, Started),
            (1, Done),
            (2, Started),
            (2, Retrying),
            (2, Retrying),
            (2, Failed)
        ]
    );
}

#[tokio::test]
async fn discourse_interpreters_start_after_key_patterns() {
    let mut handle = mock().start(AnalysisRequest::new(Method::Discourse, doc(CAT)));
    let mut events = Vec::new();
    while let Some(ev) = handle.next_event().await {
        events.push((ev.stage_index, ev.status));
    }
    handle.join().await.unwrap();
    let first_done = events.iter().position(|e| *e == (0, StageStatus::Done)).unwrap();
    for stage in [1, 2] {
        let started = events.iter().position(|e| *e == (stage, StageStatus::Started)).unwrap();
        assert!(started > first_done);
    }
}

#[tokio::test]
async fn retry_limit_override_is_respected() {
    let backend = Arc::new(Prose(AtomicUsize::new(0)));
    let config = PipelineConfig {
        retry_limit: Some(MAX_RETRY_LIMIT),
        ..Default::default()
    };
    let request = AnalysisRequest::new(Method::Content, doc(CAT)).with_config(config);
    let err = Runner::new(backend).run(&request, None).await.unwrap_err();
    assert!(matches!(err, PipelineError::StageFailed { attempts: 6, .. }), "{err:?}");
}

#[tokio::test]
async fn chunked_runs_merge_and_dedupe() {
    let paragraphs: Vec<String> = (0..12)
        .map(|i| format!("The river keeper counted boats number {i} at dawn. Fog covered the water."))
        .collect();
    let text = paragraphs.join("\n\n");
    let config = PipelineConfig {
        chunk_max_chars: 200,
        chunk_overlap_chars: 60,
        ..Default::default()
    };
    for method in [Method::Thematic, Method::GroundedTheory, Method::Discourse] {
        let request = AnalysisRequest::new(method, doc(&text)).with_config(config.clone());
        let result = mock().run(&request, None).await.unwrap();
        assert!(result.stage_trace[0].attempts > 1, "{method}: first stage was chunked");
        let mut labels: Vec<String> = result.codes.iter().map(|c| c.label.to_lowercase()).collect();
        let before = labels.len();
        labels.sort();
        labels.dedup();
        assert_eq!(labels.len(), before, "{method}: no duplicate code labels");
    }
}

#[tokio::test]
async fn empty_document_is_rejected() {
    let mut d = doc("x");
    d.text = "   ".into();
    let err = mock().run(&AnalysisRequest::new(Method::Narrative, d), None).await.unwrap_err();
    assert_eq!(err, PipelineError::EmptyInput);
}

#[tokio::test]
async fn stopword_only_input_yields_empty_coding() {
    let request = AnalysisRequest::new(Method::Thematic, doc("It is as it was."));
    let result = mock().run(&request, None).await.unwrap();
    assert!(result.codes.is_empty());
    let report = validate_result(&result, &request.document);
    assert!(report.ok);
    assert_eq!(report.warnings[0].message, "empty coding");
}
