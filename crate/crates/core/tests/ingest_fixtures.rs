//! Ingestion of the bundled fixture corpus, fully offline.

use std::path::PathBuf;
use std::sync::Arc;

use qda_core::ingest::{FetchConfig, Ingestor, SourceSpec};
use qda_core::model::Modality;
use qda_core::transport::{RecordingTransport, ReplayTransport};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/matrix").join(name)
}

fn ingestor(files: &[&str]) -> (Ingestor, Arc<RecordingTransport<ReplayTransport>>) {
    let mut replay = ReplayTransport::new();
    for f in files {
        replay.load_file(&fixture(f)).unwrap();
    }
    let recording = Arc::new(RecordingTransport::new(replay));
    (Ingestor::new(recording.clone(), FetchConfig::default()), recording)
}

#[tokio::test]
async fn github_thread_follows_pagination() {
    let (ingestor, recording) = ingestor(&["github_thread.json"]);
    let doc = ingestor
        .ingest(&SourceSpec::GithubLink {
            url: "https://github.com/example-org/field-notes/issues/42".into(),
        })
        .await
        .unwrap();
    assert_eq!(recording.count(), 3);
    assert_eq!(doc.source.modality, Modality::GithubLink);
    assert_eq!(doc.metadata["comment_count"], "5");
    assert_eq!(doc.metadata["title"], "Onboarding flow confuses first-time contributors");
    // Title, two body paragraphs, five comments.
    assert_eq!(doc.segments.len(), 8);
    assert!(doc.segments[3].text.starts_with("«[C1] devon:» I hit the same wall"));
    assert!(doc.segments[7].text.starts_with("«[C5] devon:»"));
    doc.check_invariants().unwrap();
}

#[tokio::test]
async fn conversation_html_is_stripped() {
    let (ingestor, _) = ingestor(&["conversation.json"]);
    let doc = ingestor
        .ingest(&SourceSpec::WebLink {
            url: "https://forum.example.org/threads/working-from-home".into(),
        })
        .await
        .unwrap();
    assert_eq!(doc.metadata["title"], "Forum: Working from home after the move");
    assert!(!doc.text.contains("analytics"));
    assert!(!doc.text.contains("font-family"));
    assert!(doc.text.contains("pressure & guilt"));
    let posts: Vec<&str> = doc.segments.iter().map(|s| s.text.as_str()).filter(|t| t.contains(':')).collect();
    assert_eq!(posts.len(), 5);
    assert!(posts[0].starts_with("Lena: Since the office closed"));
}

#[tokio::test]
async fn story_pdf_matches_plain_text() {
    let (ingestor, recording) = ingestor(&[]);
    let pdf = std::fs::read(fixture("short_story.pdf")).unwrap();
    let doc = ingestor
        .ingest(&SourceSpec::FileUpload {
            filename: "short_story.pdf".into(),
            bytes: pdf,
            declared_kind: None,
        })
        .await
        .unwrap();
    // Oracle: the PDF was typeset from the txt fixture, one text block per
    // paragraph; only line breaks inside paragraphs may differ.
    let txt = std::fs::read_to_string(fixture("short_story.txt")).unwrap();
    let expected: Vec<String> = txt.trim().split("\n\n").map(|p| p.split_whitespace().collect::<Vec<_>>().join(" ")).collect();
    let got: Vec<String> = doc.segments.iter().map(|s| s.text.split_whitespace().collect::<Vec<_>>().join(" ")).collect();
    assert_eq!(got, expected);
    assert_eq!(recording.count(), 0);
}

#[tokio::test]
async fn transcript_turns_become_segments() {
    let (ingestor, _) = ingestor(&[]);
    let text = std::fs::read_to_string(fixture("interview_transcript.txt")).unwrap();
    let doc = ingestor
        .ingest(&SourceSpec::Transcript {
            text,
            speaker_markers: true,
        })
        .await
        .unwrap();
    assert_eq!(doc.segments.len(), 10);
    assert_eq!(doc.metadata["turn_count"], "10");
    assert_eq!(doc.metadata["speakers"], "Interviewer, Participant");
    doc.check_invariants().unwrap();
}

#[tokio::test]
async fn news_text_is_inline() {
    let (ingestor, recording) = ingestor(&[]);
    let text = std::fs::read_to_string(fixture("news_article.txt")).unwrap();
    let doc = ingestor.ingest(&SourceSpec::InlineText { text }).await.unwrap();
    assert_eq!(doc.segments.len(), 6);
    assert_eq!(recording.count(), 0);
}
