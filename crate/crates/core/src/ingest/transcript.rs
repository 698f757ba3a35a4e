use std::ops::Range;
use std::sync::OnceLock;

use regex::Regex;

use super::IngestError;
use crate::model::{normalize_text, Document, Modality, Provenance};
use crate::segment::{spans_to_segments, SegmentationPolicy};

fn marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // A speaker label of at most four words, then a colon and whitespace.
    RE.get_or_init(|| Regex::new(r"^([\p{L}\p{N}][\p{L}\p{N}._'\-]*(?: [\p{L}\p{N}._'\-]+){0,3}):(?:\s|$)").unwrap())
}

/// Character spans of speaker turns and the speaker of each, when the first
/// non-blank line carries a `Name:` marker. A turn runs until the next marker
/// line and is trimmed.
pub fn detect_turns(text: &str) -> Option<Vec<(Range<usize>, String)>> {
    let chars: Vec<char> = text.chars().collect();
    let mut starts: Vec<(usize, String)> = Vec::new();
    let mut offset = 0;
    let mut first_content_line = true;
    for line in text.split('\n') {
        let len = line.chars().count();
        if !line.trim().is_empty() {
            let caps = marker().captures(line);
            match caps {
                Some(c) => starts.push((offset, c[1].to_string())),
                None if first_content_line => return None,
                None => {}
            }
            first_content_line = false;
        }
        offset += len + 1;
    }
    if starts.is_empty() {
        return None;
    }
    let mut turns = Vec::with_capacity(starts.len());
    for (i, (start, name)) in starts.iter().enumerate() {
        let end = starts.get(i + 1).map_or(chars.len(), |n| n.0);
        let mut s = *start;
        let mut e = end;
        while s < e && chars[s].is_whitespace() {
            s += 1;
        }
        while e > s && chars[e - 1].is_whitespace() {
            e -= 1;
        }
        turns.push((s..e, name.clone()));
    }
    Some(turns)
}

/// Interview or conversation transcript. Speaker turns become segments;
/// text without markers is segmented like any other document.
pub fn ingest_transcript(
    text: &str,
    speaker_markers: bool,
    policy: &SegmentationPolicy,
) -> Result<Document, IngestError> {
    let text = normalize_text(text);
    if text.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    let provenance = Provenance::new(Modality::Transcript, None);
    let turns = if speaker_markers { detect_turns(&text) } else { None };
    let Some(turns) = turns else {
        return Ok(Document::from_text(&text, provenance, policy)?);
    };
    let mut speakers: Vec<String> = Vec::new();
    for (_, name) in &turns {
        if !speakers.contains(name) {
            speakers.push(name.clone());
        }
    }
    let turn_count = turns.len();
    let chars: Vec<char> = text.chars().collect();
    let segments = spans_to_segments(&chars, turns.into_iter().map(|(r, _)| r).collect());
    Ok(Document::from_parts(text, segments, provenance)?
        .with_metadata("speakers", speakers.join(", "))
        .with_metadata("turn_count", turn_count.to_string()))
}
