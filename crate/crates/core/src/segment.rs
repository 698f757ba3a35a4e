//! Paragraph-first segmentation with a sentence fallback for long paragraphs.
//!
//! Segments are trimmed, so everything between two consecutive segments is
//! whitespace; concatenating segments with those whitespace gaps reproduces
//! the input exactly.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::model::{ModelError, Segment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationPolicy {
    /// Paragraphs longer than this (in characters) are split on sentence
    /// boundaries.
    pub max_paragraph_chars: usize,
}

impl Default for SegmentationPolicy {
    fn default() -> Self {
        Self {
            max_paragraph_chars: 2_000,
        }
    }
}

/// Splits `text` into segments whose `char_range`s index into `text` itself.
pub fn segment_document(text: &str, policy: &SegmentationPolicy) -> Result<Vec<Segment>, ModelError> {
    if text.trim().is_empty() {
        return Err(ModelError::EmptyInput);
    }
    let chars: Vec<char> = text.chars().collect();
    let max = policy.max_paragraph_chars.max(1);

    let mut spans = Vec::new();
    for para in paragraph_spans(&chars) {
        if para.len() > max {
            spans.extend(pack_sentences(&chars, para, max));
        } else {
            spans.push(para);
        }
    }
    Ok(spans_to_segments(&chars, spans))
}

pub(crate) fn spans_to_segments(chars: &[char], spans: Vec<Range<usize>>) -> Vec<Segment> {
    spans
        .into_iter()
        .enumerate()
        .map(|(segment_id, range)| Segment {
            segment_id,
            text: chars[range.clone()].iter().collect(),
            char_range: range,
        })
        .collect()
}

/// Maximal runs of non-blank lines, trimmed of surrounding whitespace.
pub(crate) fn paragraph_spans(chars: &[char]) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut current: Option<Range<usize>> = None;
    let mut line_start = 0;
    while line_start <= chars.len() {
        let line_end = chars[line_start..]
            .iter()
            .position(|&c| c == '\n')
            .map_or(chars.len(), |p| line_start + p);
        let line = &chars[line_start..line_end];
        match line.iter().position(|c| !c.is_whitespace()) {
            Some(first) => {
                let last = line.iter().rposition(|c| !c.is_whitespace()).unwrap_or(first);
                let (s, e) = (line_start + first, line_start + last + 1);
                current = Some(match current {
                    Some(r) => r.start..e,
                    None => s..e,
                });
            }
            None => {
                if let Some(r) = current.take() {
                    spans.push(r);
                }
            }
        }
        line_start = line_end + 1;
    }
    if let Some(r) = current {
        spans.push(r);
    }
    spans
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '…' | '。' | '！' | '？')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '}' | '”' | '’' | '»')
}

/// Sentence spans inside `span`: a sentence ends after terminal punctuation
/// (plus any closing quotes/brackets) that is followed by whitespace or the
/// end of the span.
pub(crate) fn sentence_spans(chars: &[char], span: Range<usize>) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let end = span.end;
    let mut i = span.start;
    while i < end {
        while i < end && chars[i].is_whitespace() {
            i += 1;
        }
        if i == end {
            break;
        }
        let start = i;
        let mut j = i;
        let stop = loop {
            if j >= end {
                break end;
            }
            if is_terminal(chars[j]) {
                let mut k = j + 1;
                while k < end && (is_terminal(chars[k]) || is_closer(chars[k])) {
                    k += 1;
                }
                if k == end || chars[k].is_whitespace() {
                    break k;
                }
                j = k;
                continue;
            }
            j += 1;
        };
        let mut trimmed = stop;
        while trimmed > start && chars[trimmed - 1].is_whitespace() {
            trimmed -= 1;
        }
        out.push(start..trimmed);
        i = stop;
    }
    out
}

/// Greedily packs consecutive sentences into pieces of at most `max` chars.
/// A single sentence longer than `max` becomes its own piece.
fn pack_sentences(chars: &[char], span: Range<usize>, max: usize) -> Vec<Range<usize>> {
    let mut pieces = Vec::new();
    let mut current: Option<Range<usize>> = None;
    for sentence in sentence_spans(chars, span) {
        current = match current {
            Some(piece) if sentence.end - piece.start <= max => Some(piece.start..sentence.end),
            Some(piece) => {
                pieces.push(piece);
                Some(sentence)
            }
            None => Some(sentence),
        };
    }
    pieces.extend(current);
    pieces
}

/// First sentence of `text`, or all of it when there is no sentence boundary.
pub fn first_sentence(text: &str) -> &str {
    let chars: Vec<char> = text.chars().collect();
    let spans = sentence_spans(&chars, 0..chars.len());
    match spans.first() {
        Some(r) => {
            let start = char_to_byte(text, r.start);
            let end = char_to_byte(text, r.end);
            &text[start..end]
        }
        None => text.trim(),
    }
}

/// Byte offset of the `char_idx`-th character (or `text.len()` past the end).
pub fn char_to_byte(text: &str, char_idx: usize) -> usize {
    text.char_indices()
        .nth(char_idx)
        .map_or(text.len(), |(b, _)| b)
}
