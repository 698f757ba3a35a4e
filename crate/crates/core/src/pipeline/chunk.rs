use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::PipelineConfig;
use crate::model::Document;

/// A contiguous run of whole segments fed to the first stage in one call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub index: usize,
    /// Segment ids covered, half-open.
    pub segments: Range<usize>,
    /// Leading segments repeated from the previous chunk.
    pub overlap_segments: usize,
    /// Sum of the covered segments' character lengths.
    pub chars: usize,
    /// A single segment longer than `chunk_max_chars`.
    pub oversize: bool,
    /// Overlap was requested but no whole-segment overlap fit.
    pub no_overlap: bool,
}

impl Chunk {
    /// Segments this chunk contributes for the first time.
    pub fn fresh_segments(&self) -> Range<usize> {
        self.segments.start + self.overlap_segments..self.segments.end
    }
}

/// Greedily packs whole segments into chunks of at most `chunk_max_chars`
/// characters. Each chunk after the first starts with the shortest suffix of
/// the previous chunk totalling at least `chunk_overlap_chars`, provided that
/// suffix plus the next new segment still fits.
pub fn chunk(document: &Document, config: &PipelineConfig) -> Vec<Chunk> {
    let sizes: Vec<usize> = document.segments.iter().map(|s| s.text.chars().count()).collect();
    chunk_sizes(&sizes, config.chunk_max_chars, config.chunk_overlap_chars)
}

pub(crate) fn chunk_sizes(sizes: &[usize], max: usize, overlap: usize) -> Vec<Chunk> {
    let max = max.max(1);
    let mut chunks: Vec<Chunk> = Vec::new();
    let mut next = 0usize;
    while next < sizes.len() {
        let (start, overlap_segments, no_overlap) = match chunks.last() {
            None => (next, 0, false),
            Some(prev) => {
                let k = overlap_suffix(sizes, prev.segments.clone(), sizes[next], max, overlap);
                (next - k, k, overlap > 0 && k == 0)
            }
        };
        let mut total: usize = sizes[start..next].iter().sum();
        let mut end = next;
        while end < sizes.len() && total + sizes[end] <= max {
            total += sizes[end];
            end += 1;
        }
        if end == next {
            // Only reachable without overlap: the segment alone exceeds max.
            total += sizes[next];
            end += 1;
        }
        chunks.push(Chunk {
            index: chunks.len(),
            segments: start..end,
            overlap_segments,
            chars: total,
            oversize: total > max,
            no_overlap,
        });
        next = end;
    }
    chunks
}

/// Number of trailing segments of `prev` to repeat, or 0 when no suffix
/// reaches `overlap` while leaving room for a segment of size `incoming`.
fn overlap_suffix(sizes: &[usize], prev: Range<usize>, incoming: usize, max: usize, overlap: usize) -> usize {
    if overlap == 0 {
        return 0;
    }
    let mut total = 0;
    for k in 1..prev.len() {
        total += sizes[prev.end - k];
        if total + incoming > max {
            return 0;
        }
        if total >= overlap {
            return k;
        }
    }
    0
}
