//! Document chunking. All offsets count Unicode scalar values.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::SourceDocument;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChunkError {
    #[error("invalid chunk parameters: size={size}, overlap={overlap} (need size > overlap >= 0, size > 0)")]
    InvalidChunkParams { size: usize, overlap: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkStrategy {
    SlidingWindow,
    Paragraph,
    Element,
    /// Boundaries chosen by a [`BoundaryScorer`]; without one this behaves
    /// exactly like [`ChunkStrategy::Paragraph`].
    Semantic,
}

impl std::str::FromStr for ChunkStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "sliding_window" | "sliding" => Ok(ChunkStrategy::SlidingWindow),
            "paragraph" => Ok(ChunkStrategy::Paragraph),
            "element" => Ok(ChunkStrategy::Element),
            "semantic" => Ok(ChunkStrategy::Semantic),
            other => Err(format!("unknown chunk strategy '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkParams {
    pub strategy: ChunkStrategy,
    pub size: usize,
    pub overlap: usize,
}

impl Default for ChunkParams {
    fn default() -> Self {
        Self {
            strategy: ChunkStrategy::SlidingWindow,
            size: 2000,
            overlap: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub chunk_index: usize,
    pub char_start: usize,
    pub char_end: usize,
    pub text: String,
    pub strategy: ChunkStrategy,
}

impl Chunk {
    pub fn char_len(&self) -> usize {
        self.char_end - self.char_start
    }
}

/// Seam for semantic chunking: given the body and its paragraph boundary
/// offsets, return the subset of offsets at which to cut.
pub trait BoundaryScorer: Send + Sync {
    fn select_boundaries(&self, body: &str, candidates: &[usize]) -> Vec<usize>;
}

/// Expected number of sliding-window chunks for a body of `len` chars.
pub fn sliding_window_count(len: usize, size: usize, overlap: usize) -> usize {
    let stride = size - overlap;
    if len <= overlap {
        1
    } else {
        (len - overlap).div_ceil(stride).max(1)
    }
}

fn sliding_spans(start: usize, end: usize, size: usize, overlap: usize) -> Vec<(usize, usize)> {
    let len = end - start;
    let stride = size - overlap;
    (0..sliding_window_count(len, size, overlap))
        .map(|k| {
            let s = start + k * stride;
            (s, (s + size).min(end))
        })
        .collect()
}

/// Paragraph units tiling `[0, len)`: each unit runs from the start of a
/// paragraph to the start of the next, so separators stay attached.
fn paragraph_units(chars: &[char]) -> Vec<(usize, usize)> {
    let mut cuts = vec![0];
    let mut i = 0;
    while i < chars.len() {
        if chars[i] == '\n' {
            let mut j = i + 1;
            let mut newlines = 1;
            while j < chars.len() && chars[j].is_whitespace() {
                if chars[j] == '\n' {
                    newlines += 1;
                }
                j += 1;
            }
            if newlines >= 2 && j < chars.len() && j > 0 {
                cuts.push(j);
            }
            i = j;
        } else {
            i += 1;
        }
    }
    cuts.dedup();
    let mut units: Vec<(usize, usize)> = cuts.windows(2).map(|w| (w[0], w[1])).collect();
    units.push((*cuts.last().unwrap_or(&0), chars.len()));
    units.retain(|(s, e)| s < e);
    units
}

fn pack_units(units: &[(usize, usize)], size: usize, overlap: usize) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut current: Option<(usize, usize)> = None;
    for &(s, e) in units {
        if e - s > size {
            if let Some(c) = current.take() {
                spans.push(c);
            }
            spans.extend(sliding_spans(s, e, size, overlap));
            continue;
        }
        current = match current {
            Some((cs, _)) if e - cs <= size => Some((cs, e)),
            Some(c) => {
                spans.push(c);
                Some((s, e))
            }
            None => Some((s, e)),
        };
        debug_assert!(current.map(|(cs, _)| cs).unwrap_or(0) <= s);
    }
    spans.extend(current);
    spans
}

fn element_spans(units: &[(usize, usize)], size: usize, overlap: usize) -> Vec<(usize, usize)> {
    let min_len = size / 10;
    let mut merged: Vec<(usize, usize)> = Vec::new();
    let mut pending: Option<(usize, usize)> = None;
    for &(s, e) in units {
        let unit = match pending.take() {
            Some((ps, _)) => (ps, e),
            None => (s, e),
        };
        if unit.1 - unit.0 < min_len {
            pending = Some(unit);
        } else {
            merged.push(unit);
        }
    }
    if let Some((ps, pe)) = pending {
        match merged.last_mut() {
            Some(last) => last.1 = pe,
            None => merged.push((ps, pe)),
        }
    }
    merged
        .into_iter()
        .flat_map(|(s, e)| {
            if e - s > size {
                sliding_spans(s, e, size, overlap)
            } else {
                vec![(s, e)]
            }
        })
        .collect()
}

fn scored_spans(
    body: &str,
    chars: &[char],
    scorer: &dyn BoundaryScorer,
    size: usize,
    overlap: usize,
) -> Vec<(usize, usize)> {
    let units = paragraph_units(chars);
    let candidates: Vec<usize> = units.iter().skip(1).map(|u| u.0).collect();
    let mut cuts: Vec<usize> = scorer
        .select_boundaries(body, &candidates)
        .into_iter()
        .filter(|c| candidates.contains(c))
        .collect();
    cuts.sort_unstable();
    cuts.dedup();
    let mut bounds = vec![0];
    bounds.extend(cuts);
    bounds.push(chars.len());
    let segments: Vec<(usize, usize)> = bounds.windows(2).map(|w| (w[0], w[1])).collect();
    segments
        .into_iter()
        .flat_map(|(s, e)| {
            if e - s > size {
                sliding_spans(s, e, size, overlap)
            } else {
                vec![(s, e)]
            }
        })
        .collect()
}

pub fn chunk_document(doc: &SourceDocument, params: ChunkParams) -> Result<Vec<Chunk>, ChunkError> {
    chunk_document_with(doc, params, None)
}

/// Chunks a document, optionally using a boundary scorer for the semantic
/// strategy.
pub fn chunk_document_with(
    doc: &SourceDocument,
    params: ChunkParams,
    scorer: Option<&dyn BoundaryScorer>,
) -> Result<Vec<Chunk>, ChunkError> {
    let ChunkParams {
        strategy,
        size,
        overlap,
    } = params;
    if size == 0 || overlap >= size {
        return Err(ChunkError::InvalidChunkParams { size, overlap });
    }
    let chars: Vec<char> = doc.body.chars().collect();
    let len = chars.len();
    let (spans, label) = match (strategy, scorer) {
        (ChunkStrategy::SlidingWindow, _) => (sliding_spans(0, len, size, overlap), ChunkStrategy::SlidingWindow),
        (ChunkStrategy::Element, _) => (
            element_spans(&paragraph_units(&chars), size, overlap),
            ChunkStrategy::Element,
        ),
        (ChunkStrategy::Semantic, Some(scorer)) => (
            scored_spans(&doc.body, &chars, scorer, size, overlap),
            ChunkStrategy::Semantic,
        ),
        (ChunkStrategy::Paragraph | ChunkStrategy::Semantic, _) => (
            pack_units(&paragraph_units(&chars), size, overlap),
            ChunkStrategy::Paragraph,
        ),
    };
    Ok(spans
        .into_iter()
        .enumerate()
        .map(|(chunk_index, (char_start, char_end))| Chunk {
            doc_id: doc.doc_id.clone(),
            chunk_index,
            char_start,
            char_end,
            text: chars[char_start..char_end].iter().collect(),
            strategy: label,
        })
        .collect())
}
