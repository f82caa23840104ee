//! Page-first chunking under a prompt token budget.

use crate::document::{Document, Segment};

/// Counts tokens of arbitrary text. Implementations must be deterministic,
/// return 0 for the empty string, and never shrink when text is appended.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Approximate tokenizer: split on whitespace, then split each run into
/// maximal alphanumeric and non-alphanumeric groups; each group is a token.
///
/// `"75|02"` is three tokens, `"foo bar"` two.
#[derive(Debug, Clone, Copy, Default)]
pub struct DefaultTokenCounter;

impl TokenCounter for DefaultTokenCounter {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace()
            .map(|run| {
                let mut groups = 0;
                let mut prev: Option<bool> = None;
                for c in run.chars() {
                    let alnum = c.is_alphanumeric();
                    if prev != Some(alnum) {
                        groups += 1;
                        prev = Some(alnum);
                    }
                }
                groups
            })
            .sum()
    }
}

impl<T: TokenCounter + ?Sized> TokenCounter for &T {
    fn count(&self, text: &str) -> usize {
        (**self).count(text)
    }
}

impl<T: TokenCounter + ?Sized> TokenCounter for Box<T> {
    fn count(&self, text: &str) -> usize {
        (**self).count(text)
    }
}

pub fn default_token_counter() -> DefaultTokenCounter {
    DefaultTokenCounter
}

/// A contiguous run of one page's segments whose prompt fits the budget.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentChunk {
    pub doc_id: String,
    pub source_page_index: usize,
    /// Position among all chunks of the document.
    pub chunk_index: usize,
    /// Index of the first segment within the source page.
    pub segment_offset: usize,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChunkError {
    #[error("segment {segment_index} on page {page_index} ({text_prefix:?}) needs {cost} tokens alone, over the limit of {limit}")]
    SegmentTooLarge { page_index: usize, segment_index: usize, text_prefix: String, cost: usize, limit: usize },
}

/// Splits each page into chunks whose `prompt_cost` stays within `limit`.
///
/// Each chunk is the largest prefix of the remaining segments that fits.
/// `prompt_cost` must cover the whole prompt (task and schema included) and
/// be non-decreasing as segments are appended, which lets the split point be
/// found by bisection. Pages without segments produce no chunk.
pub fn chunk_document<F>(doc: &Document, limit: usize, prompt_cost: F) -> Result<Vec<DocumentChunk>, ChunkError>
where
    F: Fn(&[Segment]) -> usize,
{
    let mut chunks = Vec::new();
    for (page_index, page) in doc.pages.iter().enumerate() {
        let segments = &page.segments;
        let mut start = 0;
        while start < segments.len() {
            let rest = &segments[start..];
            let take = if prompt_cost(rest) <= limit {
                rest.len()
            } else {
                let first = prompt_cost(&rest[..1]);
                if first > limit {
                    return Err(ChunkError::SegmentTooLarge {
                        page_index,
                        segment_index: start,
                        text_prefix: rest[0].text.chars().take(40).collect(),
                        cost: first,
                        limit,
                    });
                }
                // invariant: rest[..lo] fits, rest[..hi] does not
                let (mut lo, mut hi) = (1, rest.len());
                while hi - lo > 1 {
                    let mid = lo + (hi - lo) / 2;
                    if prompt_cost(&rest[..mid]) <= limit {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo
            };
            chunks.push(DocumentChunk {
                doc_id: doc.doc_id.clone(),
                source_page_index: page_index,
                chunk_index: chunks.len(),
                segment_offset: start,
                segments: rest[..take].to_vec(),
            });
            start += take;
        }
    }
    Ok(chunks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::{Page, SegmentLevel, Word};
    use crate::geometry::BoundingBox;

    fn page(n: usize) -> Page {
        let bbox = BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        Page {
            width: 1.0,
            height: 1.0,
            segments: (0..n)
                .map(|i| Segment {
                    text: format!("s{i}"),
                    bbox,
                    words: vec![Word { text: format!("s{i}"), bbox }],
                    level: SegmentLevel::Line,
                })
                .collect(),
        }
    }

    /// Literal transcription of the downward scan: for j = |S| down to 1,
    /// take the first prefix that fits.
    fn linear_scan(doc: &Document, limit: usize, f: &dyn Fn(&[Segment]) -> usize) -> Option<Vec<(usize, Vec<String>)>> {
        let mut out = Vec::new();
        for (pi, p) in doc.pages.iter().enumerate() {
            let mut s: &[Segment] = &p.segments;
            while !s.is_empty() {
                let j = (1..=s.len()).rev().find(|&j| f(&s[..j]) <= limit)?;
                out.push((pi, s[..j].iter().map(|x| x.text.clone()).collect()));
                s = &s[j..];
            }
        }
        Some(out)
    }

    #[test]
    fn counter_examples() {
        let c = default_token_counter();
        assert_eq!(c.count(""), 0);
        assert_eq!(c.count("foo bar"), 2);
        assert_eq!(c.count("75|02"), 3);
        assert_eq!(c.count("  \n\t "), 0);
        assert_eq!(c.count("$600.00"), 4);
    }

    #[test]
    fn five_segments_limit_three() {
        let doc = Document { doc_id: "d".into(), pages: vec![page(5)] };
        let chunks = chunk_document(&doc, 3, |s| s.len()).unwrap();
        let texts: Vec<Vec<&str>> =
            chunks.iter().map(|c| c.segments.iter().map(|s| s.text.as_str()).collect()).collect();
        assert_eq!(texts, vec![vec!["s0", "s1", "s2"], vec!["s3", "s4"]]);
        assert_eq!(chunks[1].segment_offset, 3);
        assert_eq!(chunks[1].chunk_index, 1);
    }

    #[test]
    fn whole_pages_fit() {
        let doc = Document { doc_id: "d".into(), pages: vec![page(4), page(0), page(2)] };
        let chunks = chunk_document(&doc, 100, |s| s.len()).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].source_page_index, 0);
        assert_eq!(chunks[1].source_page_index, 2);
        assert_eq!(chunks[1].chunk_index, 1);
    }

    #[test]
    fn oversized_segment() {
        let doc = Document { doc_id: "d".into(), pages: vec![page(1)] };
        let err = chunk_document(&doc, 5, |_| 10).unwrap_err();
        assert_eq!(
            err,
            ChunkError::SegmentTooLarge { page_index: 0, segment_index: 0, text_prefix: "s0".into(), cost: 10, limit: 5 }
        );
    }

    #[test]
    fn bisection_matches_linear_scan() {
        // costs with overhead and uneven segment weights
        for n in 1..25 {
            let doc = Document { doc_id: "d".into(), pages: vec![page(n), page(n / 2 + 1)] };
            let cost = |s: &[Segment]| 7 + s.iter().map(|x| x.text.len() * 2 + 1).sum::<usize>();
            for limit in 10..60 {
                let want = linear_scan(&doc, limit, &cost);
                let got = chunk_document(&doc, limit, cost).ok().map(|cs| {
                    cs.into_iter()
                        .map(|c| (c.source_page_index, c.segments.into_iter().map(|s| s.text).collect()))
                        .collect::<Vec<_>>()
                });
                assert_eq!(got, want, "n={n} limit={limit}");
            }
        }
    }
}
