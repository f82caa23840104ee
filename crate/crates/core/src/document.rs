//! OCR document model: pages of text segments with normalized geometry.
//!
//! Documents are read from a JSON file holding one entry per page with its
//! pixel dimensions and the OCR lines in reading order. Boxes are normalized
//! to the page once at load time; everything downstream works in `[0, 1]`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::{BoundingBox, BoxError, CONTAINMENT_TOLERANCE};

#[derive(Debug, thiserror::Error)]
pub enum DocumentError {
    #[error("malformed document input: {0}")]
    MalformedInput(String),
    #[error("geometry error on page {page}, segment {segment}{}: {reason}", word.map(|w| format!(", word {w}")).unwrap_or_default())]
    Geometry { page: usize, segment: usize, word: Option<usize>, reason: String },
    #[error("invalid page {page}: {reason}")]
    InvalidPage { page: usize, reason: String },
    #[error("document has no pages")]
    EmptyDocument,
    #[error("i/o error reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentLevel {
    Line,
    Word,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Word {
    pub text: String,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub text: String,
    pub bbox: BoundingBox,
    pub words: Vec<Word>,
    pub level: SegmentLevel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Page {
    pub width: f64,
    pub height: f64,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub pages: Vec<Page>,
}

/// Inclusive range of word indices within a segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WordRange {
    pub start: usize,
    pub end: usize,
}

/// Collapses every run of whitespace to a single space and trims the ends.
pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl Segment {
    /// Words joined by single spaces.
    pub fn joined_words(&self) -> String {
        self.words.iter().map(|w| w.text.as_str()).collect::<Vec<_>>().join(" ")
    }

    /// Envelope of the words in `range`.
    pub fn range_box(&self, range: WordRange) -> Option<BoundingBox> {
        self.words.get(range.start..=range.end).and_then(|ws| BoundingBox::envelope(ws.iter().map(|w| &w.bbox)))
    }
}

impl Document {
    /// Re-expresses every page at the requested segment granularity.
    ///
    /// Word level turns each OCR word into its own single-word segment.
    pub fn at_level(&self, level: SegmentLevel) -> Document {
        match level {
            SegmentLevel::Line => self.clone(),
            SegmentLevel::Word => Document {
                doc_id: self.doc_id.clone(),
                pages: self
                    .pages
                    .iter()
                    .map(|p| Page {
                        width: p.width,
                        height: p.height,
                        segments: p
                            .segments
                            .iter()
                            .flat_map(|s| s.words.iter())
                            .map(|w| Segment {
                                text: w.text.clone(),
                                bbox: w.bbox,
                                words: vec![w.clone()],
                                level: SegmentLevel::Word,
                            })
                            .collect(),
                    })
                    .collect(),
            },
        }
    }

    /// All segment texts joined by newlines, no layout tokens.
    pub fn plain_text(&self) -> String {
        self.pages
            .iter()
            .flat_map(|p| p.segments.iter())
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn segment_count(&self) -> usize {
        self.pages.iter().map(|p| p.segments.len()).sum()
    }
}

// ---------------------------------------------------------------------------
// File format

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxUnits {
    #[default]
    Pixels,
    Normalized,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDocument {
    doc_id: String,
    pages: Vec<RawPage>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPage {
    width: f64,
    height: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    box_units: Option<BoxUnits>,
    lines: Vec<RawLine>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLine {
    text: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    words: Option<Vec<RawWord>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWord {
    text: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

pub fn load_document_file(path: impl AsRef<Path>) -> Result<Document, DocumentError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| DocumentError::Io { path: path.display().to_string(), source })?;
    load_document(&text)
}

/// Parses and validates a document from its JSON text.
pub fn load_document(json: &str) -> Result<Document, DocumentError> {
    let raw: RawDocument = serde_json::from_str(json).map_err(|e| DocumentError::MalformedInput(e.to_string()))?;
    if raw.pages.is_empty() {
        return Err(DocumentError::EmptyDocument);
    }
    let pages = raw
        .pages
        .into_iter()
        .enumerate()
        .map(|(i, p)| convert_page(i, p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Document { doc_id: raw.doc_id, pages })
}

fn convert_page(page_idx: usize, raw: RawPage) -> Result<Page, DocumentError> {
    if !(raw.width > 0.0 && raw.height > 0.0 && raw.width.is_finite() && raw.height.is_finite()) {
        return Err(DocumentError::InvalidPage {
            page: page_idx,
            reason: format!("page dimensions must be positive, got {}x{}", raw.width, raw.height),
        });
    }
    let (sx, sy) = match raw.box_units.unwrap_or_default() {
        BoxUnits::Pixels => (raw.width, raw.height),
        BoxUnits::Normalized => (1.0, 1.0),
    };
    let normalize = |b: [f64; 4]| BoundingBox::new(b[0] / sx, b[1] / sy, b[2] / sx, b[3] / sy);
    let geometry = |segment: usize, word: Option<usize>, e: BoxError| DocumentError::Geometry {
        page: page_idx,
        segment,
        word,
        reason: e.to_string(),
    };

    let mut segments = Vec::with_capacity(raw.lines.len());
    for (si, line) in raw.lines.into_iter().enumerate() {
        let bbox = normalize(line.bbox).map_err(|e| geometry(si, None, e))?;
        let words = match line.words {
            Some(raw_words) => {
                let mut words = Vec::with_capacity(raw_words.len());
                for (wi, w) in raw_words.into_iter().enumerate() {
                    let wb = normalize(w.bbox).map_err(|e| geometry(si, Some(wi), e))?;
                    if w.text.trim().is_empty() || w.text.contains(['\n', '\r']) {
                        return Err(DocumentError::Geometry {
                            page: page_idx,
                            segment: si,
                            word: Some(wi),
                            reason: "word text must be non-empty and single-line".into(),
                        });
                    }
                    if !bbox.contains(&wb, CONTAINMENT_TOLERANCE) {
                        return Err(DocumentError::Geometry {
                            page: page_idx,
                            segment: si,
                            word: Some(wi),
                            reason: "word box is not contained in its segment box".into(),
                        });
                    }
                    words.push(Word { text: w.text, bbox: wb });
                }
                words
            }
            // line-only OCR: the segment box stands in for each word
            None => line.text.split_whitespace().map(|t| Word { text: t.to_string(), bbox }).collect(),
        };
        let segment = Segment { text: line.text, bbox, words, level: SegmentLevel::Line };
        if segment.joined_words() != collapse_whitespace(&segment.text) {
            return Err(DocumentError::Geometry {
                page: page_idx,
                segment: si,
                word: None,
                reason: format!(
                    "word texts {:?} do not reproduce segment text {:?}",
                    segment.joined_words(),
                    segment.text
                ),
            });
        }
        segments.push(segment);
    }
    Ok(Page { width: raw.width, height: raw.height, segments })
}

/// Writes a document back to the file format with normalized boxes.
pub fn serialize_document(doc: &Document) -> String {
    let raw = RawDocument {
        doc_id: doc.doc_id.clone(),
        pages: doc
            .pages
            .iter()
            .map(|p| RawPage {
                width: p.width,
                height: p.height,
                box_units: Some(BoxUnits::Normalized),
                lines: p
                    .segments
                    .iter()
                    .map(|s| RawLine {
                        text: s.text.clone(),
                        bbox: s.bbox.into(),
                        words: Some(s.words.iter().map(|w| RawWord { text: w.text.clone(), bbox: w.bbox.into() }).collect()),
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string(&raw).expect("document serialization is infallible")
}

// ---------------------------------------------------------------------------
// Text location

/// Finds every occurrence of `extracted_text` on the segment's word sequence.
///
/// Comparison is case-sensitive with whitespace runs collapsed on both sides.
/// A match that starts or ends inside a word reports the covering word range.
/// Results are in order of match start and free of duplicates.
pub fn locate_text_in_segment(segment: &Segment, extracted_text: &str) -> Vec<WordRange> {
    let query = collapse_whitespace(extracted_text);
    if query.is_empty() || segment.words.is_empty() {
        return Vec::new();
    }
    let mut starts = Vec::with_capacity(segment.words.len());
    let mut haystack = String::new();
    for (i, w) in segment.words.iter().enumerate() {
        if i > 0 {
            haystack.push(' ');
        }
        starts.push(haystack.len());
        haystack.push_str(&w.text);
    }
    let word_at = |byte: usize| starts.partition_point(|&s| s <= byte) - 1;

    let mut out: Vec<WordRange> = Vec::new();
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(&query) {
        let s = from + pos;
        let e = s + query.len();
        let range = WordRange { start: word_at(s), end: word_at(e - 1) };
        if !out.contains(&range) {
            out.push(range);
        }
        // step one char forward to allow overlapping occurrences
        from = s + haystack[s..].chars().next().map_or(1, char::len_utf8);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(text: &str) -> Segment {
        let bbox = BoundingBox::new(0.0, 0.0, 1.0, 0.1).unwrap();
        Segment {
            text: text.into(),
            bbox,
            words: text.split_whitespace().map(|t| Word { text: t.into(), bbox }).collect(),
            level: SegmentLevel::Line,
        }
    }

    /// Oracle: try every word range, keep those whose joined text contains the
    /// query and where no strictly smaller range does at the same position.
    fn brute_force(segment: &Segment, query: &str) -> Vec<(usize, usize)> {
        let q = collapse_whitespace(query);
        let n = segment.words.len();
        let mut hits = Vec::new();
        for a in 0..n {
            for b in a..n {
                let t = segment.words[a..=b].iter().map(|w| w.text.as_str()).collect::<Vec<_>>().join(" ");
                let shrink_left = a < b && {
                    let t2 = segment.words[a + 1..=b].iter().map(|w| w.text.as_str()).collect::<Vec<_>>().join(" ");
                    t2.contains(&q)
                };
                let shrink_right = a < b && {
                    let t2 = segment.words[a..b].iter().map(|w| w.text.as_str()).collect::<Vec<_>>().join(" ");
                    t2.contains(&q)
                };
                if t.contains(&q) && !shrink_left && !shrink_right {
                    hits.push((a, b));
                }
            }
        }
        hits
    }

    #[test]
    fn minimal_document_loads() {
        let doc = load_document(
            r#"{"doc_id": "d", "pages": [{"width": 100, "height": 50, "lines": [{"text": "14086", "box": [10, 5, 40, 15]}]}]}"#,
        )
        .unwrap();
        assert_eq!(doc.pages.len(), 1);
        assert_eq!(doc.pages[0].segments.len(), 1);
        let s = &doc.pages[0].segments[0];
        assert_eq!(s.bbox, BoundingBox::new(0.1, 0.1, 0.4, 0.3).unwrap());
        assert_eq!(s.words.len(), 1);
        assert_eq!(s.words[0].bbox, s.bbox);
    }

    #[test]
    fn inverted_box_reports_segment() {
        let err = load_document(
            r#"{"doc_id": "d", "pages": [{"width": 100, "height": 100, "lines": [
                {"text": "ok", "box": [0, 0, 10, 10]},
                {"text": "bad", "box": [50, 0, 40, 10]}]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, DocumentError::Geometry { page: 0, segment: 1, word: None, .. }), "{err}");
    }

    #[test]
    fn empty_and_malformed() {
        assert!(matches!(load_document(r#"{"doc_id": "d", "pages": []}"#), Err(DocumentError::EmptyDocument)));
        assert!(matches!(load_document("{"), Err(DocumentError::MalformedInput(_))));
        assert!(matches!(
            load_document(r#"{"doc_id": "d", "pages": [{"width": 0, "height": 1, "lines": []}]}"#),
            Err(DocumentError::InvalidPage { page: 0, .. })
        ));
    }

    #[test]
    fn word_outside_segment_is_rejected() {
        let err = load_document(
            r#"{"doc_id": "d", "pages": [{"width": 100, "height": 100, "lines": [
                {"text": "a b", "box": [0, 0, 10, 10], "words": [
                    {"text": "a", "box": [0, 0, 5, 10]}, {"text": "b", "box": [5, 0, 20, 10]}]}]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, DocumentError::Geometry { word: Some(1), .. }));
    }

    #[test]
    fn words_must_reproduce_text() {
        let err = load_document(
            r#"{"doc_id": "d", "pages": [{"width": 1, "height": 1, "lines": [
                {"text": "a  b", "box": [0, 0, 1, 1], "words": [{"text": "a", "box": [0, 0, 0.5, 1]}]}]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, DocumentError::Geometry { word: None, .. }));
        // collapsed whitespace is fine
        load_document(
            r#"{"doc_id": "d", "pages": [{"width": 1, "height": 1, "lines": [
                {"text": "a  b", "box": [0, 0, 1, 1], "words": [{"text": "a", "box": [0, 0, 0.5, 1]}, {"text": "b", "box": [0.5, 0, 1, 1]}]}]}]}"#,
        )
        .unwrap();
    }

    #[test]
    fn pre_normalized_pages() {
        let doc = load_document(
            r#"{"doc_id": "d", "pages": [{"width": 1, "height": 1, "lines": [{"text": "x", "box": [0.2, 0.3, 0.4, 0.5]}]}]}"#,
        )
        .unwrap();
        assert_eq!(doc.pages[0].segments[0].bbox, BoundingBox::new(0.2, 0.3, 0.4, 0.5).unwrap());
    }

    #[test]
    fn locate_repeated_dates() {
        let s = seg("Flight Dates: 03/03/20 - 03/03/20");
        assert_eq!(
            locate_text_in_segment(&s, "03/03/20"),
            vec![WordRange { start: 2, end: 2 }, WordRange { start: 4, end: 4 }]
        );
        assert_eq!(brute_force(&s, "03/03/20"), vec![(2, 2), (4, 4)]);
    }

    #[test]
    fn locate_identity_and_absent() {
        let s = seg("14086");
        assert_eq!(locate_text_in_segment(&s, "14086"), vec![WordRange { start: 0, end: 0 }]);
        assert!(locate_text_in_segment(&s, "99999").is_empty());
        assert!(locate_text_in_segment(&s, "   ").is_empty());
    }

    #[test]
    fn locate_partial_words_and_spacing() {
        let s = seg("Tuesday Prime Other CM");
        assert_eq!(locate_text_in_segment(&s, "day  Prime Ot"), vec![WordRange { start: 0, end: 2 }]);
        assert!(locate_text_in_segment(&s, "tuesday").is_empty(), "case-sensitive");
    }

    #[test]
    fn locate_matches_brute_force_on_samples() {
        for (text, q) in [
            ("a a a", "a a"),
            ("ab ab", "b a"),
            ("x yy x", "y"),
            ("3 $200.00 0.00", "0.0"),
            ("N 1 3 03/03/20 03/03/20 Tuesday", "3"),
        ] {
            let s = seg(text);
            let got: Vec<_> = locate_text_in_segment(&s, q).iter().map(|r| (r.start, r.end)).collect();
            let mut want = brute_force(&s, q);
            want.sort();
            let mut got_sorted = got.clone();
            got_sorted.sort();
            assert_eq!(got_sorted, want, "{text:?} / {q:?}");
        }
    }

    #[test]
    fn word_level_view() {
        let doc = load_document(
            r#"{"doc_id": "d", "pages": [{"width": 1, "height": 1, "lines": [{"text": "a b", "box": [0, 0, 1, 0.1]}, {"text": "c", "box": [0, 0.2, 1, 0.3]}]}]}"#,
        )
        .unwrap();
        let w = doc.at_level(SegmentLevel::Word);
        assert_eq!(w.pages[0].segments.len(), 3);
        assert!(w.pages[0].segments.iter().all(|s| s.level == SegmentLevel::Word && s.words.len() == 1));
        assert_eq!(doc.plain_text(), "a b\nc");
    }
}
