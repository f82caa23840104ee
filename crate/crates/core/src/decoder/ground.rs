//! Entity value parsing and grounding against the chunk's segments.

use regex::Regex;

use crate::chunker::DocumentChunk;
use crate::document::{collapse_whitespace, locate_text_in_segment};
use crate::geometry::BoundingBox;
use crate::prompt::{CoordinateScheme, IdentifierStyle, SegmentIdMap};

use super::SegmentRef;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ValueError {
    #[error("invalid entity value format: {0}")]
    InvalidValueFormat(String),
    #[error("identifier {0} names no segment in the chunk")]
    HallucinatedSegment(String),
    #[error("text {text:?} not found on segment {identifier}")]
    TextNotFound { identifier: String, text: String },
}

/// A chunk prepared for grounding: its identifier map and the identifier
/// pattern of the scheme it was rendered with.
#[derive(Debug, Clone)]
pub struct ChunkView<'a> {
    pub chunk: &'a DocumentChunk,
    pub ids: SegmentIdMap,
    pattern: Regex,
}

impl<'a> ChunkView<'a> {
    pub fn new(chunk: &'a DocumentChunk, scheme: &CoordinateScheme) -> Self {
        Self { chunk, ids: SegmentIdMap::build(&chunk.segments, scheme), pattern: identifier_pattern(scheme) }
    }
}

pub fn identifier_pattern(scheme: &CoordinateScheme) -> Regex {
    let w = scheme.buckets.digit_width();
    let src = match scheme.identifier_style {
        IdentifierStyle::Center2 => format!(r"\d{{{w}}}\|\d{{{w}}}"),
        IdentifierStyle::Corners4 => format!(r"\d{{{w}}}\|\d{{{w}}}\|\d{{{w}}}\|\d{{{w}}}"),
        IdentifierStyle::LineIndex => r"<\d+>".to_string(),
    };
    Regex::new(&src).expect("identifier pattern is valid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundedValue {
    /// Per-segment texts, whitespace-collapsed, joined by newlines.
    pub value_text: String,
    pub segment_refs: Vec<SegmentRef>,
    /// Envelope of every matched word.
    pub bbox: BoundingBox,
}

/// Splits `value` into `(text, identifier)` pairs. Identifiers must be
/// bounded by whitespace or the ends of the value.
pub fn split_value<'v>(value: &'v str, pattern: &Regex) -> Result<Vec<(&'v str, &'v str)>, ValueError> {
    let mut pairs = Vec::new();
    let mut cursor = 0;
    for m in pattern.find_iter(value) {
        let before = value[..m.start()].chars().next_back().is_none_or(char::is_whitespace);
        let after = value[m.end()..].chars().next().is_none_or(char::is_whitespace);
        if !(before && after) {
            continue;
        }
        let text = value[cursor..m.start()].trim();
        if text.is_empty() {
            return Err(ValueError::InvalidValueFormat(format!("identifier {} has no text", m.as_str())));
        }
        pairs.push((text, m.as_str()));
        cursor = m.end();
    }
    if !value[cursor..].trim().is_empty() {
        return Err(ValueError::InvalidValueFormat(format!("text {:?} has no identifier", value[cursor..].trim())));
    }
    if pairs.is_empty() {
        return Err(ValueError::InvalidValueFormat("empty value".into()));
    }
    Ok(pairs)
}

/// Grounds every `(text, identifier)` pair of `value` on the chunk.
///
/// Among segments sharing an identifier, the first one containing the text
/// wins; within it, the first match in word order.
pub fn parse_entity_value(value: &str, view: &ChunkView<'_>) -> Result<GroundedValue, ValueError> {
    let pairs = split_value(value, &view.pattern)?;
    let mut texts = Vec::with_capacity(pairs.len());
    let mut refs = Vec::with_capacity(pairs.len());
    let mut boxes = Vec::with_capacity(pairs.len());
    for (text, id) in pairs {
        let candidates = view.ids.lookup(id);
        if candidates.is_empty() {
            return Err(ValueError::HallucinatedSegment(id.to_string()));
        }
        let (index, range) = candidates
            .iter()
            .find_map(|&i| locate_text_in_segment(&view.chunk.segments[i], text).first().map(|r| (i, *r)))
            .ok_or_else(|| ValueError::TextNotFound { identifier: id.to_string(), text: text.to_string() })?;
        boxes.push(view.chunk.segments[index].range_box(range).expect("located range is in bounds"));
        refs.push(SegmentRef { identifier: id.to_string(), segment_index: index });
        texts.push(collapse_whitespace(text));
    }
    Ok(GroundedValue {
        value_text: texts.join("\n"),
        segment_refs: refs,
        bbox: BoundingBox::envelope(&boxes).expect("at least one pair"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::{Segment, SegmentLevel, Word};

    fn bb(a: f64, b: f64, c: f64, d: f64) -> BoundingBox {
        BoundingBox::new(a, b, c, d).unwrap()
    }

    /// Words get equal slices of the segment width.
    fn seg(text: &str, b: BoundingBox) -> Segment {
        let ws: Vec<&str> = text.split_whitespace().collect();
        let step = b.width() / ws.len() as f64;
        let words = ws
            .iter()
            .enumerate()
            .map(|(i, t)| Word {
                text: t.to_string(),
                bbox: bb(b.x_min + step * i as f64, b.y_min, b.x_min + step * (i + 1) as f64, b.y_max),
            })
            .collect();
        Segment { text: text.into(), bbox: b, words, level: SegmentLevel::Line }
    }

    fn chunk(segments: Vec<Segment>) -> DocumentChunk {
        DocumentChunk { doc_id: "d".into(), source_page_index: 0, chunk_index: 0, segment_offset: 0, segments }
    }

    #[test]
    fn single_segment_value() {
        let c = chunk(vec![seg("14086", bb(0.281, 0.086, 0.30, 0.096))]);
        let view = ChunkView::new(&c, &CoordinateScheme::default());
        let g = parse_entity_value("14086 29|09", &view).unwrap();
        assert_eq!(g.value_text, "14086");
        assert_eq!(g.bbox, c.segments[0].words[0].bbox);
        assert_eq!(g.segment_refs, vec![SegmentRef { identifier: "29|09".into(), segment_index: 0 }]);
    }

    #[test]
    fn two_segment_value_envelope() {
        let c = chunk(vec![
            seg("N 1 3 Tuesday Prime Other", bb(0.022, 0.626, 0.60, 0.636)),
            seg("Your Voice Your Vote", bb(0.231, 0.641, 0.35, 0.645)),
        ]);
        let view = ChunkView::new(&c, &CoordinateScheme::default());
        let g = parse_entity_value("Tuesday Prime 31|63\nYour Voice Your Vote 29|64", &view).unwrap();
        assert_eq!(g.value_text, "Tuesday Prime\nYour Voice Your Vote");
        let first = c.segments[0].range_box(crate::document::WordRange { start: 3, end: 4 }).unwrap();
        assert_eq!(g.bbox, first.union(&c.segments[1].bbox));
    }

    #[test]
    fn discards() {
        let c = chunk(vec![seg("14086", bb(0.281, 0.086, 0.30, 0.096))]);
        let view = ChunkView::new(&c, &CoordinateScheme::default());
        assert_eq!(
            parse_entity_value("ghost text 99|99", &view),
            Err(ValueError::HallucinatedSegment("99|99".into()))
        );
        assert!(matches!(parse_entity_value("99999 29|09", &view), Err(ValueError::TextNotFound { .. })));
        for bad in ["", "14086", "29|09", "14086 29|09 tail", "14086 29|0"] {
            assert!(matches!(parse_entity_value(bad, &view), Err(ValueError::InvalidValueFormat(_))), "{bad:?}");
        }
    }

    #[test]
    fn identifiers_must_be_whitespace_bounded() {
        let p = identifier_pattern(&CoordinateScheme::default());
        assert_eq!(split_value("a 12|34", &p).unwrap(), vec![("a", "12|34")]);
        assert!(split_value("a 12|34|56|78", &p).is_err());
        assert!(split_value("a12|34", &p).is_err());
        assert_eq!(split_value("a  b\t12|34 \n c 56|78\n", &p).unwrap(), vec![("a  b", "12|34"), ("c", "56|78")]);
        let li = identifier_pattern(&CoordinateScheme::default().with_style(IdentifierStyle::LineIndex));
        assert_eq!(split_value("x <12>", &li).unwrap(), vec![("x", "<12>")]);
    }

    #[test]
    fn collision_resolves_to_first_containing_segment() {
        let c = chunk(vec![seg("alpha", bb(0.50, 0.50, 0.502, 0.502)), seg("beta", bb(0.50, 0.50, 0.508, 0.508))]);
        let view = ChunkView::new(&c, &CoordinateScheme::default());
        assert_eq!(parse_entity_value("beta 50|50", &view).unwrap().segment_refs[0].segment_index, 1);
        assert_eq!(parse_entity_value("alpha 50|50", &view).unwrap().segment_refs[0].segment_index, 0);
        assert!(matches!(parse_entity_value("gamma 50|50", &view), Err(ValueError::TextNotFound { .. })));
    }
}
