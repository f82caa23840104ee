//! Layout-aware prompt rendering.
//!
//! A prompt has three tagged sections:
//!
//! ```text
//! <Document>
//! {segment text} {identifier}      one line per segment
//! </Document>
//! <Task>
//! {task description}
//! {schema}
//! </Task>
//! <Extraction>
//! ```
//!
//! Identifiers are quantized coordinates (`"75|02"`, `"66|02|83|03"`) or a
//! line index (`"<0>"`), depending on the [`CoordinateScheme`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::chunker::{DocumentChunk, TokenCounter};
use crate::document::{Segment, SegmentLevel};
use crate::schema::{render_schema, ExtractionSchema};

pub const DEFAULT_TASK_DESCRIPTION: &str =
    "From the document, extract the text values and tags of the following entities:";

pub const DOCUMENT_OPEN: &str = "<Document>";
pub const DOCUMENT_CLOSE: &str = "</Document>";
pub const TASK_OPEN: &str = "<Task>";
pub const TASK_CLOSE: &str = "</Task>";
pub const EXTRACTION_OPEN: &str = "<Extraction>";
pub const EXTRACTION_CLOSE: &str = "</Extraction>";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PromptError {
    #[error("coordinate {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("bucket count must be at least 2, got {0}")]
    InvalidBuckets(u32),
    #[error("invalid coordinate scheme {0:?}: expected level:style:buckets[:indentN]")]
    InvalidScheme(String),
    #[error("text does not follow the prompt layout: {0}")]
    Malformed(String),
    #[error("target prompt alone needs {needed} tokens, over the limit of {limit}")]
    NoExemplarFits { needed: usize, limit: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IdentifierStyle {
    #[serde(rename = "center_2")]
    Center2,
    #[serde(rename = "corners_4")]
    Corners4,
    #[serde(rename = "line_index")]
    LineIndex,
}

impl IdentifierStyle {
    pub fn as_str(self) -> &'static str {
        match self {
            IdentifierStyle::Center2 => "center_2",
            IdentifierStyle::Corners4 => "corners_4",
            IdentifierStyle::LineIndex => "line_index",
        }
    }
}

/// Number of quantization buckets, at least 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Buckets(u32);

impl Buckets {
    pub fn new(n: u32) -> Result<Self, PromptError> {
        if n < 2 {
            return Err(PromptError::InvalidBuckets(n));
        }
        Ok(Self(n))
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// Decimal digits of the largest bucket index.
    pub fn digit_width(self) -> usize {
        (self.0 - 1).to_string().len()
    }
}

impl TryFrom<u32> for Buckets {
    type Error = PromptError;
    fn try_from(n: u32) -> Result<Self, Self::Error> {
        Buckets::new(n)
    }
}

impl From<Buckets> for u32 {
    fn from(b: Buckets) -> u32 {
        b.0
    }
}

impl Default for Buckets {
    fn default() -> Self {
        Buckets(100)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoordinateScheme {
    #[serde(default = "default_level")]
    pub segment_level: SegmentLevel,
    #[serde(default = "default_style")]
    pub identifier_style: IdentifierStyle,
    #[serde(default)]
    pub buckets: Buckets,
    #[serde(default)]
    pub json_indent: Option<usize>,
}

fn default_level() -> SegmentLevel {
    SegmentLevel::Line
}

fn default_style() -> IdentifierStyle {
    IdentifierStyle::Center2
}

impl Default for CoordinateScheme {
    fn default() -> Self {
        Self {
            segment_level: SegmentLevel::Line,
            identifier_style: IdentifierStyle::Center2,
            buckets: Buckets::default(),
            json_indent: None,
        }
    }
}

impl CoordinateScheme {
    pub fn with_style(mut self, style: IdentifierStyle) -> Self {
        self.identifier_style = style;
        self
    }

    pub fn with_level(mut self, level: SegmentLevel) -> Self {
        self.segment_level = level;
        self
    }

    pub fn with_buckets(mut self, buckets: Buckets) -> Self {
        self.buckets = buckets;
        self
    }

    pub fn with_indent(mut self, indent: Option<usize>) -> Self {
        self.json_indent = indent;
        self
    }
}

/// `level:style:buckets`, plus `:indentN` when the JSON is indented,
/// e.g. `line:center_2:100` or `word:corners_4:1000:indent4`.
impl fmt::Display for CoordinateScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.segment_level {
            SegmentLevel::Line => "line",
            SegmentLevel::Word => "word",
        };
        write!(f, "{level}:{}:{}", self.identifier_style.as_str(), self.buckets.get())?;
        if let Some(n) = self.json_indent {
            write!(f, ":indent{n}")?;
        }
        Ok(())
    }
}

impl FromStr for CoordinateScheme {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PromptError::InvalidScheme(s.to_string());
        let parts: Vec<&str> = s.split(':').collect();
        if !(3..=4).contains(&parts.len()) {
            return Err(bad());
        }
        let segment_level = match parts[0] {
            "line" => SegmentLevel::Line,
            "word" => SegmentLevel::Word,
            _ => return Err(bad()),
        };
        let identifier_style = match parts[1] {
            "center_2" => IdentifierStyle::Center2,
            "corners_4" => IdentifierStyle::Corners4,
            "line_index" => IdentifierStyle::LineIndex,
            _ => return Err(bad()),
        };
        let buckets = Buckets::new(parts[2].parse().map_err(|_| bad())?)?;
        let json_indent = match parts.get(3) {
            None => None,
            Some(p) => Some(p.strip_prefix("indent").and_then(|n| n.parse().ok()).ok_or_else(bad)?),
        };
        Ok(Self { segment_level, identifier_style, buckets, json_indent })
    }
}

/// Bucket index of a normalized coordinate: `min(floor(value * B), B - 1)`.
pub fn quantize(value: f64, buckets: u32) -> Result<u32, PromptError> {
    if buckets < 2 {
        return Err(PromptError::InvalidBuckets(buckets));
    }
    if !(0.0..=1.0).contains(&value) {
        return Err(PromptError::OutOfRange(value));
    }
    Ok(((value * buckets as f64).floor() as u32).min(buckets - 1))
}

/// Identifier naming `segment` in the prompt. `ordinal` is the segment's
/// position within its chunk and is only used by the line-index style.
pub fn segment_identifier(segment: &Segment, scheme: &CoordinateScheme, ordinal: usize) -> String {
    let b = scheme.buckets.get();
    let w = scheme.buckets.digit_width();
    // boxes are validated to [0, 1] at load, so quantization cannot fail
    let q = |v: f64| quantize(v.clamp(0.0, 1.0), b).expect("buckets validated");
    let bb = &segment.bbox;
    match scheme.identifier_style {
        IdentifierStyle::Center2 => format!("{:0w$}|{:0w$}", q(bb.x_center()), q(bb.y_center())),
        IdentifierStyle::Corners4 => format!(
            "{:0w$}|{:0w$}|{:0w$}|{:0w$}",
            q(bb.x_min),
            q(bb.y_min),
            q(bb.x_max),
            q(bb.y_max)
        ),
        IdentifierStyle::LineIndex => format!("<{ordinal}>"),
    }
}

/// Identifier → positions of the segments (within the chunk) that render it.
///
/// Several segments can quantize to the same identifier; all of them are
/// kept, in chunk order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SegmentIdMap {
    map: BTreeMap<String, Vec<usize>>,
    ids: Vec<String>,
}

impl SegmentIdMap {
    pub fn build(segments: &[Segment], scheme: &CoordinateScheme) -> Self {
        let mut out = SegmentIdMap::default();
        for (i, s) in segments.iter().enumerate() {
            let id = segment_identifier(s, scheme, i);
            out.map.entry(id.clone()).or_default().push(i);
            out.ids.push(id);
        }
        out
    }

    pub fn lookup(&self, id: &str) -> &[usize] {
        self.map.get(id).map_or(&[], Vec::as_slice)
    }

    /// Identifier of the segment at `position`.
    pub fn identifier(&self, position: usize) -> Option<&str> {
        self.ids.get(position).map(String::as_str)
    }

    /// Identifiers shared by more than one segment.
    pub fn collisions(&self) -> impl Iterator<Item = (&str, &[usize])> {
        self.map.iter().filter(|(_, v)| v.len() > 1).map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// One line per segment: text, a space, then its identifier.
pub fn render_document_section(segments: &[Segment], scheme: &CoordinateScheme) -> (String, SegmentIdMap) {
    let ids = SegmentIdMap::build(segments, scheme);
    let text = segments
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{} {}", s.text, ids.identifier(i).expect("one id per segment")))
        .collect::<Vec<_>>()
        .join("\n");
    (text, ids)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChunkRef {
    pub doc_id: String,
    pub chunk_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub text: String,
    pub chunk_ref: ChunkRef,
    pub segment_ids: SegmentIdMap,
}

fn assemble(document_section: &str, task_description: &str, schema_text: &str) -> String {
    format!(
        "{DOCUMENT_OPEN}\n{document_section}\n{DOCUMENT_CLOSE}\n{TASK_OPEN}\n{task_description}\n{schema_text}\n{TASK_CLOSE}\n{EXTRACTION_OPEN}\n"
    )
}

pub fn build_prompt(
    chunk: &DocumentChunk,
    schema: &ExtractionSchema,
    scheme: &CoordinateScheme,
    task_description: &str,
) -> Prompt {
    let (section, segment_ids) = render_document_section(&chunk.segments, scheme);
    let text = assemble(&section, task_description, &render_schema(schema, scheme.json_indent));
    Prompt {
        text,
        chunk_ref: ChunkRef { doc_id: chunk.doc_id.clone(), chunk_index: chunk.chunk_index },
        segment_ids,
    }
}

/// Token cost of the full prompt for a candidate list of segments, for use
/// as the chunker's budget function.
pub fn prompt_cost<'a, C: TokenCounter + ?Sized>(
    schema: &ExtractionSchema,
    scheme: &'a CoordinateScheme,
    task_description: &'a str,
    counter: &'a C,
) -> impl Fn(&[Segment]) -> usize + 'a {
    let schema_text = render_schema(schema, scheme.json_indent);
    move |segments: &[Segment]| {
        let (section, _) = render_document_section(segments, scheme);
        counter.count(&assemble(&section, task_description, &schema_text))
    }
}

/// The three sections recovered from a prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptParts {
    pub document: String,
    pub task_description: String,
    pub schema: String,
}

/// Inverse of [`build_prompt`]'s layout.
pub fn split_prompt(text: &str) -> Result<PromptParts, PromptError> {
    let malformed = |m: &str| PromptError::Malformed(m.to_string());
    let body = text
        .strip_prefix(&format!("{DOCUMENT_OPEN}\n"))
        .ok_or_else(|| malformed("missing <Document> header"))?;
    let doc_end = format!("\n{DOCUMENT_CLOSE}\n{TASK_OPEN}\n");
    let (document, rest) = body.split_once(&doc_end).ok_or_else(|| malformed("missing </Document> or <Task>"))?;
    let task = rest
        .strip_suffix(&format!("\n{TASK_CLOSE}\n{EXTRACTION_OPEN}\n"))
        .ok_or_else(|| malformed("missing </Task> or <Extraction> trailer"))?;
    let (task_description, schema) =
        task.split_once("\n{").ok_or_else(|| malformed("task section has no schema object"))?;
    Ok(PromptParts {
        document: document.to_string(),
        task_description: task_description.to_string(),
        schema: format!("{{{schema}"),
    })
}

/// A target prompt preceded by solved exemplars.
#[derive(Debug, Clone)]
pub struct IclPrompt {
    pub prompt: Prompt,
    /// How many of the offered exemplars made it into the prompt.
    pub exemplars_used: usize,
}

/// Prepends `(chunk, completion)` exemplar blocks to the target prompt.
///
/// Exemplars are taken in the order given; the first one that would push
/// the prompt over `limit` tokens is dropped along with everything after it.
#[allow(clippy::too_many_arguments)]
pub fn build_icl_prompt<C: TokenCounter + ?Sized>(
    exemplars: &[(DocumentChunk, String)],
    target: &DocumentChunk,
    schema: &ExtractionSchema,
    scheme: &CoordinateScheme,
    task_description: &str,
    limit: usize,
    counter: &C,
) -> Result<IclPrompt, PromptError> {
    let target_prompt = build_prompt(target, schema, scheme, task_description);
    let mut total = counter.count(&target_prompt.text);
    if total > limit {
        return Err(PromptError::NoExemplarFits { needed: total, limit });
    }
    let schema_text = render_schema(schema, scheme.json_indent);
    let mut prefix = String::new();
    let mut used = 0;
    for (chunk, completion) in exemplars {
        let (section, _) = render_document_section(&chunk.segments, scheme);
        let block = format!(
            "{}{completion}\n{EXTRACTION_CLOSE}\n",
            assemble(&section, task_description, &schema_text)
        );
        let cost = counter.count(&block);
        if total + cost > limit {
            break;
        }
        total += cost;
        prefix.push_str(&block);
        used += 1;
    }
    let mut prompt = target_prompt;
    prompt.text.insert_str(0, &prefix);
    Ok(IclPrompt { prompt, exemplars_used: used })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunker::DefaultTokenCounter;
    use crate::document::Word;
    use crate::geometry::BoundingBox;
    use crate::schema::load_schema;

    fn seg(text: &str, b: [f64; 4]) -> Segment {
        let bbox = BoundingBox::new(b[0], b[1], b[2], b[3]).unwrap();
        Segment {
            text: text.into(),
            bbox,
            words: text.split_whitespace().map(|t| Word { text: t.into(), bbox }).collect(),
            level: SegmentLevel::Line,
        }
    }

    fn chunk(segments: Vec<Segment>) -> DocumentChunk {
        DocumentChunk { doc_id: "d".into(), source_page_index: 0, chunk_index: 0, segment_offset: 0, segments }
    }

    #[test]
    fn quantize_edges() {
        assert_eq!(quantize(0.0, 100), Ok(0));
        assert_eq!(quantize(1.0, 100), Ok(99));
        assert_eq!(quantize(0.756, 100), Ok(75));
        assert_eq!(quantize(1.2, 100), Err(PromptError::OutOfRange(1.2)));
        assert_eq!(quantize(-0.1, 100), Err(PromptError::OutOfRange(-0.1)));
        assert_eq!(quantize(0.5, 1), Err(PromptError::InvalidBuckets(1)));
    }

    #[test]
    fn identifiers_per_style() {
        let s = seg("Print Date 02/28/20 14:21:20", [0.664, 0.022, 0.835, 0.034]);
        let scheme = CoordinateScheme::default();
        assert_eq!(segment_identifier(&s, &scheme, 0), "74|02");
        let s = seg("x", [0.70, 0.015, 0.80, 0.025]);
        assert_eq!(segment_identifier(&s, &scheme, 0), "75|02");
        let s4 = seg("x", [0.66, 0.02, 0.83, 0.03]);
        assert_eq!(segment_identifier(&s4, &scheme.with_style(IdentifierStyle::Corners4), 0), "66|02|83|03");
        assert_eq!(segment_identifier(&s4, &scheme.with_style(IdentifierStyle::LineIndex), 0), "<0>");
        let wide = scheme.with_buckets(Buckets::new(1000).unwrap());
        assert_eq!(segment_identifier(&s, &wide, 0), "750|020");
    }

    #[test]
    fn document_section_and_collisions() {
        let segs = vec![seg("ORDER", [0.48, 0.03, 0.50, 0.05]), seg("WSIL", [0.76, 0.06, 0.78, 0.08])];
        let (text, ids) = render_document_section(&segs, &CoordinateScheme::default());
        assert_eq!(text, "ORDER 49|04\nWSIL 77|07");
        assert_eq!(ids.collisions().count(), 0);

        let segs = vec![seg("", [0.1, 0.1, 0.2, 0.2])];
        assert_eq!(render_document_section(&segs, &CoordinateScheme::default()).0, " 15|15");

        let segs = vec![seg("a", [0.5, 0.5, 0.502, 0.502]), seg("b", [0.5, 0.5, 0.508, 0.508])];
        let (text, ids) = render_document_section(&segs, &CoordinateScheme::default());
        assert_eq!(text, "a 50|50\nb 50|50");
        assert_eq!(ids.collisions().collect::<Vec<_>>(), vec![("50|50", &[0usize, 1][..])]);
    }

    #[test]
    fn minimal_prompt_golden() {
        let schema = load_schema(r#"{"foo": ""}"#).unwrap();
        let c = chunk(vec![seg("14086", [0.28, 0.09, 0.30, 0.10])]);
        let p = build_prompt(&c, &schema, &CoordinateScheme::default(), DEFAULT_TASK_DESCRIPTION);
        assert_eq!(
            p.text,
            "<Document>\n14086 29|09\n</Document>\n<Task>\nFrom the document, extract the text values and tags of the following entities:\n{\"foo\": \"\"}\n</Task>\n<Extraction>\n"
        );
        let parts = split_prompt(&p.text).unwrap();
        assert_eq!(parts.document, "14086 29|09");
        assert_eq!(parts.task_description, DEFAULT_TASK_DESCRIPTION);
        assert_eq!(parts.schema, "{\"foo\": \"\"}");
    }

    #[test]
    fn split_rejects_garbage() {
        assert!(split_prompt("hello").is_err());
        assert!(split_prompt("<Document>\nx 01|01\n</Document>\n<Task>\nno schema\n</Task>\n<Extraction>\n").is_err());
    }

    #[test]
    fn scheme_strings() {
        for s in ["line:center_2:100", "word:corners_4:1000:indent4", "line:line_index:100"] {
            assert_eq!(s.parse::<CoordinateScheme>().unwrap().to_string(), s);
        }
        assert_eq!("line:center_2:100".parse::<CoordinateScheme>().unwrap(), CoordinateScheme::default());
        for bad in ["line", "line:center_2:1", "para:center_2:100", "line:center_2:100:4"] {
            assert!(bad.parse::<CoordinateScheme>().is_err(), "{bad}");
        }
    }

    #[test]
    fn icl_prompt_drops_exemplars_over_budget() {
        let schema = load_schema(r#"{"foo": ""}"#).unwrap();
        let scheme = CoordinateScheme::default();
        let target = chunk(vec![seg("target", [0.1, 0.1, 0.2, 0.2])]);
        let ex = |t: &str| (chunk(vec![seg(t, [0.3, 0.3, 0.4, 0.4])]), format!("{{\"foo\": \"{t} 35|35\"}}"));
        let exemplars = vec![ex("one"), ex("two"), ex("three")];
        let counter = DefaultTokenCounter;
        let base = counter.count(&build_prompt(&target, &schema, &scheme, DEFAULT_TASK_DESCRIPTION).text);
        let all = build_icl_prompt(&exemplars, &target, &schema, &scheme, DEFAULT_TASK_DESCRIPTION, 10_000, &counter).unwrap();
        assert_eq!(all.exemplars_used, 3);
        assert!(all.prompt.text.starts_with("<Document>\none 35|35\n</Document>\n"));
        assert!(all.prompt.text.contains("<Extraction>\n{\"foo\": \"one 35|35\"}\n</Extraction>\n<Document>\ntwo"));
        let per_block = (counter.count(&all.prompt.text) - base) / 3;
        let some =
            build_icl_prompt(&exemplars, &target, &schema, &scheme, DEFAULT_TASK_DESCRIPTION, base + per_block * 2, &counter)
                .unwrap();
        assert_eq!(some.exemplars_used, 2);
        assert!(counter.count(&some.prompt.text) <= base + per_block * 2);
        assert!(matches!(
            build_icl_prompt(&exemplars, &target, &schema, &scheme, DEFAULT_TASK_DESCRIPTION, base - 1, &counter),
            Err(PromptError::NoExemplarFits { .. })
        ));
    }
}
