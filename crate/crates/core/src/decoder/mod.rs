//! From sampled completions to grounded document-level entities.
//!
//! Each completion is parsed as JSON and decoded against the schema, with
//! every leaf value grounded on the chunk it was generated for. The K
//! samples of a chunk are reduced by majority vote per schema root, and the
//! per-chunk results are merged into one extraction per document.

mod ground;
mod merge;
mod vote;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::chunker::DocumentChunk;
use crate::geometry::BoundingBox;
use crate::inference::RawCompletion;
use crate::prompt::CoordinateScheme;
use crate::schema::{EntityTypeNode, ExtractionSchema, Occurrence};

pub use ground::{identifier_pattern, parse_entity_value, split_value, ChunkView, GroundedValue, ValueError};
pub use merge::{merge_chunks, merge_key, most_frequent, MergeKey};
pub use vote::{flatten_keys, majority_vote_hierarchical, majority_vote_leaf, EntityKey};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SegmentRef {
    pub identifier: String,
    /// Position of the segment within its chunk.
    pub segment_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct EntitySource {
    pub chunk_index: usize,
    pub sample_index: usize,
}

/// A leaf (with text) or a group (with children), localized on its page.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundedEntity {
    pub type_path: Vec<String>,
    pub value_text: Option<String>,
    pub segment_refs: Vec<SegmentRef>,
    /// Leaves: envelope of the matched words. Groups: envelope of the children.
    pub bbox: BoundingBox,
    pub page_index: usize,
    pub children: Vec<GroundedEntity>,
    pub source: EntitySource,
}

impl GroundedEntity {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn identifiers(&self) -> Vec<String> {
        self.segment_refs.iter().map(|r| r.identifier.clone()).collect()
    }

    /// Every leaf in the tree, depth first.
    pub fn leaves(&self) -> Vec<&GroundedEntity> {
        if self.is_leaf() {
            return vec![self];
        }
        self.children.iter().flat_map(|c| c.leaves()).collect()
    }
}

/// Discard and resolution counts for one completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TraceCounts {
    pub invalid_json: usize,
    pub invalid_value_format: usize,
    /// Every grounding failure, hallucinated identifiers included.
    pub text_not_found: usize,
    /// The subset of `text_not_found` citing an identifier absent from the chunk.
    pub hallucinated_segment: usize,
    pub unknown_type_dropped: usize,
    pub singular_multi_value_resolved: usize,
}

impl std::ops::AddAssign for TraceCounts {
    fn add_assign(&mut self, o: Self) {
        self.invalid_json += o.invalid_json;
        self.invalid_value_format += o.invalid_value_format;
        self.text_not_found += o.text_not_found;
        self.hallucinated_segment += o.hallucinated_segment;
        self.unknown_type_dropped += o.unknown_type_dropped;
        self.singular_multi_value_resolved += o.singular_multi_value_resolved;
    }
}

impl TraceCounts {
    fn record(&mut self, e: &ValueError) {
        match e {
            ValueError::InvalidValueFormat(_) => self.invalid_value_format += 1,
            ValueError::HallucinatedSegment(_) => {
                self.text_not_found += 1;
                self.hallucinated_segment += 1;
            }
            ValueError::TextNotFound { .. } => self.text_not_found += 1,
        }
    }

    /// Items discarded: whole completions plus individual entity values.
    pub fn discarded(&self) -> usize {
        self.invalid_json + self.invalid_value_format + self.text_not_found
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionTrace {
    pub chunk_index: usize,
    pub sample_index: usize,
    #[serde(flatten)]
    pub counts: TraceCounts,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DecodeTrace {
    /// Number of completions decoded.
    pub completions: usize,
    /// Sum of the per-completion counts.
    pub totals: TraceCounts,
    /// Single-occurrence roots that received values from several chunks.
    pub merge_singular_resolved: usize,
    /// Chunks that had no completion to decode, e.g. after a failed request.
    pub chunks_without_completions: usize,
    pub per_completion: Vec<CompletionTrace>,
}

impl DecodeTrace {
    fn from_parts(per_completion: Vec<CompletionTrace>, merge_singular_resolved: usize, empty_chunks: usize) -> Self {
        let mut totals = TraceCounts::default();
        for c in &per_completion {
            totals += c.counts;
        }
        Self {
            completions: per_completion.len(),
            totals,
            merge_singular_resolved,
            chunks_without_completions: empty_chunks,
            per_completion,
        }
    }
}

/// Strict JSON parse; anything but a top-level object is invalid.
pub fn parse_completion(text: &str) -> Option<Map<String, Value>> {
    match serde_json::from_str(text) {
        Ok(Value::Object(m)) => Some(m),
        _ => None,
    }
}

struct Decoder<'a, 'v> {
    view: &'v ChunkView<'a>,
    source: EntitySource,
    counts: TraceCounts,
}

impl Decoder<'_, '_> {
    fn leaf(&mut self, value: &Value, path: &[String]) -> Option<GroundedEntity> {
        let Value::String(s) = value else {
            self.counts.invalid_value_format += 1;
            return None;
        };
        match parse_entity_value(s, self.view) {
            Ok(g) => Some(GroundedEntity {
                type_path: path.to_vec(),
                value_text: Some(g.value_text),
                segment_refs: g.segment_refs,
                bbox: g.bbox,
                page_index: self.view.chunk.source_page_index,
                children: Vec::new(),
                source: self.source,
            }),
            Err(e) => {
                self.counts.record(&e);
                None
            }
        }
    }

    fn group(&mut self, value: &Value, node: &EntityTypeNode, path: &[String]) -> Option<GroundedEntity> {
        let Value::Object(map) = value else {
            self.counts.invalid_value_format += 1;
            return None;
        };
        let children = self.object(map, &node.children, path);
        let children: Vec<GroundedEntity> = children.into_iter().flatten().collect();
        let bbox = BoundingBox::envelope(children.iter().map(|c| &c.bbox))?;
        Some(GroundedEntity {
            type_path: path.to_vec(),
            value_text: None,
            segment_refs: Vec::new(),
            bbox,
            page_index: self.view.chunk.source_page_index,
            children,
            source: self.source,
        })
    }

    /// One entity list per node, in node order; unknown keys are dropped.
    fn object(&mut self, map: &Map<String, Value>, nodes: &[EntityTypeNode], path: &[String]) -> Vec<Vec<GroundedEntity>> {
        self.counts.unknown_type_dropped += map.keys().filter(|k| !nodes.iter().any(|n| &n.name == *k)).count();
        nodes
            .iter()
            .map(|n| {
                let mut p = path.to_vec();
                p.push(n.name.clone());
                self.for_type(map.get(&n.name), n, &p)
            })
            .collect()
    }

    fn for_type(&mut self, value: Option<&Value>, node: &EntityTypeNode, path: &[String]) -> Vec<GroundedEntity> {
        let items: Vec<&Value> = match value {
            None | Some(Value::Null) => Vec::new(),
            Some(Value::Array(a)) => a.iter().filter(|v| !v.is_null()).collect(),
            Some(v) => vec![v],
        };
        let decoded: Vec<GroundedEntity> = items
            .into_iter()
            .filter_map(|v| if node.is_leaf() { self.leaf(v, path) } else { self.group(v, node, path) })
            .collect();
        if node.occurrence == Occurrence::Single && decoded.len() > 1 {
            self.counts.singular_multi_value_resolved += 1;
            return vec![most_frequent(decoded)];
        }
        decoded
    }
}

/// Decodes one completion's JSON object into an entity list per schema root
/// (key absent ⇒ empty), recording every discard in `counts`.
pub fn decode_for_type(
    completion: &Map<String, Value>,
    schema: &ExtractionSchema,
    view: &ChunkView<'_>,
    source: EntitySource,
) -> (Vec<Vec<GroundedEntity>>, TraceCounts) {
    let mut d = Decoder { view, source, counts: TraceCounts::default() };
    let roots = d.object(completion, &schema.roots, &[]);
    (roots, d.counts)
}

/// Decoded samples of one chunk, reduced to one entity list per root.
fn decode_chunk(
    chunk: &DocumentChunk,
    completions: &[&RawCompletion],
    schema: &ExtractionSchema,
    scheme: &CoordinateScheme,
) -> (Vec<Vec<GroundedEntity>>, Vec<CompletionTrace>) {
    let view = ChunkView::new(chunk, scheme);
    let mut traces = Vec::with_capacity(completions.len());
    let mut samples: Vec<Vec<Vec<GroundedEntity>>> = Vec::new();
    for c in completions {
        let source = EntitySource { chunk_index: chunk.chunk_index, sample_index: c.sample_index };
        let counts = match parse_completion(&c.text) {
            Some(map) => {
                let (roots, counts) = decode_for_type(&map, schema, &view, source);
                samples.push(roots);
                counts
            }
            None => TraceCounts { invalid_json: 1, ..Default::default() },
        };
        traces.push(CompletionTrace { chunk_index: chunk.chunk_index, sample_index: c.sample_index, counts });
    }
    let voted = schema
        .roots
        .iter()
        .enumerate()
        .map(|(r, node)| {
            let candidates: Vec<Vec<GroundedEntity>> = samples.iter().map(|s| s[r].clone()).collect();
            if candidates.is_empty() {
                return Vec::new();
            }
            let winner =
                if node.is_leaf() { majority_vote_leaf(&candidates) } else { majority_vote_hierarchical(&candidates) };
            candidates.into_iter().nth(winner).expect("winner is in range")
        })
        .collect();
    (voted, traces)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocumentExtraction {
    pub doc_id: String,
    pub entities: Vec<GroundedEntity>,
    pub trace: DecodeTrace,
}

/// Parse, ground, vote and merge every completion of one document.
///
/// Completions are matched to chunks by chunk index; those for other
/// documents are ignored. Samples are voted in sample-index order.
pub fn decode_document(
    doc_id: &str,
    completions: &[RawCompletion],
    chunks: &[DocumentChunk],
    schema: &ExtractionSchema,
    scheme: &CoordinateScheme,
) -> DocumentExtraction {
    let mut by_chunk: BTreeMap<usize, Vec<&RawCompletion>> = BTreeMap::new();
    for c in completions.iter().filter(|c| c.prompt_ref.doc_id == doc_id) {
        by_chunk.entry(c.prompt_ref.chunk_index).or_default().push(c);
    }
    for list in by_chunk.values_mut() {
        list.sort_by_key(|c| c.sample_index);
    }
    let mut chunks: Vec<&DocumentChunk> = chunks.iter().collect();
    chunks.sort_by_key(|c| c.chunk_index);
    let empty = Vec::new();
    let decoded: Vec<_> = chunks
        .par_iter()
        .map(|c| decode_chunk(c, by_chunk.get(&c.chunk_index).unwrap_or(&empty), schema, scheme))
        .collect();
    let empty_chunks = chunks.iter().filter(|c| !by_chunk.contains_key(&c.chunk_index)).count();
    let mut per_chunk = Vec::with_capacity(decoded.len());
    let mut traces = Vec::new();
    for (voted, t) in decoded {
        per_chunk.push(voted);
        traces.extend(t);
    }
    let (entities, resolved) = merge_chunks(per_chunk, schema);
    DocumentExtraction {
        doc_id: doc_id.to_string(),
        entities,
        trace: DecodeTrace::from_parts(traces, resolved, empty_chunks),
    }
}

/// Serialized form of one entity in an extraction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityRecord {
    pub type_path: Vec<String>,
    pub value: Option<String>,
    #[serde(rename = "box")]
    pub bbox: Option<BoundingBox>,
    #[serde(default)]
    pub segments: Vec<String>,
    #[serde(default)]
    pub page: usize,
    #[serde(default)]
    pub children: Vec<EntityRecord>,
}

impl From<&GroundedEntity> for EntityRecord {
    fn from(e: &GroundedEntity) -> Self {
        Self {
            type_path: e.type_path.clone(),
            value: e.value_text.clone(),
            bbox: Some(e.bbox),
            segments: e.identifiers(),
            page: e.page_index,
            children: e.children.iter().map(EntityRecord::from).collect(),
        }
    }
}

/// Serialized form of a [`DocumentExtraction`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionRecord {
    pub doc_id: String,
    pub entities: Vec<EntityRecord>,
    #[serde(default)]
    pub trace: DecodeTrace,
}

impl DocumentExtraction {
    pub fn to_record(&self) -> ExtractionRecord {
        ExtractionRecord {
            doc_id: self.doc_id.clone(),
            entities: self.entities.iter().map(EntityRecord::from).collect(),
            trace: self.trace.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_record()).expect("records serialize")
    }
}
