//! Cross-chunk merging of voted extractions.

use std::collections::HashMap;

use crate::document::collapse_whitespace;
use crate::schema::{ExtractionSchema, Occurrence};

use super::GroundedEntity;

/// Identifier-free identity of an entity tree; identifiers are chunk-local
/// and cannot be compared across chunks.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MergeKey {
    type_path: Vec<String>,
    value: Option<String>,
    children: Vec<MergeKey>,
}

pub fn merge_key(e: &GroundedEntity) -> MergeKey {
    MergeKey {
        type_path: e.type_path.clone(),
        value: e.value_text.as_deref().map(collapse_whitespace),
        children: e.children.iter().map(merge_key).collect(),
    }
}

/// The most frequent entity under [`merge_key`]; ties go to the earliest.
///
/// Panics on an empty list.
pub fn most_frequent(entities: Vec<GroundedEntity>) -> GroundedEntity {
    let keys: Vec<MergeKey> = entities.iter().map(merge_key).collect();
    let mut counts: HashMap<&MergeKey, usize> = HashMap::new();
    for k in &keys {
        *counts.entry(k).or_insert(0) += 1;
    }
    let mut best = 0;
    for i in 1..keys.len() {
        if counts[&keys[i]] > counts[&keys[best]] {
            best = i;
        }
    }
    entities.into_iter().nth(best).expect("non-empty")
}

/// Merges per-chunk results, each holding one entity list per schema root in
/// schema order. Chunks are expected in chunk order.
///
/// Repeated roots concatenate; single roots keep the most frequent value
/// among the chunks that produced one. Returns the merged entities and how
/// many single roots had to be resolved between chunks.
pub fn merge_chunks(per_chunk: Vec<Vec<Vec<GroundedEntity>>>, schema: &ExtractionSchema) -> (Vec<GroundedEntity>, usize) {
    let mut by_root: Vec<Vec<Vec<GroundedEntity>>> = vec![Vec::new(); schema.roots.len()];
    for chunk in per_chunk {
        for (r, entities) in chunk.into_iter().enumerate() {
            by_root[r].push(entities);
        }
    }
    let mut out = Vec::new();
    let mut resolved = 0;
    for (node, lists) in schema.roots.iter().zip(by_root) {
        match node.occurrence {
            Occurrence::Repeated => out.extend(lists.into_iter().flatten()),
            Occurrence::Single => {
                let values: Vec<GroundedEntity> = lists.into_iter().filter_map(|l| l.into_iter().next()).collect();
                if values.len() > 1 {
                    resolved += 1;
                }
                if !values.is_empty() {
                    out.push(most_frequent(values));
                }
            }
        }
    }
    (out, resolved)
}
