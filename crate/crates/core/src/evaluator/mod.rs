//! Scoring of extractions against groundtruth.
//!
//! Matching semantics are defined here rather than borrowed from external
//! scorers, so every number is an internal metric.

mod metrics;
mod report;
mod tokens;

use std::path::Path;

use serde::Deserialize;
use serde_json::{Map, Value};

use crate::decoder::{EntityRecord, ExtractionRecord};
use crate::document::collapse_whitespace;
use crate::geometry::BoundingBox;
use crate::schema::{EntityTypeNode, ExtractionSchema};

pub use metrics::{
    evaluate, group_f1, is_localized, localization_accuracy, micro_f1, prf, GroupCounts, GroupMatching,
    LocalizationReport, MatchConfig, MetricsReport, TypeRow, METRIC_LABEL,
};
pub use report::{format_rate, parsing_error_report, ParsingErrorReport};
pub use tokens::{
    nearest_rank, render_target, stats_tsv, token_length_stats, DocTokenCounts, SchemeTokenStats,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("document {doc_id}: does not match the schema: {detail}")]
    SchemaMismatch { doc_id: String, detail: String },
    #[error("malformed evaluation input: {0}")]
    Malformed(String),
    #[error("i/o error reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// An entity on either side of the comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalEntity {
    pub type_path: Vec<String>,
    /// Leaf text; `None` for groups.
    pub text: Option<String>,
    /// Predictions: the predicted box. Groundtruth: the entity's line boxes.
    pub boxes: Vec<BoundingBox>,
    pub page: usize,
    pub children: Vec<EvalEntity>,
}

impl EvalEntity {
    pub fn leaves(&self) -> Vec<&EvalEntity> {
        if self.text.is_some() {
            return vec![self];
        }
        self.children.iter().flat_map(|c| c.leaves()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalDocument {
    pub doc_id: String,
    pub entities: Vec<EvalEntity>,
}

impl EvalDocument {
    pub fn leaves(&self) -> Vec<&EvalEntity> {
        self.entities.iter().flat_map(|e| e.leaves()).collect()
    }
}

/// Text normalization shared by all metrics.
pub fn normalize(text: &str, case_sensitive: bool) -> String {
    let t = collapse_whitespace(text);
    if case_sensitive {
        t
    } else {
        t.to_lowercase()
    }
}

fn mismatch(doc_id: &str, detail: impl Into<String>) -> EvalError {
    EvalError::SchemaMismatch { doc_id: doc_id.to_string(), detail: detail.into() }
}

fn read(path: &Path) -> Result<String, EvalError> {
    std::fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.display().to_string(), source })
}

/// One object, or a list of them.
fn one_or_many(json: &str) -> Result<Vec<Value>, EvalError> {
    match serde_json::from_str(json).map_err(|e| EvalError::Malformed(e.to_string()))? {
        Value::Array(items) => Ok(items),
        v => Ok(vec![v]),
    }
}

// ---------------------------------------------------------------------------
// Predictions

fn record_to_eval(doc_id: &str, r: &EntityRecord, schema: &ExtractionSchema) -> Result<EvalEntity, EvalError> {
    let node = schema.node(&r.type_path).ok_or_else(|| mismatch(doc_id, format!("unknown type {:?}", r.type_path)))?;
    if node.is_leaf() != r.value.is_some() {
        return Err(mismatch(doc_id, format!("type {:?} has the wrong shape", r.type_path)));
    }
    Ok(EvalEntity {
        type_path: r.type_path.clone(),
        text: r.value.clone(),
        boxes: r.bbox.into_iter().collect(),
        page: r.page,
        children: r.children.iter().map(|c| record_to_eval(doc_id, c, schema)).collect::<Result<_, _>>()?,
    })
}

pub fn predictions_from_records(
    records: &[ExtractionRecord],
    schema: &ExtractionSchema,
) -> Result<Vec<EvalDocument>, EvalError> {
    records
        .iter()
        .map(|r| {
            Ok(EvalDocument {
                doc_id: r.doc_id.clone(),
                entities: r.entities.iter().map(|e| record_to_eval(&r.doc_id, e, schema)).collect::<Result<_, _>>()?,
            })
        })
        .collect()
}

/// Extraction records from a file holding one record or a list.
pub fn load_extraction_records(path: impl AsRef<Path>) -> Result<Vec<ExtractionRecord>, EvalError> {
    one_or_many(&read(path.as_ref())?)?
        .into_iter()
        .map(|v| serde_json::from_value(v).map_err(|e| EvalError::Malformed(e.to_string())))
        .collect()
}

// ---------------------------------------------------------------------------
// Groundtruth
//
// Same shape as a completion. A leaf value is either plain text or
// {"text": ..., "segments": [...], "line_boxes": [[x0, y0, x1, y1], ...], "page": n}.

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GoldLeaf {
    text: String,
    #[serde(default)]
    #[allow(dead_code)]
    segments: Vec<String>,
    #[serde(default)]
    line_boxes: Vec<BoundingBox>,
    #[serde(default)]
    page: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GoldDocument {
    doc_id: String,
    entities: Map<String, Value>,
}

fn gold_object(
    doc_id: &str,
    map: &Map<String, Value>,
    nodes: &[EntityTypeNode],
    path: &[String],
) -> Result<Vec<EvalEntity>, EvalError> {
    if let Some(k) = map.keys().find(|k| !nodes.iter().any(|n| &n.name == *k)) {
        return Err(mismatch(doc_id, format!("unknown type {k:?} under {path:?}")));
    }
    let mut out = Vec::new();
    for node in nodes {
        let mut p = path.to_vec();
        p.push(node.name.clone());
        let items: Vec<&Value> = match map.get(&node.name) {
            None | Some(Value::Null) => Vec::new(),
            Some(Value::Array(a)) => a.iter().filter(|v| !v.is_null()).collect(),
            Some(v) => vec![v],
        };
        for item in items {
            out.push(if node.is_leaf() { gold_leaf(doc_id, item, &p)? } else { gold_group(doc_id, item, node, &p)? });
        }
    }
    Ok(out)
}

fn gold_leaf(doc_id: &str, v: &Value, path: &[String]) -> Result<EvalEntity, EvalError> {
    let leaf = match v {
        Value::String(s) => GoldLeaf { text: s.clone(), segments: Vec::new(), line_boxes: Vec::new(), page: 0 },
        Value::Object(_) => serde_json::from_value(v.clone()).map_err(|e| mismatch(doc_id, format!("{path:?}: {e}")))?,
        _ => return Err(mismatch(doc_id, format!("{path:?}: leaf value must be text or an object"))),
    };
    Ok(EvalEntity { type_path: path.to_vec(), text: Some(leaf.text), boxes: leaf.line_boxes, page: leaf.page, children: Vec::new() })
}

fn gold_group(doc_id: &str, v: &Value, node: &EntityTypeNode, path: &[String]) -> Result<EvalEntity, EvalError> {
    let Value::Object(map) = v else {
        return Err(mismatch(doc_id, format!("{path:?}: group value must be an object")));
    };
    let children = gold_object(doc_id, map, &node.children, path)?;
    let page = children.first().map_or(0, |c| c.page);
    Ok(EvalEntity { type_path: path.to_vec(), text: None, boxes: Vec::new(), page, children })
}

/// Parses groundtruth JSON: one `{"doc_id", "entities"}` object or a list.
pub fn load_groundtruth(json: &str, schema: &ExtractionSchema) -> Result<Vec<EvalDocument>, EvalError> {
    one_or_many(json)?
        .into_iter()
        .map(|v| {
            let g: GoldDocument = serde_json::from_value(v).map_err(|e| EvalError::Malformed(e.to_string()))?;
            let entities = gold_object(&g.doc_id, &g.entities, &schema.roots, &[])?;
            Ok(EvalDocument { doc_id: g.doc_id, entities })
        })
        .collect()
}

pub fn load_groundtruth_file(path: impl AsRef<Path>, schema: &ExtractionSchema) -> Result<Vec<EvalDocument>, EvalError> {
    load_groundtruth(&read(path.as_ref())?, schema)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::load_schema;

    #[test]
    fn groundtruth_shapes() {
        let schema = load_schema(r#"{"a": "", "b": [], "g": [{"x": "", "y": ""}]}"#).unwrap();
        let docs = load_groundtruth(
            r#"{"doc_id": "d", "entities": {"a": "hello", "b": ["p", {"text": "q", "line_boxes": [[0.1, 0.1, 0.2, 0.2]], "page": 1}],
               "g": [{"x": "1", "y": null}]}}"#,
            &schema,
        )
        .unwrap();
        assert_eq!(docs.len(), 1);
        let d = &docs[0];
        assert_eq!(d.entities.len(), 4);
        assert_eq!(d.entities[2].page, 1);
        assert_eq!(d.entities[2].boxes.len(), 1);
        assert_eq!(d.entities[3].children.len(), 1);
        assert_eq!(d.leaves().len(), 4);

        assert!(matches!(
            load_groundtruth(r#"{"doc_id": "d", "entities": {"zzz": "x"}}"#, &schema),
            Err(EvalError::SchemaMismatch { .. })
        ));
        assert!(matches!(
            load_groundtruth(r#"{"doc_id": "d", "entities": {"a": 3}}"#, &schema),
            Err(EvalError::SchemaMismatch { .. })
        ));
    }
}
