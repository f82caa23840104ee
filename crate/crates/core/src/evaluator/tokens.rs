use serde::Serialize;
use serde_json::{Map, Value};

use crate::chunker::{DocumentChunk, TokenCounter};
use crate::document::{collapse_whitespace, locate_text_in_segment, Document, SegmentLevel};
use crate::prompt::{build_prompt, CoordinateScheme, SegmentIdMap};
use crate::schema::{format_json, EntityTypeNode, ExtractionSchema, Occurrence};

use super::{EvalDocument, EvalEntity};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DocTokenCounts {
    pub doc_id: String,
    pub prompt: usize,
    pub target: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeTokenStats {
    pub scheme: String,
    pub per_document: Vec<DocTokenCounts>,
    pub prompt_p50: usize,
    pub prompt_p99: usize,
    pub target_p50: Option<usize>,
    pub target_p99: Option<usize>,
}

/// Nearest-rank percentile: the smallest value with at least `p`% of the
/// data at or below it. `None` for no data.
pub fn nearest_rank(values: &[usize], p: f64) -> Option<usize> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    Some(v[rank.clamp(1, v.len()) - 1])
}

/// Identifiers of every segment of every page, rendered at the scheme's
/// level with each page treated as one chunk.
struct PageIds {
    lines: Vec<SegmentIdMap>,
    words: Vec<SegmentIdMap>,
    /// Per page, index of each line's first word in the page word list.
    word_offsets: Vec<Vec<usize>>,
}

impl PageIds {
    fn new(doc: &Document, scheme: &CoordinateScheme) -> Self {
        let words = doc.at_level(SegmentLevel::Word);
        Self {
            lines: doc.pages.iter().map(|p| SegmentIdMap::build(&p.segments, scheme)).collect(),
            words: words.pages.iter().map(|p| SegmentIdMap::build(&p.segments, scheme)).collect(),
            word_offsets: doc
                .pages
                .iter()
                .map(|p| {
                    p.segments
                        .iter()
                        .scan(0, |acc, s| {
                            let start = *acc;
                            *acc += s.words.len();
                            Some(start)
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

/// Cites one gold leaf in completion syntax, or `None` if no line of it can
/// be found on its page.
fn cite(leaf: &EvalEntity, doc: &Document, ids: &PageIds, level: SegmentLevel) -> Option<String> {
    let page = doc.pages.get(leaf.page)?;
    let mut pieces = Vec::new();
    for line in leaf.text.as_deref()?.split('\n').map(collapse_whitespace).filter(|l| !l.is_empty()) {
        let Some((si, range)) = page
            .segments
            .iter()
            .enumerate()
            .find_map(|(i, s)| locate_text_in_segment(s, &line).first().map(|r| (i, *r)))
        else {
            continue;
        };
        match level {
            SegmentLevel::Line => {
                pieces.push(format!("{line} {}", ids.lines[leaf.page].identifier(si).expect("segment in page")))
            }
            SegmentLevel::Word => {
                let base = ids.word_offsets[leaf.page][si];
                for w in range.start..=range.end {
                    let id = ids.words[leaf.page].identifier(base + w).expect("word in page");
                    pieces.push(format!("{} {id}", page.segments[si].words[w].text));
                }
            }
        }
    }
    (!pieces.is_empty()).then(|| pieces.join("\n"))
}

fn target_object(entities: &[&EvalEntity], nodes: &[EntityTypeNode], doc: &Document, ids: &PageIds, level: SegmentLevel) -> Value {
    let mut map = Map::new();
    for node in nodes {
        let items: Vec<&EvalEntity> =
            entities.iter().copied().filter(|e| e.type_path.last() == Some(&node.name)).collect();
        let values: Vec<Value> = items
            .iter()
            .filter_map(|e| {
                if node.is_leaf() {
                    cite(e, doc, ids, level).map(Value::String)
                } else {
                    let children: Vec<&EvalEntity> = e.children.iter().collect();
                    Some(target_object(&children, &node.children, doc, ids, level))
                }
            })
            .collect();
        let v = match node.occurrence {
            Occurrence::Single => values.into_iter().next().unwrap_or(Value::Null),
            Occurrence::Repeated => Value::Array(values),
        };
        map.insert(node.name.clone(), v);
    }
    Value::Object(map)
}

/// The completion a perfect model would emit for `gold` under `scheme`,
/// with each page treated as a single chunk.
pub fn render_target(gold: &EvalDocument, doc: &Document, schema: &ExtractionSchema, scheme: &CoordinateScheme) -> String {
    let ids = PageIds::new(doc, scheme);
    let roots: Vec<&EvalEntity> = gold.entities.iter().collect();
    format_json(&target_object(&roots, &schema.roots, doc, &ids, scheme.segment_level), scheme.json_indent)
}

/// Prompt tokens of a document: the sum over its pages, each rendered
/// whole at the scheme's segment level.
fn prompt_tokens(
    doc: &Document,
    schema: &ExtractionSchema,
    scheme: &CoordinateScheme,
    task: &str,
    counter: &dyn TokenCounter,
) -> usize {
    let leveled = doc.at_level(scheme.segment_level);
    leveled
        .pages
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.segments.is_empty())
        .map(|(i, p)| {
            let chunk = DocumentChunk {
                doc_id: doc.doc_id.clone(),
                source_page_index: i,
                chunk_index: i,
                segment_offset: 0,
                segments: p.segments.clone(),
            };
            counter.count(&build_prompt(&chunk, schema, scheme, task).text)
        })
        .sum()
}

/// Prompt (and, with groundtruth, target) token counts of every document
/// under every scheme, with nearest-rank 50th and 99th percentiles.
pub fn token_length_stats(
    docs: &[Document],
    schema: &ExtractionSchema,
    schemes: &[CoordinateScheme],
    counter: &dyn TokenCounter,
    task: &str,
    gold: Option<&[EvalDocument]>,
) -> Vec<SchemeTokenStats> {
    schemes
        .iter()
        .map(|scheme| {
            let per_document: Vec<DocTokenCounts> = docs
                .iter()
                .map(|d| DocTokenCounts {
                    doc_id: d.doc_id.clone(),
                    prompt: prompt_tokens(d, schema, scheme, task, counter),
                    target: gold
                        .and_then(|g| g.iter().find(|g| g.doc_id == d.doc_id))
                        .map(|g| counter.count(&render_target(g, d, schema, scheme))),
                })
                .collect();
            let prompts: Vec<usize> = per_document.iter().map(|c| c.prompt).collect();
            let targets: Vec<usize> = per_document.iter().filter_map(|c| c.target).collect();
            SchemeTokenStats {
                scheme: scheme.to_string(),
                prompt_p50: nearest_rank(&prompts, 50.0).unwrap_or(0),
                prompt_p99: nearest_rank(&prompts, 99.0).unwrap_or(0),
                target_p50: nearest_rank(&targets, 50.0),
                target_p99: nearest_rank(&targets, 99.0),
                per_document,
            }
        })
        .collect()
}

pub fn stats_tsv(stats: &[SchemeTokenStats]) -> String {
    let opt = |v: Option<usize>| v.map_or_else(|| "-".to_string(), |n| n.to_string());
    let mut out = String::from("scheme\tdocuments\tprompt_p50\tprompt_p99\ttarget_p50\ttarget_p99\n");
    for s in stats {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            s.scheme,
            s.per_document.len(),
            s.prompt_p50,
            s.prompt_p99,
            opt(s.target_p50),
            opt(s.target_p99)
        ));
    }
    out
}
