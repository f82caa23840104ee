//! Stage composition shared by the CLI and the C interface.

use serde::{Deserialize, Serialize};

use crate::chunker::{chunk_document, ChunkError, DocumentChunk, TokenCounter};
use crate::config::PipelineConfig;
use crate::decoder::{decode_document, DocumentExtraction};
use crate::document::Document;
use crate::inference::{prompt_sha256, run_inference, CompletionClient, PromptFailure, RawCompletion, ReplayEntry};
use crate::prompt::{build_prompt, prompt_cost, CoordinateScheme, Prompt};
use crate::schema::ExtractionSchema;
use crate::Error;

/// Chunks `doc` at the scheme's segment level under a `limit`-token prompt
/// budget.
pub fn chunk_for_scheme(
    doc: &Document,
    schema: &ExtractionSchema,
    scheme: &CoordinateScheme,
    task: &str,
    limit: usize,
    counter: &dyn TokenCounter,
) -> Result<Vec<DocumentChunk>, ChunkError> {
    let leveled = doc.at_level(scheme.segment_level);
    chunk_document(&leveled, limit, prompt_cost(schema, scheme, task, counter))
}

pub fn build_prompts(
    chunks: &[DocumentChunk],
    schema: &ExtractionSchema,
    scheme: &CoordinateScheme,
    task: &str,
) -> Vec<Prompt> {
    chunks.iter().map(|c| build_prompt(c, schema, scheme, task)).collect()
}

/// Every segment of every page as one chunk, for use as an exemplar.
pub fn exemplar_chunk(doc: &Document, scheme: &CoordinateScheme) -> DocumentChunk {
    let leveled = doc.at_level(scheme.segment_level);
    DocumentChunk {
        doc_id: doc.doc_id.clone(),
        source_page_index: 0,
        chunk_index: 0,
        segment_offset: 0,
        segments: leveled.pages.into_iter().flat_map(|p| p.segments).collect(),
    }
}

/// One chunk in a chunk manifest. `segment_end` is exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkRecord {
    pub doc_id: String,
    #[serde(default)]
    pub doc_path: Option<String>,
    pub page: usize,
    pub chunk_index: usize,
    pub segment_start: usize,
    pub segment_end: usize,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkManifest {
    pub scheme: String,
    pub limit: usize,
    pub chunks: Vec<ChunkRecord>,
}

pub fn chunk_records(
    chunks: &[DocumentChunk],
    prompts: &[Prompt],
    doc_path: Option<&str>,
    counter: &dyn TokenCounter,
) -> Vec<ChunkRecord> {
    chunks
        .iter()
        .zip(prompts)
        .map(|(c, p)| ChunkRecord {
            doc_id: c.doc_id.clone(),
            doc_path: doc_path.map(str::to_string),
            page: c.source_page_index,
            chunk_index: c.chunk_index,
            segment_start: c.segment_offset,
            segment_end: c.segment_offset + c.segments.len(),
            token_count: counter.count(&p.text),
        })
        .collect()
}

/// Rebuilds the chunks of `doc` listed in `records`.
pub fn chunks_from_records(
    doc: &Document,
    records: &[&ChunkRecord],
    scheme: &CoordinateScheme,
) -> Result<Vec<DocumentChunk>, Error> {
    let leveled = doc.at_level(scheme.segment_level);
    records
        .iter()
        .map(|r| {
            let segments = leveled
                .pages
                .get(r.page)
                .and_then(|p| p.segments.get(r.segment_start..r.segment_end))
                .filter(|s| !s.is_empty())
                .ok_or_else(|| {
                    Error::Manifest(format!(
                        "chunk {} of {} names segments {}..{} of page {}, which do not exist",
                        r.chunk_index, r.doc_id, r.segment_start, r.segment_end, r.page
                    ))
                })?;
            Ok(DocumentChunk {
                doc_id: doc.doc_id.clone(),
                source_page_index: r.page,
                chunk_index: r.chunk_index,
                segment_offset: r.segment_start,
                segments: segments.to_vec(),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExtractOutput {
    pub extraction: DocumentExtraction,
    pub prompts: Vec<Prompt>,
    pub completions: Vec<RawCompletion>,
    pub failures: Vec<PromptFailure>,
}

/// Sampled completions and decoding for already-built chunks.
pub fn infer_and_decode(
    doc_id: &str,
    chunks: &[DocumentChunk],
    schema: &ExtractionSchema,
    config: &PipelineConfig,
    client: &dyn CompletionClient,
    counter: &dyn TokenCounter,
) -> Result<ExtractOutput, Error> {
    let prompts = build_prompts(chunks, schema, &config.scheme, &config.task.description);
    let out = run_inference(&prompts, &config.sampling, client, counter, config.run_options())?;
    let extraction = decode_document(doc_id, &out.completions, chunks, schema, &config.scheme);
    Ok(ExtractOutput { extraction, prompts, completions: out.completions, failures: out.failures })
}

/// Chunk, prompt, sample and decode one document.
pub fn extract_document(
    doc: &Document,
    schema: &ExtractionSchema,
    config: &PipelineConfig,
    client: &dyn CompletionClient,
    counter: &dyn TokenCounter,
) -> Result<ExtractOutput, Error> {
    let chunks =
        chunk_for_scheme(doc, schema, &config.scheme, &config.task.description, config.limit(), counter)?;
    infer_and_decode(&doc.doc_id, &chunks, schema, config, client, counter)
}

/// Replay fixture entries reproducing `completions` for `prompts`.
pub fn replay_entries(prompts: &[Prompt], completions: &[RawCompletion]) -> Vec<ReplayEntry> {
    prompts
        .iter()
        .filter_map(|p| {
            let texts: Vec<String> =
                completions.iter().filter(|c| c.prompt_ref == p.chunk_ref).map(|c| c.text.clone()).collect();
            (!texts.is_empty()).then(|| ReplayEntry { prompt_sha256: prompt_sha256(&p.text), completions: texts })
        })
        .collect()
}
