use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::Serialize;

use lmdx::chunker::{default_token_counter, DocumentChunk};
use lmdx::config::PipelineConfig;
use lmdx::document::{load_document_file, Document};
use lmdx::evaluator::{
    evaluate, load_extraction_records, load_groundtruth_file, parsing_error_report, predictions_from_records,
    stats_tsv, token_length_stats, MetricsReport, ParsingErrorReport,
};
use lmdx::icl::{load_pool_file, select_nearest, select_random, HashingEmbedder};
use lmdx::inference::{make_replay_client, prompt_sha256, CompletionClient, ReplayEntry};
use lmdx::pipeline::{
    build_prompts, chunk_for_scheme, chunk_records, chunks_from_records, exemplar_chunk, extract_document,
    infer_and_decode, replay_entries, ChunkManifest, ChunkRecord,
};
use lmdx::prompt::{build_icl_prompt, CoordinateScheme};
use lmdx::schema::{load_schema_file, ExtractionSchema};
use lmdx::Error;

use super::{report_failure, Command, Method, Outcome};

pub const MANIFEST_FILE: &str = "chunks.json";
pub const PROMPTS_FILE: &str = "prompts.json";
pub const COMPLETIONS_FILE: &str = "completions.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const STATS_FILE: &str = "token_stats.tsv";
pub const DEFAULT_OUT: &str = "lmdx-out";
pub const DEFAULT_STATS_SCHEMES: [&str; 5] =
    ["line:center_2:100", "line:corners_4:100", "line:line_index:100", "word:center_2:100", "line:center_2:1000"];

pub fn dispatch(command: Command, config: &PipelineConfig) -> anyhow::Result<Outcome> {
    match command {
        Command::Chunk { docs } => cmd_chunk(&docs, config),
        Command::Prompt { manifest } => cmd_prompt(&manifest, config),
        Command::Extract { docs, save_completions } => cmd_extract(&docs, config, save_completions),
        Command::Decode { manifest } => cmd_decode(&manifest, config),
        Command::Eval { gold, preds } => cmd_eval(&gold, &preds, config),
        Command::Stats { docs, schemes, gold } => cmd_stats(&docs, &schemes, gold.as_deref(), config),
        Command::Icl { pool, target, n, method } => cmd_icl(&pool, &target, n, method, config),
    }
}

fn out_dir(config: &PipelineConfig) -> anyhow::Result<PathBuf> {
    let dir = config.paths.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn schema(config: &PipelineConfig) -> anyhow::Result<ExtractionSchema> {
    let path = config.paths.schema.as_ref().context("no schema given; pass --schema or set paths.schema")?;
    Ok(load_schema_file(path).map_err(Error::from)?)
}

fn load_doc(path: &Path) -> Result<Document, Error> {
    Ok(load_document_file(path)?)
}

fn write_extraction(out: &Path, extraction: &lmdx::DocumentExtraction) -> Result<(), Error> {
    let path = out.join(format!("{}.extraction.json", extraction.doc_id));
    std::fs::write(&path, extraction.to_json() + "\n").map_err(|source| Error::Io { path: path.display().to_string(), source })
}

/// Runs `f` over `items` on `parallel` workers, keeping input order.
fn par_map<T: Sync, R: Send>(parallel: usize, items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> anyhow::Result<Vec<R>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(parallel).build().context("starting worker pool")?;
    Ok(pool.install(|| items.par_iter().map(f).collect()))
}

fn cmd_chunk(docs: &[PathBuf], config: &PipelineConfig) -> anyhow::Result<Outcome> {
    let schema = schema(config)?;
    let out = out_dir(config)?;
    let counter = default_token_counter();
    let task = &config.task.description;
    let per_doc = par_map(config.runtime.parallel, docs, |path| -> Result<Vec<ChunkRecord>, Error> {
        let doc = load_doc(path)?;
        let chunks = chunk_for_scheme(&doc, &schema, &config.scheme, task, config.limit(), &counter)?;
        let prompts = build_prompts(&chunks, &schema, &config.scheme, task);
        Ok(chunk_records(&chunks, &prompts, Some(&path.to_string_lossy()), &counter))
    })?;
    let mut outcome = Outcome::default();
    let mut chunks = Vec::new();
    for (path, r) in docs.iter().zip(per_doc) {
        match r {
            Ok(records) => chunks.extend(records),
            Err(e) => {
                outcome.failures += 1;
                report_failure(e.kind(), &path.to_string_lossy(), &e.to_string());
            }
        }
    }
    let manifest = ChunkManifest { scheme: config.scheme.to_string(), limit: config.limit(), chunks };
    write(&out.join(MANIFEST_FILE), &to_json(&manifest))?;
    println!("{} chunks from {} documents", manifest.chunks.len(), docs.len() - outcome.failures);
    Ok(outcome)
}

fn read_manifest(path: &Path, config: &PipelineConfig) -> anyhow::Result<ChunkManifest> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let m: ChunkManifest = serde_json::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
    let scheme = config.scheme.to_string();
    if m.scheme != scheme {
        return Err(Error::Manifest(format!("manifest was chunked under {} but the scheme is {scheme}", m.scheme)).into());
    }
    Ok(m)
}

/// Manifest records grouped by document, in first-appearance order.
fn group_records(m: &ChunkManifest) -> Vec<(String, Vec<&ChunkRecord>)> {
    let mut groups: Vec<(String, Vec<&ChunkRecord>)> = Vec::new();
    for r in &m.chunks {
        match groups.iter_mut().find(|(id, _)| *id == r.doc_id) {
            Some((_, list)) => list.push(r),
            None => groups.push((r.doc_id.clone(), vec![r])),
        }
    }
    groups
}

fn manifest_chunks(doc_id: &str, records: &[&ChunkRecord], scheme: &CoordinateScheme) -> Result<Vec<DocumentChunk>, Error> {
    let path = records[0]
        .doc_path
        .as_deref()
        .ok_or_else(|| Error::Manifest(format!("no doc_path recorded for {doc_id}")))?;
    let doc = load_doc(Path::new(path))?;
    if doc.doc_id != doc_id {
        return Err(Error::Manifest(format!("{path} holds {} rather than {doc_id}", doc.doc_id)));
    }
    chunks_from_records(&doc, records, scheme)
}

#[derive(Debug, Serialize)]
struct PromptIndexEntry {
    doc_id: String,
    chunk_index: usize,
    file: String,
    prompt_sha256: String,
}

fn cmd_prompt(manifest: &Path, config: &PipelineConfig) -> anyhow::Result<Outcome> {
    let m = read_manifest(manifest, config)?;
    let schema = schema(config)?;
    let out = out_dir(config)?;
    let mut outcome = Outcome::default();
    let mut index = Vec::new();
    for (doc_id, records) in group_records(&m) {
        let chunks = match manifest_chunks(&doc_id, &records, &config.scheme) {
            Ok(c) => c,
            Err(e) => {
                outcome.failures += 1;
                report_failure(e.kind(), &doc_id, &e.to_string());
                continue;
            }
        };
        for p in build_prompts(&chunks, &schema, &config.scheme, &config.task.description) {
            let file = format!("{}.{:03}.prompt.txt", p.chunk_ref.doc_id, p.chunk_ref.chunk_index);
            write(&out.join(&file), &p.text)?;
            index.push(PromptIndexEntry {
                doc_id: p.chunk_ref.doc_id.clone(),
                chunk_index: p.chunk_ref.chunk_index,
                file,
                prompt_sha256: prompt_sha256(&p.text),
            });
        }
    }
    write(&out.join(PROMPTS_FILE), &to_json(&index))?;
    println!("{} prompts", index.len());
    Ok(outcome)
}

/// Summary line of one decoded document.
fn summarize(doc_id: &str, extraction: &lmdx::DocumentExtraction) -> String {
    let t = &extraction.trace;
    format!("{doc_id}: {} entities, {} completions, {} discarded", extraction.entities.len(), t.completions, t.totals.discarded())
}

fn cmd_extract(docs: &[PathBuf], config: &PipelineConfig, save_completions: bool) -> anyhow::Result<Outcome> {
    let schema = schema(config)?;
    let client = config.make_client().map_err(Error::from)?;
    let out = out_dir(config)?;
    let counter = default_token_counter();
    let results = par_map(config.runtime.parallel, docs, |path| -> Result<(String, usize, Vec<ReplayEntry>), Error> {
        let doc = load_doc(path)?;
        let r = extract_document(&doc, &schema, config, client.as_ref(), &counter)?;
        write_extraction(&out, &r.extraction)?;
        for f in &r.failures {
            report_failure("inference", &format!("{}#{}", f.prompt_ref.doc_id, f.prompt_ref.chunk_index), &f.error);
        }
        println!("{}", summarize(&doc.doc_id, &r.extraction));
        let entries = if save_completions { replay_entries(&r.prompts, &r.completions) } else { Vec::new() };
        Ok((doc.doc_id, r.failures.len(), entries))
    })?;
    let mut outcome = Outcome::default();
    let mut fixture = Vec::new();
    for (path, r) in docs.iter().zip(results) {
        match r {
            Ok((_, failed, entries)) => {
                outcome.failures += failed;
                fixture.extend(entries);
            }
            Err(e) => {
                outcome.failures += 1;
                report_failure(e.kind(), &path.to_string_lossy(), &e.to_string());
            }
        }
    }
    if save_completions {
        write(&out.join(COMPLETIONS_FILE), &to_json(&fixture))?;
    }
    Ok(outcome)
}

fn cmd_decode(manifest: &Path, config: &PipelineConfig) -> anyhow::Result<Outcome> {
    let m = read_manifest(manifest, config)?;
    let schema = schema(config)?;
    let fixture = config.client.fixture.as_ref().context("no completions given; pass --fixture")?;
    let client = make_replay_client(fixture).map_err(Error::from)?;
    let out = out_dir(config)?;
    let counter = default_token_counter();
    let groups = group_records(&m);
    let results = par_map(config.runtime.parallel, &groups, |(doc_id, records)| -> Result<usize, Error> {
        let chunks = manifest_chunks(doc_id, records, &config.scheme)?;
        let r = infer_and_decode(doc_id, &chunks, &schema, config, &client as &dyn CompletionClient, &counter)?;
        write_extraction(&out, &r.extraction)?;
        for f in &r.failures {
            report_failure("inference", &format!("{}#{}", f.prompt_ref.doc_id, f.prompt_ref.chunk_index), &f.error);
        }
        println!("{}", summarize(doc_id, &r.extraction));
        Ok(r.failures.len())
    })?;
    let mut outcome = Outcome::default();
    for ((doc_id, _), r) in groups.iter().zip(results) {
        match r {
            Ok(failed) => outcome.failures += failed,
            Err(e) => {
                outcome.failures += 1;
                report_failure(e.kind(), doc_id, &e.to_string());
            }
        }
    }
    Ok(outcome)
}

/// Extraction files named directly, plus `*.extraction.json` inside any
/// named directory, sorted by name.
fn prediction_files(paths: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.to_string_lossy().ends_with(".extraction.json"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

#[derive(Debug, Serialize)]
struct EvalOutput {
    metrics: MetricsReport,
    parsing_errors: ParsingErrorReport,
}

fn cmd_eval(gold: &Path, preds: &[PathBuf], config: &PipelineConfig) -> anyhow::Result<Outcome> {
    let schema = schema(config)?;
    let out = out_dir(config)?;
    let gold = load_groundtruth_file(gold, &schema).map_err(Error::from)?;
    let mut records = Vec::new();
    for f in prediction_files(preds)? {
        records.extend(load_extraction_records(&f).map_err(Error::from)?);
    }
    let mut seen = BTreeMap::new();
    for r in &records {
        if seen.insert(r.doc_id.as_str(), ()).is_some() {
            bail!(Error::Manifest(format!("predictions list {} more than once", r.doc_id)));
        }
    }
    let predictions = predictions_from_records(&records, &schema).map_err(Error::from)?;
    let metrics = evaluate(&predictions, &gold, &schema, &config.evaluation).map_err(Error::from)?;
    let parsing_errors = parsing_error_report(records.iter().map(|r| &r.trace));
    print!("{}\n{}", metrics.to_table(), parsing_errors.to_table());
    write(&out.join(METRICS_FILE), &to_json(&EvalOutput { metrics, parsing_errors }))?;
    Ok(Outcome::default())
}

fn cmd_stats(
    docs: &[PathBuf],
    schemes: &[CoordinateScheme],
    gold: Option<&Path>,
    config: &PipelineConfig,
) -> anyhow::Result<Outcome> {
    let schema = schema(config)?;
    let out = out_dir(config)?;
    let schemes: Vec<CoordinateScheme> = if schemes.is_empty() {
        DEFAULT_STATS_SCHEMES.iter().map(|s| s.parse().expect("built-in scheme")).collect()
    } else {
        schemes.to_vec()
    };
    let gold = gold.map(|g| load_groundtruth_file(g, &schema)).transpose().map_err(Error::from)?;
    let mut outcome = Outcome::default();
    let mut loaded = Vec::new();
    for path in docs {
        match load_doc(path) {
            Ok(d) => loaded.push(d),
            Err(e) => {
                outcome.failures += 1;
                report_failure(e.kind(), &path.to_string_lossy(), &e.to_string());
            }
        }
    }
    let stats = token_length_stats(
        &loaded,
        &schema,
        &schemes,
        &default_token_counter(),
        &config.task.description,
        gold.as_deref(),
    );
    let tsv = stats_tsv(&stats);
    print!("{tsv}");
    write(&out.join(STATS_FILE), &tsv)?;
    Ok(outcome)
}

#[derive(Debug, Serialize)]
struct IclSelection {
    target: String,
    method: &'static str,
    selected: Vec<SelectedExemplar>,
    exemplars_used: usize,
    file: String,
}

#[derive(Debug, Serialize)]
struct SelectedExemplar {
    doc_id: String,
    similarity: Option<f64>,
}

fn cmd_icl(pool: &Path, target: &Path, n: usize, method: Method, config: &PipelineConfig) -> anyhow::Result<Outcome> {
    let schema = schema(config)?;
    let out = out_dir(config)?;
    let embedder = HashingEmbedder::default();
    let pool = load_pool_file(pool, &embedder).map_err(Error::from)?;
    let target = load_doc(target)?;
    let picked: Vec<(usize, Option<f64>)> = match method {
        Method::Random => select_random(&pool, n, config.sampling.seed).into_iter().map(|i| (i, None)).collect(),
        Method::Nearest => select_nearest(&pool, &target, n, &embedder)
            .map_err(Error::from)?
            .into_iter()
            .map(|(i, s)| (i, Some(s)))
            .collect(),
    };
    let exemplars: Vec<(DocumentChunk, String)> = picked
        .iter()
        .map(|&(i, _)| {
            let e = &pool.exemplars()[i];
            (exemplar_chunk(&e.document, &config.scheme), e.completion.clone())
        })
        .collect();
    let icl = build_icl_prompt(
        &exemplars,
        &exemplar_chunk(&target, &config.scheme),
        &schema,
        &config.scheme,
        &config.task.description,
        config.limit(),
        &default_token_counter(),
    )
    .map_err(Error::from)?;
    let file = format!("{}.icl.prompt.txt", target.doc_id);
    write(&out.join(&file), &icl.prompt.text)?;
    let selection = IclSelection {
        target: target.doc_id.clone(),
        method: match method {
            Method::Random => "random",
            Method::Nearest => "nearest",
        },
        selected: picked
            .iter()
            .map(|&(i, similarity)| SelectedExemplar { doc_id: pool.exemplars()[i].document.doc_id.clone(), similarity })
            .collect(),
        exemplars_used: icl.exemplars_used,
        file,
    };
    print!("{}", to_json(&selection));
    Ok(Outcome::default())
}
