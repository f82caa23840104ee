//! C ABI over the lmdx extraction library.
//!
//! Handles are opaque and owned by the caller until passed to their `_free`
//! function. Every fallible call returns an [`LmdxStatus`]; on failure the
//! message is available from [`lmdx_last_error`] on the same thread.
//! Strings returned through `out` parameters are NUL-terminated UTF-8 and
//! must be released with [`lmdx_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use serde_json::json;

use lmdx::chunker::{default_token_counter, DocumentChunk};
use lmdx::config::PipelineConfig;
use lmdx::decoder::decode_document;
use lmdx::document::{load_document, Document};
use lmdx::inference::{prompt_sha256, strip_terminator, FinishReason, RawCompletion};
use lmdx::pipeline::{build_prompts, chunk_for_scheme};
use lmdx::prompt::{quantize, ChunkRef, CoordinateScheme, DEFAULT_TASK_DESCRIPTION};
use lmdx::schema::{load_schema, ExtractionSchema};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmdxStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Document = 4,
    Schema = 5,
    Chunk = 6,
    Prompt = 7,
    Panic = 99,
}

/// A validated document.
pub struct LmdxDocument {
    inner: Document,
}

/// A validated extraction schema.
pub struct LmdxSchema {
    inner: ExtractionSchema,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(LmdxStatus, String);

impl Failure {
    fn new(status: LmdxStatus, message: impl ToString) -> Self {
        Self(status, message.to_string())
    }
}

fn set_last_error(message: Option<String>) {
    let c = message.map(|m| CString::new(m.replace('\0', " ")).expect("interior NULs removed"));
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, records its error or panic, and maps the outcome to a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LmdxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(None);
            LmdxStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(Some(message));
            status
        }
        Err(_) => {
            set_last_error(Some("internal panic".into()));
            LmdxStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(LmdxStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::new(LmdxStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

/// # Safety
/// `p` is null or a live handle produced by this library.
unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::new(LmdxStatus::NullArgument, format!("{name} is null")))
}

fn out_arg<T>(out: *mut T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(LmdxStatus::NullArgument, "out is null"));
    }
    Ok(())
}

fn to_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s).map(CString::into_raw).map_err(|_| Failure::new(LmdxStatus::InvalidArgument, "output contains NUL"))
}

/// Scheme string, or the default scheme when null.
unsafe fn scheme_arg(p: *const c_char) -> Result<CoordinateScheme, Failure> {
    if p.is_null() {
        return Ok(CoordinateScheme::default());
    }
    str_arg(p, "scheme")?.parse().map_err(|e| Failure::new(LmdxStatus::InvalidArgument, e))
}

fn chunks(doc: &Document, schema: &ExtractionSchema, scheme: &CoordinateScheme, limit: usize) -> Result<Vec<DocumentChunk>, Failure> {
    let limit = if limit == 0 { PipelineConfig::default().limit() } else { limit };
    chunk_for_scheme(doc, schema, scheme, DEFAULT_TASK_DESCRIPTION, limit, &default_token_counter())
        .map_err(|e| Failure::new(LmdxStatus::Chunk, e))
}

/// Library version as a static string. Never free it.
#[no_mangle]
pub extern "C" fn lmdx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null after a success.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn lmdx_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` is null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lmdx_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses and validates a document from its JSON file format.
///
/// # Safety
/// `json` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn lmdx_document_from_json(json: *const c_char, out: *mut *mut LmdxDocument) -> LmdxStatus {
    guard(|| {
        out_arg(out)?;
        let doc = load_document(str_arg(json, "json")?).map_err(|e| Failure::new(LmdxStatus::Document, e))?;
        *out = Box::into_raw(Box::new(LmdxDocument { inner: doc }));
        Ok(())
    })
}

/// # Safety
/// `doc` is null or a handle from [`lmdx_document_from_json`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lmdx_document_free(doc: *mut LmdxDocument) {
    if !doc.is_null() {
        drop(Box::from_raw(doc));
    }
}

/// Page count, or 0 for a null handle.
///
/// # Safety
/// `doc` is null or a live document handle.
#[no_mangle]
pub unsafe extern "C" fn lmdx_document_page_count(doc: *const LmdxDocument) -> usize {
    doc.as_ref().map_or(0, |d| d.inner.pages.len())
}

/// Line count over all pages, or 0 for a null handle.
///
/// # Safety
/// `doc` is null or a live document handle.
#[no_mangle]
pub unsafe extern "C" fn lmdx_document_segment_count(doc: *const LmdxDocument) -> usize {
    doc.as_ref().map_or(0, |d| d.inner.segment_count())
}

/// Parses and validates an extraction schema.
///
/// # Safety
/// `json` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn lmdx_schema_from_json(json: *const c_char, out: *mut *mut LmdxSchema) -> LmdxStatus {
    guard(|| {
        out_arg(out)?;
        let schema = load_schema(str_arg(json, "json")?).map_err(|e| Failure::new(LmdxStatus::Schema, e))?;
        *out = Box::into_raw(Box::new(LmdxSchema { inner: schema }));
        Ok(())
    })
}

/// # Safety
/// `schema` is null or a handle from [`lmdx_schema_from_json`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lmdx_schema_free(schema: *mut LmdxSchema) {
    if !schema.is_null() {
        drop(Box::from_raw(schema));
    }
}

/// Chunks the document and renders one prompt per chunk.
///
/// `scheme` may be null for the default scheme; `limit` 0 selects the
/// default token budget. Writes a JSON array of
/// `{"chunk_index", "page", "prompt_sha256", "text"}` to `out`.
///
/// # Safety
/// Handles are live, `scheme` is null or NUL-terminated, `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn lmdx_build_prompts(
    doc: *const LmdxDocument,
    schema: *const LmdxSchema,
    scheme: *const c_char,
    limit: usize,
    out: *mut *mut c_char,
) -> LmdxStatus {
    guard(|| {
        out_arg(out)?;
        let (doc, schema) = (&handle(doc, "doc")?.inner, &handle(schema, "schema")?.inner);
        let scheme = scheme_arg(scheme)?;
        let chunks = chunks(doc, schema, &scheme, limit)?;
        let prompts: Vec<_> = build_prompts(&chunks, schema, &scheme, DEFAULT_TASK_DESCRIPTION)
            .into_iter()
            .zip(&chunks)
            .map(|(p, c)| {
                json!({
                    "chunk_index": c.chunk_index,
                    "page": c.source_page_index,
                    "prompt_sha256": prompt_sha256(&p.text),
                    "text": p.text,
                })
            })
            .collect();
        *out = to_c_string(serde_json::Value::Array(prompts).to_string())?;
        Ok(())
    })
}

/// Decodes sampled completions into a grounded extraction.
///
/// `completions_json` is an array with one entry per chunk, in chunk order,
/// each an array of completion strings. Chunking repeats
/// [`lmdx_build_prompts`] with the same `scheme` and `limit`. Writes the
/// extraction record JSON to `out`.
///
/// # Safety
/// Handles are live, strings are null or NUL-terminated, `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn lmdx_decode(
    doc: *const LmdxDocument,
    schema: *const LmdxSchema,
    scheme: *const c_char,
    limit: usize,
    completions_json: *const c_char,
    out: *mut *mut c_char,
) -> LmdxStatus {
    guard(|| {
        out_arg(out)?;
        let (doc, schema) = (&handle(doc, "doc")?.inner, &handle(schema, "schema")?.inner);
        let scheme = scheme_arg(scheme)?;
        let per_chunk: Vec<Vec<String>> = serde_json::from_str(str_arg(completions_json, "completions_json")?)
            .map_err(|e| Failure::new(LmdxStatus::InvalidArgument, format!("completions_json: {e}")))?;
        let chunks = chunks(doc, schema, &scheme, limit)?;
        if per_chunk.len() != chunks.len() {
            return Err(Failure::new(
                LmdxStatus::InvalidArgument,
                format!("{} completion lists for {} chunks", per_chunk.len(), chunks.len()),
            ));
        }
        let completions: Vec<RawCompletion> = per_chunk
            .iter()
            .zip(&chunks)
            .flat_map(|(texts, c)| {
                texts.iter().enumerate().map(|(k, t)| RawCompletion {
                    text: strip_terminator(t).to_string(),
                    prompt_ref: ChunkRef { doc_id: doc.doc_id.clone(), chunk_index: c.chunk_index },
                    sample_index: k,
                    finish_reason: FinishReason::Stop,
                })
            })
            .collect();
        let extraction = decode_document(&doc.doc_id, &completions, &chunks, schema, &scheme);
        *out = to_c_string(extraction.to_json())?;
        Ok(())
    })
}

/// Bucket index of a normalized coordinate.
///
/// # Safety
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn lmdx_quantize(value: f64, buckets: u32, out: *mut u32) -> LmdxStatus {
    guard(|| {
        out_arg(out)?;
        *out = quantize(value, buckets).map_err(|e| Failure::new(LmdxStatus::Prompt, e))?;
        Ok(())
    })
}
