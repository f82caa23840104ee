//! Layout-aware structured extraction from visually rich documents with a
//! text-only language model.
//!
//! The pipeline: [`document`] → [`chunker`] → [`prompt`] → [`inference`] →
//! [`decoder`], with [`evaluator`] for scoring and [`icl`] for exemplar
//! selection. [`pipeline`] composes the stages and [`config`] holds their
//! settings.

pub mod chunker;
pub mod config;
pub mod decoder;
pub mod document;
pub mod evaluator;
pub mod geometry;
pub mod icl;
pub mod inference;
pub mod pipeline;
pub mod prompt;
pub mod schema;

pub use chunker::{chunk_document, default_token_counter, DocumentChunk, TokenCounter};
pub use config::PipelineConfig;
pub use decoder::{decode_document, DocumentExtraction, GroundedEntity};
pub use document::{load_document, load_document_file, Document};
pub use prompt::{build_prompt, CoordinateScheme, Prompt};
pub use schema::{load_schema, load_schema_file, ExtractionSchema};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Document(#[from] document::DocumentError),
    #[error(transparent)]
    Schema(#[from] schema::SchemaError),
    #[error(transparent)]
    Chunk(#[from] chunker::ChunkError),
    #[error(transparent)]
    Prompt(#[from] prompt::PromptError),
    #[error(transparent)]
    Inference(#[from] inference::InferenceError),
    #[error(transparent)]
    Client(#[from] inference::ClientError),
    #[error(transparent)]
    Eval(#[from] evaluator::EvalError),
    #[error(transparent)]
    Icl(#[from] icl::IclError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl Error {
    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Document(_) => "document",
            Error::Schema(_) => "schema",
            Error::Chunk(_) => "chunk",
            Error::Prompt(_) => "prompt",
            Error::Inference(_) => "inference",
            Error::Client(_) => "client",
            Error::Eval(_) => "eval",
            Error::Icl(_) => "icl",
            Error::Config(_) => "config",
            Error::Manifest(_) => "manifest",
            Error::Io { .. } => "io",
        }
    }
}
