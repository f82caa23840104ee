//! In-context exemplar selection: seeded random draws or nearest neighbors
//! by embedding cosine similarity.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::document::{load_document_file, Document, DocumentError};

#[derive(Debug, thiserror::Error)]
pub enum IclError {
    #[error("cannot take the cosine of a zero vector")]
    ZeroVector,
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("pool embeddings were made by {found:?}, current embedder is {expected:?}")]
    EmbedderMismatch { expected: String, found: String },
    #[error("malformed pool file: {0}")]
    Malformed(String),
    #[error("i/o error reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Document(#[from] DocumentError),
}

/// Maps text to a fixed-dimension vector, deterministically.
pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Vec<f64>;
    fn dimension(&self) -> usize;
    /// Identifies the embedding space; cached vectors from another tag are stale.
    fn version_tag(&self) -> String;
}

/// Signed feature hashing of lowercase whitespace tokens.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    dimension: usize,
}

impl HashingEmbedder {
    pub fn new(dimension: usize) -> Self {
        Self { dimension: dimension.max(1) }
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(256)
    }
}

impl Embedder for HashingEmbedder {
    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        for token in text.split_whitespace() {
            let h = Sha256::digest(token.to_lowercase().as_bytes());
            let bucket = u64::from_le_bytes(h[..8].try_into().expect("8 bytes")) % self.dimension as u64;
            v[bucket as usize] += if h[8] & 1 == 0 { 1.0 } else { -1.0 };
        }
        v
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn version_tag(&self) -> String {
        format!("hashing-sha256-v1-{}", self.dimension)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, IclError> {
    if a.len() != b.len() {
        return Err(IclError::DimensionMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(IclError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar {
    pub document: Document,
    /// Groundtruth in completion syntax.
    pub completion: String,
    pub embedding: Vec<f64>,
}

/// Document, completion, cached embedding and the tag of its embedder.
pub type PoolItem = (Document, String, Option<Vec<f64>>, Option<String>);

#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarPool {
    exemplars: Vec<Exemplar>,
    embedder_tag: String,
}

impl ExemplarPool {
    /// Embeds every document's plain text.
    pub fn build(items: Vec<(Document, String)>, embedder: &dyn Embedder) -> Self {
        let exemplars = items
            .into_iter()
            .map(|(document, completion)| {
                let embedding = embedder.embed(&document.plain_text());
                Exemplar { document, completion, embedding }
            })
            .collect();
        Self { exemplars, embedder_tag: embedder.version_tag() }
    }

    /// Uses cached embeddings where given, computing the rest. Cached
    /// vectors must come from `embedder`.
    pub fn with_cache(
        items: Vec<PoolItem>,
        embedder: &dyn Embedder,
    ) -> Result<Self, IclError> {
        let tag = embedder.version_tag();
        let mut exemplars = Vec::with_capacity(items.len());
        for (document, completion, cached, cached_tag) in items {
            let embedding = match cached {
                Some(e) => {
                    if let Some(t) = cached_tag.filter(|t| *t != tag) {
                        return Err(IclError::EmbedderMismatch { expected: tag, found: t });
                    }
                    if e.len() != embedder.dimension() {
                        return Err(IclError::DimensionMismatch(e.len(), embedder.dimension()));
                    }
                    e
                }
                None => embedder.embed(&document.plain_text()),
            };
            exemplars.push(Exemplar { document, completion, embedding });
        }
        Ok(Self { exemplars, embedder_tag: tag })
    }

    pub fn exemplars(&self) -> &[Exemplar] {
        &self.exemplars
    }

    pub fn len(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }

    pub fn embedder_tag(&self) -> &str {
        &self.embedder_tag
    }
}

/// `n` distinct pool indices drawn without replacement: a partial
/// Fisher-Yates shuffle driven by ChaCha8 seeded with `seed`.
pub fn select_random(pool: &ExemplarPool, n: usize, seed: u64) -> Vec<usize> {
    let len = pool.len();
    let n = n.min(len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..len).collect();
    for i in 0..n {
        let j = rng.gen_range(i..len);
        idx.swap(i, j);
    }
    idx.truncate(n);
    idx
}

/// The `n` pool entries most similar to `target`, best first, with their
/// cosine similarity. Ties keep pool order.
pub fn select_nearest(
    pool: &ExemplarPool,
    target: &Document,
    n: usize,
    embedder: &dyn Embedder,
) -> Result<Vec<(usize, f64)>, IclError> {
    if pool.embedder_tag != embedder.version_tag() {
        return Err(IclError::EmbedderMismatch { expected: embedder.version_tag(), found: pool.embedder_tag.clone() });
    }
    let t = embedder.embed(&target.plain_text());
    let mut scored = pool
        .exemplars
        .iter()
        .enumerate()
        .map(|(i, e)| Ok((i, cosine(&t, &e.embedding)?)))
        .collect::<Result<Vec<_>, IclError>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    scored.truncate(n);
    Ok(scored)
}

/// One entry of a pool file. Paths are relative to the pool file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolEntry {
    pub document: PathBuf,
    pub completion: PathBuf,
    #[serde(default)]
    pub embedding: Option<Vec<f64>>,
    #[serde(default)]
    pub embedder: Option<String>,
}

pub fn load_pool_file(path: impl AsRef<Path>, embedder: &dyn Embedder) -> Result<ExemplarPool, IclError> {
    let path = path.as_ref();
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |source| IclError::Io { path: p.display().to_string(), source }
    };
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    let entries: Vec<PoolEntry> = serde_json::from_str(&text).map_err(|e| IclError::Malformed(e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let items = entries
        .into_iter()
        .map(|e| {
            let doc_path = base.join(&e.document);
            let completion_path = base.join(&e.completion);
            let completion = std::fs::read_to_string(&completion_path).map_err(io(&completion_path))?;
            Ok((load_document_file(&doc_path)?, completion.trim_end().to_string(), e.embedding, e.embedder))
        })
        .collect::<Result<Vec<_>, IclError>>()?;
    ExemplarPool::with_cache(items, embedder)
}
