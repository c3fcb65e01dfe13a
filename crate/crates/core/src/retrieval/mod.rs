//! Exact dense retrieval over embedded passages or questions.
//!
//! Vectors are stored as `f32` (matching the on-disk format) but every score
//! is computed in `f64`, so tie behaviour does not depend on storage
//! precision. Search is a full scan; results are ordered by descending cosine
//! score with ties broken by ascending id.

pub mod embfile;

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, DataError};
use crate::types::{Passage, Question};

pub use embfile::{read_embeddings, write_embeddings, EmbFileError};

/// Default number of passages retrieved per question.
pub const DEFAULT_PASSAGE_K: usize = 3;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("zero vector: {0}")]
    ZeroVector(String),
    #[error("index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("embedding must have at least one value")]
    EmptyEmbedding,
    #[error("embedding {0} has a non-finite value")]
    NonFinite(String),
    #[error("no embedding for corpus item {0}")]
    MissingEmbedding(String),
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error(transparent)]
    File(#[from] EmbFileError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("payload file does not match embeddings: {0}")]
    PayloadMismatch(String),
}

/// A fixed-dimension vector with the id of the item it represents.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub id: String,
    values: Vec<f32>,
}

impl Embedding {
    pub fn new(id: impl Into<String>, values: Vec<f32>) -> Result<Self, RetrievalError> {
        let id = id.into();
        if values.is_empty() {
            return Err(RetrievalError::EmptyEmbedding);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFinite(id));
        }
        Ok(Self { id, values })
    }

    pub(crate) fn new_unchecked(id: String, values: Vec<f32>) -> Self {
        Self { id, values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    fn norm(&self) -> f64 {
        norm(&self.values)
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

fn norm(a: &[f32]) -> f64 {
    a.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt()
}

/// `(a . b) / (|a| |b|)`.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64, RetrievalError> {
    if a.dim() != b.dim() {
        return Err(RetrievalError::DimMismatch { expected: a.dim(), got: b.dim() });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 {
        return Err(RetrievalError::ZeroVector(a.id.clone()));
    }
    if nb == 0.0 {
        return Err(RetrievalError::ZeroVector(b.id.clone()));
    }
    Ok(dot(&a.values, &b.values) / (na * nb))
}

/// What an index entry points at.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Payload {
    Passage(Passage),
    Question(Question),
}

impl Payload {
    pub fn id(&self) -> &str {
        match self {
            Payload::Passage(p) => &p.id,
            Payload::Question(q) => &q.id,
        }
    }

    pub fn text(&self) -> &str {
        match self {
            Payload::Passage(p) => &p.text,
            Payload::Question(q) => &q.text,
        }
    }
}

impl From<Passage> for Payload {
    fn from(p: Passage) -> Self {
        Payload::Passage(p)
    }
}

impl From<Question> for Payload {
    fn from(q: Question) -> Self {
        Payload::Question(q)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub score: f64,
}

/// Ranked hits for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedSet {
    pub query_id: String,
    pub hits: Vec<Hit>,
}

/// Immutable exact-search index.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    dim: usize,
    entries: Vec<Embedding>,
    norms: Vec<f64>,
    payloads: Vec<Payload>,
    by_id: HashMap<String, usize>,
}

/// Heap entry ordered so that `a > b` means `a` ranks ahead of `b`.
struct Candidate<'a> {
    score: f64,
    id: &'a str,
    index: usize,
}

impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.id.cmp(self.id))
    }
}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

impl VectorIndex {
    /// Pairs every corpus item with its embedding.
    ///
    /// Embeddings without a corpus item are skipped with a warning; the ids
    /// are returned so callers can report them.
    pub fn build(
        items: impl IntoIterator<Item = Payload>,
        embeddings: Vec<Embedding>,
    ) -> Result<(Self, Vec<String>), RetrievalError> {
        let items: Vec<Payload> = items.into_iter().collect();
        let mut seen = HashSet::new();
        for item in &items {
            if !seen.insert(item.id()) {
                return Err(RetrievalError::DuplicateId(item.id().to_string()));
            }
        }
        let mut by_emb_id: HashMap<String, Embedding> = HashMap::with_capacity(embeddings.len());
        for e in embeddings {
            if by_emb_id.contains_key(&e.id) {
                return Err(RetrievalError::DuplicateId(e.id));
            }
            by_emb_id.insert(e.id.clone(), e);
        }

        let mut dim = None;
        let mut entries = Vec::with_capacity(items.len());
        for item in &items {
            let e = by_emb_id
                .remove(item.id())
                .ok_or_else(|| RetrievalError::MissingEmbedding(item.id().to_string()))?;
            let expected = *dim.get_or_insert(e.dim());
            if e.dim() != expected {
                return Err(RetrievalError::DimMismatch { expected, got: e.dim() });
            }
            entries.push(e);
        }
        let mut orphans: Vec<String> = by_emb_id.into_keys().collect();
        orphans.sort();
        if !orphans.is_empty() {
            log::warn!(
                "{} embeddings have no corpus item (first: {})",
                orphans.len(),
                orphans[0]
            );
        }
        let dim = dim.ok_or(RetrievalError::EmptyIndex)?;
        Ok((Self::from_parts(dim, entries, items)?, orphans))
    }

    fn from_parts(dim: usize, entries: Vec<Embedding>, payloads: Vec<Payload>) -> Result<Self, RetrievalError> {
        let mut norms = Vec::with_capacity(entries.len());
        let mut by_id = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.dim() != dim {
                return Err(RetrievalError::DimMismatch { expected: dim, got: e.dim() });
            }
            let n = e.norm();
            if n == 0.0 {
                return Err(RetrievalError::ZeroVector(e.id.clone()));
            }
            norms.push(n);
            if by_id.insert(e.id.clone(), i).is_some() {
                return Err(RetrievalError::DuplicateId(e.id.clone()));
            }
        }
        Ok(Self { dim, entries, norms, payloads, by_id })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn payload(&self, id: &str) -> Option<&Payload> {
        self.by_id.get(id).map(|&i| &self.payloads[i])
    }

    pub fn embedding(&self, id: &str) -> Option<&Embedding> {
        self.by_id.get(id).map(|&i| &self.entries[i])
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    /// A new index restricted to the ids accepted by `keep`.
    pub fn filtered(&self, mut keep: impl FnMut(&str) -> bool) -> Result<Self, RetrievalError> {
        let mut entries = Vec::new();
        let mut payloads = Vec::new();
        for (e, p) in self.entries.iter().zip(&self.payloads) {
            if keep(&e.id) {
                entries.push(e.clone());
                payloads.push(p.clone());
            }
        }
        Self::from_parts(self.dim, entries, payloads)
    }

    /// The `k` entries with the highest cosine similarity to `query`.
    pub fn top_k(&self, query: &Embedding, k: usize) -> Result<RetrievedSet, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        if query.dim() != self.dim {
            return Err(RetrievalError::DimMismatch { expected: self.dim, got: query.dim() });
        }
        if self.entries.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        let qn = query.norm();
        if qn == 0.0 {
            return Err(RetrievalError::ZeroVector(query.id.clone()));
        }

        // Min-heap of the best k seen so far; the root is the weakest.
        let mut heap: BinaryHeap<Reverse<Candidate<'_>>> = BinaryHeap::with_capacity(k + 1);
        for (index, (e, en)) in self.entries.iter().zip(&self.norms).enumerate() {
            let score = dot(&query.values, &e.values) / (qn * en);
            let cand = Candidate { score, id: &e.id, index };
            if heap.len() < k {
                heap.push(Reverse(cand));
            } else if let Some(Reverse(weakest)) = heap.peek() {
                if cand > *weakest {
                    heap.pop();
                    heap.push(Reverse(cand));
                }
            }
        }
        let mut best: Vec<Candidate<'_>> = heap.into_iter().map(|Reverse(c)| c).collect();
        best.sort_by(|a, b| b.cmp(a));
        Ok(RetrievedSet {
            query_id: query.id.clone(),
            hits: best
                .into_iter()
                .map(|c| Hit { id: self.entries[c.index].id.clone(), score: c.score })
                .collect(),
        })
    }

    /// Writes `index.emb` and `payload.jsonl` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), RetrievalError> {
        std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
        write_embeddings(&dir.join("index.emb"), self.dim, &self.entries)?;
        io::write_jsonl(&dir.join("payload.jsonl"), &self.payloads)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, RetrievalError> {
        let (dim, entries) = read_embeddings(&dir.join("index.emb"))?;
        let payloads: Vec<Payload> = io::read_jsonl(&dir.join("payload.jsonl"))?;
        if payloads.len() != entries.len() {
            return Err(RetrievalError::PayloadMismatch(format!(
                "{} payloads for {} embeddings",
                payloads.len(),
                entries.len()
            )));
        }
        if let Some((e, p)) = entries.iter().zip(&payloads).find(|(e, p)| e.id != p.id()) {
            return Err(RetrievalError::PayloadMismatch(format!("{} vs {}", e.id, p.id())));
        }
        if entries.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        Self::from_parts(dim, entries, payloads)
    }
}

/// Convenience: `index.top_k(query, k)`.
pub fn top_k(query: &Embedding, index: &VectorIndex, k: usize) -> Result<RetrievedSet, RetrievalError> {
    index.top_k(query, k)
}

/// Loads a corpus file and an embedding file into an index.
pub fn build_index_from_files(corpus: &Path, embeddings: &Path) -> Result<(VectorIndex, Vec<String>), RetrievalError> {
    let passages = io::load_passages(corpus)?;
    let (_, embs) = read_embeddings(embeddings)?;
    VectorIndex::build(passages.into_iter().map(Payload::from), embs)
}

/// Embeddings keyed by id, for looking up query vectors.
pub fn embeddings_by_id(embeddings: Vec<Embedding>) -> HashMap<String, Embedding> {
    embeddings.into_iter().map(|e| (e.id.clone(), e)).collect()
}

/// A passage resolved to its text.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedPassage {
    pub id: String,
    pub score: f64,
    pub text: String,
}

/// Supplies passages for a question. Implemented by [`DenseRetriever`];
/// tests substitute counting stubs.
pub trait PassageSource: Send + Sync {
    fn retrieve(&self, question: &Question, k: usize) -> Result<Vec<RetrievedPassage>, RetrievalError>;
}

/// Dense retrieval over a passage index using precomputed question vectors.
pub struct DenseRetriever {
    index: VectorIndex,
    queries: Arc<HashMap<String, Embedding>>,
    calls: AtomicUsize,
}

impl DenseRetriever {
    pub fn new(index: VectorIndex, queries: Arc<HashMap<String, Embedding>>) -> Self {
        Self { index, queries, calls: AtomicUsize::new(0) }
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    /// Number of `retrieve` calls served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(AtomicOrdering::Relaxed)
    }
}

impl PassageSource for DenseRetriever {
    fn retrieve(&self, question: &Question, k: usize) -> Result<Vec<RetrievedPassage>, RetrievalError> {
        self.calls.fetch_add(1, AtomicOrdering::Relaxed);
        let query = self
            .queries
            .get(&question.id)
            .ok_or_else(|| RetrievalError::MissingEmbedding(question.id.clone()))?;
        let set = self.index.top_k(query, k)?;
        Ok(set
            .hits
            .into_iter()
            .map(|h| {
                let text = self.index.payload(&h.id).map(|p| p.text().to_string()).unwrap_or_default();
                RetrievedPassage { id: h.id, score: h.score, text }
            })
            .collect())
    }
}
