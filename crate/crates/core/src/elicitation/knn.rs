//! Nearest-neighbour vote over labelled training questions.
//!
//! With `l` known neighbours among `k`, the question is known when
//! `l / m >= (k - l) / n`, i.e. the vote is normalised by the class sizes of
//! the store. The comparison is done in integers so that exact ties resolve
//! to known without floating-point noise.

use std::collections::HashMap;
use std::sync::Arc;

use super::{query_embedding, ElicitError, Elicitation, Elicitor};
use crate::retrieval::{Embedding, Payload, RetrievalError, VectorIndex};
use crate::types::{Question, SelfKnowledgeLabel, SelfKnowledgeStore};

pub const DEFAULT_K: usize = 5;

/// `l * n >= (k - l) * m`.
pub fn vote_is_known(l: usize, k: usize, m: usize, n: usize) -> bool {
    debug_assert!(l <= k);
    (l as u128) * (n as u128) >= ((k - l) as u128) * (m as u128)
}

/// Known/unknown counts among the `k` nearest neighbours of `query`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnnVote {
    pub label: SelfKnowledgeLabel,
    pub known: usize,
    pub unknown: usize,
    pub neighbours: Vec<String>,
}

/// Votes over `index`, which must contain only known or unknown training
/// questions. `m` and `n` are the store's class counts.
pub fn elicit_knn(
    query: &Embedding,
    index: &VectorIndex,
    store: &SelfKnowledgeStore,
    k: usize,
) -> Result<KnnVote, ElicitError> {
    let (m, n) = (store.m(), store.n());
    if m == 0 || n == 0 {
        return Err(ElicitError::EmptyStore { m, n });
    }
    if k == 0 {
        return Err(ElicitError::ZeroK);
    }
    if k > index.len() {
        return Err(ElicitError::KTooLarge { k, size: index.len() });
    }
    let hits = index.top_k(query, k)?.hits;
    let mut known = 0;
    for h in &hits {
        match store.get(&h.id) {
            Some(SelfKnowledgeLabel::Known) => known += 1,
            Some(SelfKnowledgeLabel::Unknown) => {}
            _ => return Err(ElicitError::UnlabeledNeighbor(h.id.clone())),
        }
    }
    let label = if vote_is_known(known, k, m, n) {
        SelfKnowledgeLabel::Known
    } else {
        SelfKnowledgeLabel::Unknown
    };
    Ok(KnnVote {
        label,
        known,
        unknown: k - known,
        neighbours: hits.into_iter().map(|h| h.id).collect(),
    })
}

/// Index over the training questions labelled known or unknown; discarded
/// and unlabelled questions are left out.
pub fn build_labeled_index(
    questions: &[Question],
    embeddings: &HashMap<String, Embedding>,
    store: &SelfKnowledgeStore,
) -> Result<VectorIndex, RetrievalError> {
    let mut items = Vec::new();
    let mut embs = Vec::new();
    for q in questions {
        if !matches!(store.get(&q.id), Some(SelfKnowledgeLabel::Known | SelfKnowledgeLabel::Unknown)) {
            continue;
        }
        let e = embeddings
            .get(&q.id)
            .ok_or_else(|| RetrievalError::MissingEmbedding(q.id.clone()))?;
        items.push(Payload::Question(q.clone()));
        embs.push(e.clone());
    }
    let (index, _) = VectorIndex::build(items, embs)?;
    Ok(index)
}

pub struct KnnElicitor {
    index: VectorIndex,
    store: Arc<SelfKnowledgeStore>,
    queries: Arc<HashMap<String, Embedding>>,
    k: usize,
}

impl KnnElicitor {
    /// Fails early on an unusable store or `k`.
    pub fn new(
        index: VectorIndex,
        store: Arc<SelfKnowledgeStore>,
        queries: Arc<HashMap<String, Embedding>>,
        k: usize,
    ) -> Result<Self, ElicitError> {
        if store.m() == 0 || store.n() == 0 {
            return Err(ElicitError::EmptyStore { m: store.m(), n: store.n() });
        }
        if k == 0 {
            return Err(ElicitError::ZeroK);
        }
        if k > index.len() {
            return Err(ElicitError::KTooLarge { k, size: index.len() });
        }
        Ok(Self { index, store, queries, k })
    }

    pub fn vote(&self, question: &Question) -> Result<KnnVote, ElicitError> {
        elicit_knn(query_embedding(&self.queries, question)?, &self.index, &self.store, self.k)
    }
}

impl Elicitor for KnnElicitor {
    fn name(&self) -> &str {
        "knn"
    }

    fn elicit(&self, question: &Question) -> Result<Elicitation, ElicitError> {
        let vote = self.vote(question)?;
        Ok(Elicitation::plain(vote.label))
    }
}
