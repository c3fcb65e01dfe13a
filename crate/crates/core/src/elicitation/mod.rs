//! Strategies that label a new question as known or unknown to the model:
//! asking the model directly, asking with labelled demonstrations, a linear
//! classifier over question embeddings, and a nearest-neighbour vote over the
//! collected training labels.

pub mod classifier;
pub mod knn;
pub mod prompting;
pub mod template;

use std::collections::HashMap;
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::GatewayError;
use crate::retrieval::{Embedding, RetrievalError};
use crate::types::{Question, SelfKnowledgeLabel};

pub use classifier::{classify, train_classifier, ClassifierElicitor, LinearClassifier, TrainParams};
pub use knn::{elicit_knn, vote_is_known, KnnElicitor, DEFAULT_K};
pub use prompting::{elicit_direct, elicit_icl, IclElicitor, PromptElicitor};
pub use template::{parse_self_knowledge_response, ParsedResponse, PromptTemplate};

#[derive(Debug, Error)]
pub enum ElicitError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("need {needed} demonstrations per class, store has {known} known and {unknown} unknown")]
    InsufficientDemos { needed: usize, known: usize, unknown: usize },
    #[error("store has no known or no unknown questions (m={m}, n={n})")]
    EmptyStore { m: usize, n: usize },
    #[error("k={k} exceeds the {size} labelled training questions")]
    KTooLarge { k: usize, size: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("neighbour {0} has no known/unknown label")]
    UnlabeledNeighbor(String),
    #[error("no embedding for question {0}")]
    MissingEmbedding(String),
    #[error("question {0} is not in the training questions")]
    UnknownQuestion(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("training data needs examples of both classes")]
    SingleClassData,
    #[error("training example {0} is labelled discarded")]
    DiscardedExample(String),
    #[error("invalid training parameters: {0}")]
    BadParams(String),
    #[error("invalid template: {0}")]
    BadTemplate(String),
}

/// A known/unknown decision with optional supporting detail.
#[derive(Debug, Clone, PartialEq)]
pub struct Elicitation {
    pub label: SelfKnowledgeLabel,
    /// Probability of `label`, for strategies that produce one.
    pub probability: Option<f64>,
    /// Set when a model response could not be parsed.
    pub warning: bool,
}

impl Elicitation {
    pub fn plain(label: SelfKnowledgeLabel) -> Self {
        Self { label, probability: None, warning: false }
    }
}

/// Labels a question as known or unknown.
pub trait Elicitor: Send + Sync {
    fn name(&self) -> &str;
    fn elicit(&self, question: &Question) -> Result<Elicitation, ElicitError>;
}

/// Always returns the same label: `Known` never retrieves, `Unknown` always
/// does.
pub struct FixedElicitor {
    label: SelfKnowledgeLabel,
    name: &'static str,
}

impl FixedElicitor {
    pub fn never_retrieve() -> Self {
        Self { label: SelfKnowledgeLabel::Known, name: "never-retrieve" }
    }

    pub fn always_retrieve() -> Self {
        Self { label: SelfKnowledgeLabel::Unknown, name: "always-retrieve" }
    }
}

impl Elicitor for FixedElicitor {
    fn name(&self) -> &str {
        self.name
    }

    fn elicit(&self, _question: &Question) -> Result<Elicitation, ElicitError> {
        Ok(Elicitation::plain(self.label))
    }
}

/// Coin flip per question, derived from the seed and question id so it does
/// not depend on processing order.
pub struct RandomElicitor {
    seed: u64,
}

impl RandomElicitor {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl Elicitor for RandomElicitor {
    fn name(&self) -> &str {
        "random"
    }

    fn elicit(&self, question: &Question) -> Result<Elicitation, ElicitError> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(question.id.as_bytes());
        let label = if h.finalize()[0] & 1 == 0 {
            SelfKnowledgeLabel::Known
        } else {
            SelfKnowledgeLabel::Unknown
        };
        Ok(Elicitation::plain(label))
    }
}

/// Looks up a question's embedding.
pub(crate) fn query_embedding<'a>(
    queries: &'a Arc<HashMap<String, Embedding>>,
    question: &Question,
) -> Result<&'a Embedding, ElicitError> {
    queries
        .get(&question.id)
        .ok_or_else(|| ElicitError::MissingEmbedding(question.id.clone()))
}
