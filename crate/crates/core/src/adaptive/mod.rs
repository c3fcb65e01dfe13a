//! Answering with or without retrieval depending on the elicited label.

pub mod prompt;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::elicitation::{ElicitError, Elicitor};
use crate::gateway::{Gateway, GatewayError};
use crate::metrics::AnswerSpec;
use crate::parallel::ordered_map;
use crate::retrieval::{PassageSource, RetrievalError};
use crate::types::{Question, SelfKnowledgeLabel};

pub use prompt::{
    build_augmented_prompt, build_direct_prompt, render_question, Demonstration, PromptConfig, PromptError,
    DEFAULT_DEMONSTRATIONS, DEFAULT_PASSAGE_HEADER,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalAnswer {
    pub question_id: String,
    pub label_used: SelfKnowledgeLabel,
    /// True exactly when `label_used` is unknown.
    pub retrieval_used: bool,
    pub raw_response: String,
    pub extracted_answer: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Elicitation,
    Retrieval,
    Prompt,
    Generation,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Elicitation => "elicitation",
            Stage::Retrieval => "retrieval",
            Stage::Prompt => "prompt",
            Stage::Generation => "generation",
        })
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Elicit(#[from] ElicitError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// A failure while answering one question, tagged with where it happened.
#[derive(Debug, Error)]
#[error("question {question_id}: {stage} failed: {source}")]
pub struct AdaptiveError {
    pub question_id: String,
    pub stage: Stage,
    #[source]
    pub source: StageError,
}

/// An answer together with the prompt that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Answered {
    pub answer: FinalAnswer,
    pub prompt: String,
}

/// Elicits a label, then answers directly (known) or after one retrieval
/// call for `cfg.passages_per_question` passages (unknown).
pub fn answer_adaptive(
    question: &Question,
    elicitor: &dyn Elicitor,
    gateway: &Gateway,
    passages: &dyn PassageSource,
    cfg: &PromptConfig,
    spec: &AnswerSpec,
) -> Result<Answered, AdaptiveError> {
    let fail = |stage: Stage| {
        let id = question.id.clone();
        move |e: StageError| AdaptiveError { question_id: id, stage, source: e }
    };
    let label = elicitor
        .elicit(question)
        .map_err(|e| fail(Stage::Elicitation)(e.into()))?
        .label;
    let retrieval_used = label == SelfKnowledgeLabel::Unknown;
    let prompt = if retrieval_used {
        let hits = passages
            .retrieve(question, cfg.passages_per_question)
            .map_err(|e| fail(Stage::Retrieval)(e.into()))?;
        let texts: Vec<&str> = hits.iter().map(|h| h.text.as_str()).collect();
        build_augmented_prompt(question, &texts, cfg)
    } else {
        build_direct_prompt(question, cfg)
    }
    .map_err(|e| fail(Stage::Prompt)(e.into()))?;
    let raw = gateway
        .generate(&prompt)
        .map_err(|e| fail(Stage::Generation)(e.into()))?;
    let (extracted_answer, score) = spec.grade(question, &raw);
    Ok(Answered {
        answer: FinalAnswer {
            question_id: question.id.clone(),
            label_used: label,
            retrieval_used,
            raw_response: raw,
            extracted_answer,
            score,
        },
        prompt,
    })
}

/// Answers every question concurrently, returning results in input order.
/// The first failure (in input order) aborts the run.
pub fn answer_all(
    questions: &[Question],
    elicitor: &dyn Elicitor,
    gateway: &Gateway,
    passages: &dyn PassageSource,
    cfg: &PromptConfig,
    spec: &AnswerSpec,
) -> Result<Vec<Answered>, AdaptiveError> {
    cfg.validate().map_err(|e| AdaptiveError {
        question_id: String::new(),
        stage: Stage::Prompt,
        source: e.into(),
    })?;
    ordered_map(questions, gateway.concurrency(), |q| {
        answer_adaptive(q, elicitor, gateway, passages, cfg, spec)
    })
    .into_iter()
    .collect()
}
