//! Building the self-knowledge store: every training question is answered
//! once from internal knowledge and once with retrieved passages, and the two
//! scores decide whether the question is known, unknown or discarded.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptive::prompt::{build_augmented_prompt, build_direct_prompt, PromptConfig, PromptError};
use crate::gateway::Gateway;
use crate::io::{self, DataError};
use crate::metrics::{AnswerSpec, Metric};
use crate::parallel::ordered_map;
use crate::retrieval::PassageSource;
use crate::types::{AnswerRecord, Mode, Question, SelfKnowledgeLabel, SelfKnowledgeStore};

#[derive(Debug, Error)]
pub enum CollectionError {
    #[error("score out of range: direct={direct}, augmented={augmented}")]
    ScoreOutOfRange { direct: f64, augmented: f64 },
    #[error("question {0} is missing its {1} record")]
    IncompleteRun(String, Mode),
    #[error("question {id}: record under the {slot} slot has mode {found}")]
    ModeMismatch { id: String, slot: Mode, found: Mode },
    #[error("{errored} of {total} questions failed, above the 10% limit")]
    TooManyErrors { errored: usize, total: usize },
    #[error("augmented collection needs a passage source")]
    NoPassageSource,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// A question that could not be answered in one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErroredQuestion {
    pub question_id: String,
    pub mode: Mode,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CollectOutcome {
    pub records: Vec<AnswerRecord>,
    pub errored: Vec<ErroredQuestion>,
}

/// Answers every question in one mode.
///
/// Per-question failures (gateway, retrieval) are collected rather than
/// propagated; the call fails only if more than 10% of questions error or the
/// prompt configuration itself is invalid.
pub fn collect_answers(
    questions: &[Question],
    gateway: &Gateway,
    prompts: &PromptConfig,
    passages: Option<&dyn PassageSource>,
    mode: Mode,
    spec: &AnswerSpec,
) -> Result<CollectOutcome, CollectionError> {
    match mode {
        Mode::Direct => prompts.validate()?,
        Mode::Augmented => {
            prompts.validate_augmented()?;
            if passages.is_none() {
                return Err(CollectionError::NoPassageSource);
            }
        }
    }

    let results = ordered_map(questions, gateway.concurrency(), |q| -> Result<AnswerRecord, String> {
        let prompt = match mode {
            Mode::Direct => build_direct_prompt(q, prompts).map_err(|e| e.to_string())?,
            Mode::Augmented => {
                let source = passages.expect("checked above");
                let hits = source
                    .retrieve(q, prompts.passages_per_question)
                    .map_err(|e| format!("retrieval: {e}"))?;
                let texts: Vec<&str> = hits.iter().map(|h| h.text.as_str()).collect();
                build_augmented_prompt(q, &texts, prompts).map_err(|e| e.to_string())?
            }
        };
        let raw = gateway.generate(&prompt).map_err(|e| format!("generation: {e}"))?;
        let (extracted_answer, score) = spec.grade(q, &raw);
        Ok(AnswerRecord { question_id: q.id.clone(), mode, raw_response: raw, extracted_answer, score })
    });

    let mut outcome = CollectOutcome::default();
    for (q, r) in questions.iter().zip(results) {
        match r {
            Ok(rec) => outcome.records.push(rec),
            Err(message) => {
                log::warn!("question {} ({mode}) failed: {message}", q.id);
                outcome.errored.push(ErroredQuestion { question_id: q.id.clone(), mode, message });
            }
        }
    }
    // Abort above 10%: errored / total > 1/10.
    if outcome.errored.len() * 10 > questions.len() {
        return Err(CollectionError::TooManyErrors {
            errored: outcome.errored.len(),
            total: questions.len(),
        });
    }
    Ok(outcome)
}

/// Known if the direct answer scores at least as well as the augmented one,
/// unknown if augmentation is strictly better, discarded if both score 0.
pub fn label_question(score_direct: f64, score_augmented: f64) -> Result<SelfKnowledgeLabel, CollectionError> {
    let in_range = |s: f64| (0.0..=1.0).contains(&s);
    if !in_range(score_direct) || !in_range(score_augmented) {
        return Err(CollectionError::ScoreOutOfRange { direct: score_direct, augmented: score_augmented });
    }
    Ok(if score_direct == 0.0 && score_augmented == 0.0 {
        SelfKnowledgeLabel::Discarded
    } else if score_direct >= score_augmented {
        SelfKnowledgeLabel::Known
    } else {
        SelfKnowledgeLabel::Unknown
    })
}

/// The two records for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordPair {
    pub question_id: String,
    pub direct: Option<AnswerRecord>,
    pub augmented: Option<AnswerRecord>,
}

impl RecordPair {
    /// Both records, or the mode that is missing.
    pub fn complete(&self) -> Result<(&AnswerRecord, &AnswerRecord), CollectionError> {
        let direct = self
            .direct
            .as_ref()
            .ok_or_else(|| CollectionError::IncompleteRun(self.question_id.clone(), Mode::Direct))?;
        let augmented = self
            .augmented
            .as_ref()
            .ok_or_else(|| CollectionError::IncompleteRun(self.question_id.clone(), Mode::Augmented))?;
        for (slot, rec) in [(Mode::Direct, direct), (Mode::Augmented, augmented)] {
            if rec.mode != slot {
                return Err(CollectionError::ModeMismatch {
                    id: self.question_id.clone(),
                    slot,
                    found: rec.mode,
                });
            }
        }
        Ok((direct, augmented))
    }
}

/// Paired direct/augmented answers over one dataset split.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectionRun {
    pub dataset: String,
    pub metric: Metric,
    pub records: BTreeMap<String, RecordPair>,
    /// Ids that failed in at least one mode; they have no pair.
    pub errored: Vec<String>,
}

impl CollectionRun {
    /// Pairs records by question id. Questions that errored in either mode
    /// are left out of `records` and listed in `errored`.
    pub fn pair(
        dataset: impl Into<String>,
        metric: Metric,
        direct: CollectOutcome,
        augmented: CollectOutcome,
    ) -> Self {
        let mut records: BTreeMap<String, RecordPair> = BTreeMap::new();
        for rec in direct.records {
            let id = rec.question_id.clone();
            records
                .entry(id.clone())
                .or_insert_with(|| RecordPair { question_id: id, direct: None, augmented: None })
                .direct = Some(rec);
        }
        for rec in augmented.records {
            let id = rec.question_id.clone();
            records
                .entry(id.clone())
                .or_insert_with(|| RecordPair { question_id: id, direct: None, augmented: None })
                .augmented = Some(rec);
        }
        let mut errored: Vec<String> = direct
            .errored
            .into_iter()
            .chain(augmented.errored)
            .map(|e| e.question_id)
            .collect();
        errored.extend(
            records
                .values()
                .filter(|p| p.direct.is_none() || p.augmented.is_none())
                .map(|p| p.question_id.clone()),
        );
        errored.sort();
        errored.dedup();
        for id in &errored {
            records.remove(id);
        }
        Self { dataset: dataset.into(), metric, records, errored }
    }

    /// Writes one JSON line per question pair, in id order.
    pub fn save(&self, path: &Path) -> Result<(), CollectionError> {
        io::write_jsonl(path, self.records.values())?;
        Ok(())
    }

    pub fn load(path: &Path, dataset: impl Into<String>, metric: Metric) -> Result<Self, CollectionError> {
        let pairs: Vec<RecordPair> = io::read_jsonl(path)?;
        let records = pairs.into_iter().map(|p| (p.question_id.clone(), p)).collect();
        Ok(Self { dataset: dataset.into(), metric, records, errored: Vec::new() })
    }
}

/// Labels every question in the run.
pub fn build_store(run: &CollectionRun) -> Result<SelfKnowledgeStore, CollectionError> {
    let mut store = SelfKnowledgeStore::new();
    for (id, pair) in &run.records {
        let (direct, augmented) = pair.complete()?;
        store.insert(id.clone(), label_question(direct.score, augmented.score)?);
    }
    Ok(store)
}
