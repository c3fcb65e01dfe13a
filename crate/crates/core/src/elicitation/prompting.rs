//! Asking the model itself whether it needs more information, either cold or
//! after demonstrations drawn from the collected known/unknown questions.

use std::collections::HashMap;
use std::sync::Arc;

use super::template::{parse_self_knowledge_response, PromptTemplate};
use super::{query_embedding, ElicitError, Elicitation, Elicitor};
use crate::gateway::Gateway;
use crate::retrieval::{Embedding, VectorIndex};
use crate::types::{Question, SelfKnowledgeLabel, SelfKnowledgeStore};

/// `{question} {suffix}`.
pub fn direct_prompt(question: &Question, template: &PromptTemplate) -> String {
    format!("{} {}", question.text, template.question_suffix)
}

fn parse(raw: &str, template: &PromptTemplate) -> Elicitation {
    let parsed = parse_self_knowledge_response(raw, template);
    Elicitation { label: parsed.label, probability: None, warning: parsed.warning }
}

pub fn elicit_direct(question: &Question, gateway: &Gateway, template: &PromptTemplate) -> Result<Elicitation, ElicitError> {
    let raw = gateway.generate(&direct_prompt(question, template))?;
    Ok(parse(&raw, template))
}

/// Demonstration lines alternate known and unknown questions, one pair per
/// round, followed by the target with an empty answer slot.
pub fn icl_prompt(known: &[&Question], unknown: &[&Question], target: &Question, template: &PromptTemplate) -> String {
    let mut lines = Vec::with_capacity(known.len() + unknown.len() + 1);
    for (k, u) in known.iter().zip(unknown) {
        lines.push(format!("{} {} {}", k.text, template.question_suffix, template.positive_answer));
        lines.push(format!("{} {} {}", u.text, template.question_suffix, template.negative_answer));
    }
    lines.push(direct_prompt(target, template));
    lines.join("\n")
}

/// Picks `per_class` known and unknown demonstration ids.
///
/// With a similarity ranking, the most similar labelled questions come
/// first; otherwise ids are taken in ascending order. The target itself is
/// never used as a demonstration.
pub fn select_demos(
    store: &SelfKnowledgeStore,
    per_class: usize,
    target_id: &str,
    ranking: Option<(&Embedding, &VectorIndex)>,
) -> Result<(Vec<String>, Vec<String>), ElicitError> {
    let ordered: Vec<String> = match ranking {
        Some((query, index)) => index
            .top_k(query, index.len().max(1))?
            .hits
            .into_iter()
            .map(|h| h.id)
            .collect(),
        None => store.iter().map(|(id, _)| id.to_string()).collect(),
    };
    let mut known = Vec::new();
    let mut unknown = Vec::new();
    for id in ordered {
        if id == target_id {
            continue;
        }
        match store.get(&id) {
            Some(SelfKnowledgeLabel::Known) if known.len() < per_class => known.push(id),
            Some(SelfKnowledgeLabel::Unknown) if unknown.len() < per_class => unknown.push(id),
            _ => {}
        }
    }
    if known.len() < per_class || unknown.len() < per_class {
        return Err(ElicitError::InsufficientDemos {
            needed: per_class,
            known: known.len(),
            unknown: unknown.len(),
        });
    }
    Ok((known, unknown))
}

/// Labels `question` using `num_demos_per_class` demonstrations of each
/// class. `ranking` orders candidates by similarity to the target.
#[allow(clippy::too_many_arguments)]
pub fn elicit_icl(
    question: &Question,
    store: &SelfKnowledgeStore,
    questions_by_id: &HashMap<String, Question>,
    gateway: &Gateway,
    template: &PromptTemplate,
    num_demos_per_class: usize,
    ranking: Option<(&Embedding, &VectorIndex)>,
) -> Result<Elicitation, ElicitError> {
    if num_demos_per_class == 0 {
        return Err(ElicitError::InsufficientDemos { needed: 0, known: store.m(), unknown: store.n() });
    }
    let (known_ids, unknown_ids) = select_demos(store, num_demos_per_class, &question.id, ranking)?;
    let lookup = |id: &String| {
        questions_by_id
            .get(id)
            .ok_or_else(|| ElicitError::UnknownQuestion(id.clone()))
    };
    let known: Vec<&Question> = known_ids.iter().map(lookup).collect::<Result<_, _>>()?;
    let unknown: Vec<&Question> = unknown_ids.iter().map(lookup).collect::<Result<_, _>>()?;
    let raw = gateway.generate(&icl_prompt(&known, &unknown, question, template))?;
    Ok(parse(&raw, template))
}

pub struct PromptElicitor {
    gateway: Arc<Gateway>,
    template: PromptTemplate,
}

impl PromptElicitor {
    pub fn new(gateway: Arc<Gateway>, template: PromptTemplate) -> Result<Self, ElicitError> {
        template.validate().map_err(ElicitError::BadTemplate)?;
        Ok(Self { gateway, template })
    }
}

impl Elicitor for PromptElicitor {
    fn name(&self) -> &str {
        "prompt"
    }

    fn elicit(&self, question: &Question) -> Result<Elicitation, ElicitError> {
        elicit_direct(question, &self.gateway, &self.template)
    }
}

/// In-context elicitation with similarity-ranked demonstrations.
pub struct IclElicitor {
    gateway: Arc<Gateway>,
    template: PromptTemplate,
    store: Arc<SelfKnowledgeStore>,
    questions: Arc<HashMap<String, Question>>,
    /// Labelled training questions, for ranking demonstrations.
    train_index: Option<VectorIndex>,
    queries: Arc<HashMap<String, Embedding>>,
    per_class: usize,
}

impl IclElicitor {
    pub fn new(
        gateway: Arc<Gateway>,
        template: PromptTemplate,
        store: Arc<SelfKnowledgeStore>,
        questions: Arc<HashMap<String, Question>>,
        train_index: Option<VectorIndex>,
        queries: Arc<HashMap<String, Embedding>>,
        per_class: usize,
    ) -> Result<Self, ElicitError> {
        template.validate().map_err(ElicitError::BadTemplate)?;
        if store.m() < per_class || store.n() < per_class || per_class == 0 {
            return Err(ElicitError::InsufficientDemos { needed: per_class, known: store.m(), unknown: store.n() });
        }
        Ok(Self { gateway, template, store, questions, train_index, queries, per_class })
    }
}

impl Elicitor for IclElicitor {
    fn name(&self) -> &str {
        "icl"
    }

    fn elicit(&self, question: &Question) -> Result<Elicitation, ElicitError> {
        let ranking = match &self.train_index {
            Some(index) => Some((query_embedding(&self.queries, question)?, index)),
            None => None,
        };
        elicit_icl(
            question,
            &self.store,
            &self.questions,
            &self.gateway,
            &self.template,
            self.per_class,
            ranking,
        )
    }
}
