//! Shared domain types: questions, passages, answer records, self-knowledge
//! labels and the store that partitions training questions.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One lettered option of a multiple-choice question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub letter: String,
    pub text: String,
}

/// A QA item as stored in a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<Choice>>,
    pub gold_answer: String,
    pub dataset: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ValidationError {
    #[error("empty id")]
    EmptyId,
    #[error("item {0}: empty text")]
    EmptyText(String),
    #[error("item {id}: gold answer {gold:?} is not one of the choice letters")]
    GoldNotAChoice { id: String, gold: String },
    #[error("item {0}: empty gold answer")]
    EmptyGold(String),
    #[error("duplicate id {0}")]
    DuplicateId(String),
}

impl Question {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.id.is_empty() {
            return Err(ValidationError::EmptyId);
        }
        if self.text.trim().is_empty() {
            return Err(ValidationError::EmptyText(self.id.clone()));
        }
        if self.gold_answer.trim().is_empty() {
            return Err(ValidationError::EmptyGold(self.id.clone()));
        }
        if let Some(choices) = &self.choices {
            if !choices
                .iter()
                .any(|c| c.letter.eq_ignore_ascii_case(&self.gold_answer))
            {
                return Err(ValidationError::GoldNotAChoice {
                    id: self.id.clone(),
                    gold: self.gold_answer.clone(),
                });
            }
        }
        Ok(())
    }

    /// The extraction format implied by the question shape.
    pub fn answer_format(&self, free_text: AnswerFormat) -> AnswerFormat {
        if self.choices.is_some() {
            AnswerFormat::OptionLetter
        } else {
            free_text
        }
    }
}

/// A retrievable text chunk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub text: String,
    pub corpus: String,
}

impl Passage {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.id.is_empty() {
            return Err(ValidationError::EmptyId);
        }
        if self.text.trim().is_empty() {
            return Err(ValidationError::EmptyText(self.id.clone()));
        }
        Ok(())
    }
}

/// Checks per-item invariants and id uniqueness over a whole dataset.
pub fn validate_questions(questions: &[Question]) -> Result<(), ValidationError> {
    let mut seen = HashSet::new();
    for q in questions {
        q.validate()?;
        if !seen.insert((q.dataset.as_str(), q.id.as_str())) {
            return Err(ValidationError::DuplicateId(q.id.clone()));
        }
    }
    Ok(())
}

pub fn validate_passages(passages: &[Passage]) -> Result<(), ValidationError> {
    let mut seen = HashSet::new();
    for p in passages {
        p.validate()?;
        if !seen.insert((p.corpus.as_str(), p.id.as_str())) {
            return Err(ValidationError::DuplicateId(p.id.clone()));
        }
    }
    Ok(())
}

/// Whether an answer was produced from internal knowledge only or with
/// retrieved passages in the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Direct,
    Augmented,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Direct => f.write_str("direct"),
            Mode::Augmented => f.write_str("augmented"),
        }
    }
}

/// One model response to one question under one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub question_id: String,
    pub mode: Mode,
    pub raw_response: String,
    pub extracted_answer: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelfKnowledgeLabel {
    Known,
    Unknown,
    Discarded,
}

impl fmt::Display for SelfKnowledgeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelfKnowledgeLabel::Known => "known",
            SelfKnowledgeLabel::Unknown => "unknown",
            SelfKnowledgeLabel::Discarded => "discarded",
        })
    }
}

/// Serialized form of one store entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub question_id: String,
    pub label: SelfKnowledgeLabel,
}

/// Partition of training questions into known / unknown / discarded.
///
/// `m` and `n` are maintained on every insert so they always agree with the
/// entries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SelfKnowledgeStore {
    entries: BTreeMap<String, SelfKnowledgeLabel>,
    m: usize,
    n: usize,
}

impl SelfKnowledgeStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces the label for `question_id`.
    pub fn insert(&mut self, question_id: impl Into<String>, label: SelfKnowledgeLabel) {
        if let Some(old) = self.entries.insert(question_id.into(), label) {
            self.adjust(old, false);
        }
        self.adjust(label, true);
    }

    fn adjust(&mut self, label: SelfKnowledgeLabel, add: bool) {
        let slot = match label {
            SelfKnowledgeLabel::Known => &mut self.m,
            SelfKnowledgeLabel::Unknown => &mut self.n,
            SelfKnowledgeLabel::Discarded => return,
        };
        if add {
            *slot += 1;
        } else {
            *slot -= 1;
        }
    }

    pub fn get(&self, question_id: &str) -> Option<SelfKnowledgeLabel> {
        self.entries.get(question_id).copied()
    }

    /// Number of known questions.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of unknown questions.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn discarded(&self) -> usize {
        self.entries.len() - self.m - self.n
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, SelfKnowledgeLabel)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Ids carrying `label`, ascending.
    pub fn ids_with(&self, label: SelfKnowledgeLabel) -> Vec<&str> {
        self.iter()
            .filter(|(_, l)| *l == label)
            .map(|(id, _)| id)
            .collect()
    }

    pub fn to_entries(&self) -> Vec<LabelEntry> {
        self.iter()
            .map(|(id, label)| LabelEntry {
                question_id: id.to_string(),
                label,
            })
            .collect()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = LabelEntry>) -> Self {
        let mut store = Self::new();
        for e in entries {
            store.insert(e.question_id, e.label);
        }
        store
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerFormat {
    OptionLetter,
    TrueFalse,
    FreeForm,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExtractError {
    #[error("empty response")]
    EmptyResponse,
    #[error("no answer pattern in response")]
    NoAnswerPattern,
}

const ANCHOR: &str = "answer is";

/// Pulls the final answer out of a model response.
///
/// Anchors on the last case-insensitive "answer is"; chain-of-thought output
/// often mentions candidates before concluding.
pub fn extract_answer(raw_response: &str, format: AnswerFormat) -> Result<String, ExtractError> {
    if raw_response.trim().is_empty() {
        return Err(ExtractError::EmptyResponse);
    }
    let cleaned = strip_markup(raw_response);
    // ASCII lowercasing keeps byte offsets aligned with `cleaned`.
    let lower = cleaned.to_ascii_lowercase();
    let pos = lower.rfind(ANCHOR).ok_or(ExtractError::NoAnswerPattern)?;
    let tail = cleaned[pos + ANCHOR.len()..]
        .trim_start_matches(|c: char| c.is_whitespace() || c == ':' || c == '"' || c == '\'');

    match format {
        AnswerFormat::OptionLetter => option_letter(tail),
        AnswerFormat::TrueFalse => {
            let word: String = tail
                .chars()
                .take_while(|c| c.is_ascii_alphabetic())
                .collect::<String>()
                .to_ascii_lowercase();
            match word.as_str() {
                "true" | "false" | "yes" | "no" => Ok(word),
                _ => Err(ExtractError::NoAnswerPattern),
            }
        }
        AnswerFormat::FreeForm => {
            let end = sentence_end(tail);
            let answer = tail[..end]
                .trim()
                .trim_end_matches(['.', ',', ';', '!', '?', '"', '\''])
                .trim();
            if answer.is_empty() {
                Err(ExtractError::NoAnswerPattern)
            } else {
                Ok(answer.to_string())
            }
        }
    }
}

fn option_letter(tail: &str) -> Result<String, ExtractError> {
    let mut chars = tail.chars();
    let first = chars.next().ok_or(ExtractError::NoAnswerPattern)?;
    let (letter, after) = if first == '(' {
        let letter = chars.next().ok_or(ExtractError::NoAnswerPattern)?;
        if chars.next() != Some(')') {
            return Err(ExtractError::NoAnswerPattern);
        }
        (letter, None)
    } else {
        (first, chars.next())
    };
    // A bare letter must stand alone, not start a word.
    if !letter.is_ascii_alphabetic() || after.is_some_and(|c| c.is_alphanumeric()) {
        return Err(ExtractError::NoAnswerPattern);
    }
    Ok(letter.to_ascii_lowercase().to_string())
}

/// Byte offset of the end of the first sentence in `s`: a newline, or a
/// terminal mark followed by whitespace or end of input.
fn sentence_end(s: &str) -> usize {
    let mut iter = s.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if c == '\n' {
            return i;
        }
        if matches!(c, '.' | '!' | '?') {
            match iter.peek() {
                None => return i,
                Some((_, next)) if next.is_whitespace() => return i,
                _ => {}
            }
        }
    }
    s.len()
}

/// Removes emphasis markup that models put around answers.
fn strip_markup(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(start) = rest.find("\\underline{") {
        out.push_str(&rest[..start]);
        let body = &rest[start + "\\underline{".len()..];
        match body.find('}') {
            Some(close) => {
                out.push_str(&body[..close]);
                rest = &body[close + 1..];
            }
            None => {
                rest = body;
            }
        }
    }
    out.push_str(rest);
    for tag in ["<u>", "</u>", "<b>", "</b>", "**", "__"] {
        out = out.replace(tag, "");
    }
    out
}
