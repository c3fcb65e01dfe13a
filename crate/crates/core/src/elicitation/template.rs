//! Self-knowledge question templates and response parsing.

use serde::{Deserialize, Serialize};

use crate::types::SelfKnowledgeLabel;

fn default_known_markers() -> Vec<String> {
    vec!["don't need".into(), "do not need".into()]
}

fn default_unknown_markers() -> Vec<String> {
    vec!["need additional".into()]
}

/// The question appended to a target question, and the two canonical
/// answers used for in-context demonstrations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub question_suffix: String,
    /// Answer meaning "answerable without help".
    pub positive_answer: String,
    /// Answer meaning "needs retrieved information".
    pub negative_answer: String,
    /// Substrings implying a known question, checked before `unknown_markers`.
    #[serde(default = "default_known_markers")]
    pub known_markers: Vec<String>,
    #[serde(default = "default_unknown_markers")]
    pub unknown_markers: Vec<String>,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            question_suffix: "Q: Do you need additional information to answer this question? A:".into(),
            positive_answer: "No, I don't need additional information to answer this question.".into(),
            negative_answer: "Yes, I need additional information to answer this question.".into(),
            known_markers: default_known_markers(),
            unknown_markers: default_unknown_markers(),
        }
    }
}

/// Names accepted by [`PromptTemplate::preset`].
pub const PRESETS: [&str; 5] = [
    "need-info",
    "extra-prompts",
    "additional-clues",
    "answer-from-knowledge",
    "solve-now",
];

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl PromptTemplate {
    /// One of the built-in template variants.
    pub fn preset(name: &str) -> Option<Self> {
        let t = match name {
            "need-info" => Self::default(),
            "extra-prompts" => Self {
                question_suffix: "Q: Would you like any extra prompts to help you? A:".into(),
                positive_answer: "No, I do not need any extra prompts.".into(),
                negative_answer: "Yes, please.".into(),
                known_markers: strings(&["do not need", "don't need"]),
                unknown_markers: strings(&["please"]),
            },
            "additional-clues" => Self {
                question_suffix: "Q: Would you like any additional clues? A:".into(),
                positive_answer: "No, the answer is clear without additional clues.".into(),
                negative_answer: "Yes, please provide additional clues.".into(),
                known_markers: strings(&["do not need", "don't need", "the answer is"]),
                unknown_markers: strings(&["please provide"]),
            },
            "answer-from-knowledge" => Self {
                question_suffix: "Q: Can you answer this question based on what you know? A:".into(),
                positive_answer: "Yes, the correct answer to this question is known to me.".into(),
                negative_answer: "No, I cannot answer it based on what I know.".into(),
                known_markers: strings(&["the correct answer"]),
                unknown_markers: strings(&["cannot answer", "can't answer"]),
            },
            "solve-now" => Self {
                question_suffix: "Q: Can you solve this question now? A:".into(),
                positive_answer: "Yes, the correct answer is known to me.".into(),
                negative_answer: "No, this is not a solvable question for me now.".into(),
                known_markers: strings(&["the correct answer"]),
                unknown_markers: strings(&["not a solvable", "cannot solve", "can't solve"]),
            },
            _ => return None,
        };
        Some(t)
    }

    /// Positive and negative answers must differ and be non-empty.
    pub fn validate(&self) -> Result<(), String> {
        if self.positive_answer.trim().is_empty() || self.negative_answer.trim().is_empty() {
            return Err("template answers must be non-empty".into());
        }
        if self.positive_answer == self.negative_answer {
            return Err("template answers must differ".into());
        }
        if self.question_suffix.trim().is_empty() {
            return Err("template question suffix is empty".into());
        }
        Ok(())
    }
}

/// Outcome of parsing a self-knowledge response. `warning` is set when
/// nothing matched and the label fell back to unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParsedResponse {
    pub label: SelfKnowledgeLabel,
    pub warning: bool,
}

fn leading_word(s: &str) -> String {
    s.trim_start()
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect::<String>()
        .to_lowercase()
}

/// Maps a free-text response to known/unknown.
///
/// The leading word is compared against the leading words of the template's
/// two answers ("No"/"Yes" for the default template) and wins over substring
/// matching. Responses that match nothing are treated as unknown.
pub fn parse_self_knowledge_response(text: &str, template: &PromptTemplate) -> ParsedResponse {
    let known_lead = leading_word(&template.positive_answer);
    let unknown_lead = leading_word(&template.negative_answer);
    let lead = leading_word(text);
    if !lead.is_empty() && known_lead != unknown_lead {
        if lead == known_lead {
            return ParsedResponse { label: SelfKnowledgeLabel::Known, warning: false };
        }
        if lead == unknown_lead {
            return ParsedResponse { label: SelfKnowledgeLabel::Unknown, warning: false };
        }
    }
    let lower = text.to_lowercase().replace('\u{2019}', "'");
    if template.known_markers.iter().any(|m| lower.contains(&m.to_lowercase())) {
        return ParsedResponse { label: SelfKnowledgeLabel::Known, warning: false };
    }
    if template.unknown_markers.iter().any(|m| lower.contains(&m.to_lowercase())) {
        return ParsedResponse { label: SelfKnowledgeLabel::Unknown, warning: false };
    }
    log::warn!("unparseable self-knowledge response {text:?}; treating as unknown");
    ParsedResponse { label: SelfKnowledgeLabel::Unknown, warning: true }
}
