//! Few-shot answer prompts with and without retrieved passages.
//!
//! Both prompt families share the same demonstrations. A direct prompt is
//!
//! ```text
//! Q: <demo question>
//! A: <rationale> The answer is <answer>.
//!
//! ... (d blocks)
//!
//! Q: <target question>
//! A:
//! ```
//!
//! and an augmented prompt inserts `Here are some passages:` followed by one
//! passage per line between each question and its `A:` line.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::Question;

pub const DEFAULT_PASSAGE_HEADER: &str = "Here are some passages:";
pub const DEFAULT_DEMONSTRATIONS: usize = 4;

/// A worked exemplar. `passages` are the frozen retrieval results used when
/// the demonstration appears in an augmented prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Demonstration {
    pub question: String,
    pub rationale: String,
    pub answer: String,
    #[serde(default)]
    pub passages: Vec<String>,
}

fn default_header() -> String {
    DEFAULT_PASSAGE_HEADER.to_string()
}

fn default_passages_per_question() -> usize {
    crate::retrieval::DEFAULT_PASSAGE_K
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptConfig {
    pub demonstrations: Vec<Demonstration>,
    #[serde(default = "default_header")]
    pub passage_header: String,
    #[serde(default = "default_passages_per_question")]
    pub passages_per_question: usize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("at least one demonstration is required")]
    NoDemonstrations,
    #[error("demonstration {0} has an empty field")]
    EmptyDemonstration(usize),
    #[error("demonstration {0} has no frozen passages")]
    MissingDemoPassages(usize),
    #[error("passages_per_question must be at least 1")]
    ZeroPassages,
    #[error("passage header is empty")]
    EmptyHeader,
    #[error("no passages retrieved for the target question")]
    EmptyRetrieval,
}

impl PromptConfig {
    pub fn validate(&self) -> Result<(), PromptError> {
        if self.demonstrations.is_empty() {
            return Err(PromptError::NoDemonstrations);
        }
        for (i, d) in self.demonstrations.iter().enumerate() {
            if d.question.trim().is_empty() || d.answer.trim().is_empty() {
                return Err(PromptError::EmptyDemonstration(i));
            }
        }
        if self.passages_per_question == 0 {
            return Err(PromptError::ZeroPassages);
        }
        if self.passage_header.trim().is_empty() {
            return Err(PromptError::EmptyHeader);
        }
        Ok(())
    }

    /// Checks the extra requirements of augmented prompts.
    pub fn validate_augmented(&self) -> Result<(), PromptError> {
        self.validate()?;
        match self.demonstrations.iter().position(|d| d.passages.is_empty()) {
            Some(i) => Err(PromptError::MissingDemoPassages(i)),
            None => Ok(()),
        }
    }
}

/// `Q: text`, followed by an `Answer Choices:` line for multiple choice.
pub fn render_question(q: &Question) -> String {
    let mut out = format!("Q: {}", q.text);
    if let Some(choices) = &q.choices {
        out.push_str("\nAnswer Choices:");
        for c in choices {
            out.push_str(&format!(" ({}) {}", c.letter, c.text));
        }
    }
    out
}

fn demo_answer_line(d: &Demonstration) -> String {
    let rationale = d.rationale.trim();
    if rationale.is_empty() {
        format!("A: The answer is {}.", d.answer)
    } else {
        format!("A: {rationale} The answer is {}.", d.answer)
    }
}

fn demo_question(d: &Demonstration) -> String {
    format!("Q: {}", d.question)
}

fn passage_lines(header: &str, passages: &[&str]) -> String {
    let mut out = header.to_string();
    for p in passages {
        out.push('\n');
        out.push_str(p.trim());
    }
    out
}

/// Few-shot prompt without passages.
pub fn build_direct_prompt(question: &Question, cfg: &PromptConfig) -> Result<String, PromptError> {
    cfg.validate()?;
    let mut blocks: Vec<String> = cfg
        .demonstrations
        .iter()
        .map(|d| format!("{}\n{}", demo_question(d), demo_answer_line(d)))
        .collect();
    blocks.push(format!("{}\nA:", render_question(question)));
    Ok(blocks.join("\n\n"))
}

/// Few-shot prompt with passages for every demonstration and for the target.
///
/// At most `passages_per_question` of `passages` are used, in the given
/// order; fewer are used as-is.
pub fn build_augmented_prompt(question: &Question, passages: &[&str], cfg: &PromptConfig) -> Result<String, PromptError> {
    cfg.validate_augmented()?;
    if passages.is_empty() {
        return Err(PromptError::EmptyRetrieval);
    }
    let per_q = cfg.passages_per_question;
    let mut blocks: Vec<String> = cfg
        .demonstrations
        .iter()
        .map(|d| {
            let ps: Vec<&str> = d.passages.iter().take(per_q).map(String::as_str).collect();
            format!(
                "{}\n{}\n{}",
                demo_question(d),
                passage_lines(&cfg.passage_header, &ps),
                demo_answer_line(d)
            )
        })
        .collect();
    let target: Vec<&str> = passages.iter().take(per_q).copied().collect();
    blocks.push(format!(
        "{}\n{}\nA:",
        render_question(question),
        passage_lines(&cfg.passage_header, &target)
    ));
    Ok(blocks.join("\n\n"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Choice;

    fn cfg(d: usize) -> PromptConfig {
        PromptConfig {
            demonstrations: (0..d)
                .map(|i| Demonstration {
                    question: format!("Demo question {i}?"),
                    rationale: format!("Reasoning {i}."),
                    answer: format!("ans{i}"),
                    passages: vec![format!("demo {i} passage a"), format!("demo {i} passage b"), format!("demo {i} passage c"), format!("demo {i} passage d")],
                })
                .collect(),
            passage_header: DEFAULT_PASSAGE_HEADER.into(),
            passages_per_question: 3,
        }
    }

    fn target() -> Question {
        Question {
            id: "t".into(),
            text: "Where would you expect to find a pizzeria while shopping?".into(),
            choices: Some(vec![
                Choice { letter: "a".into(), text: "chicago".into() },
                Choice { letter: "b".into(), text: "food court".into() },
            ]),
            gold_answer: "b".into(),
            dataset: "csqa".into(),
        }
    }

    #[test]
    fn direct_layout() {
        let p = build_direct_prompt(&target(), &cfg(2)).unwrap();
        assert_eq!(
            p,
            "Q: Demo question 0?\nA: Reasoning 0. The answer is ans0.\n\n\
             Q: Demo question 1?\nA: Reasoning 1. The answer is ans1.\n\n\
             Q: Where would you expect to find a pizzeria while shopping?\n\
             Answer Choices: (a) chicago (b) food court\nA:"
        );
        assert!(!p.contains(DEFAULT_PASSAGE_HEADER));
    }

    #[test]
    fn augmented_truncates_and_does_not_pad() {
        let p = build_augmented_prompt(&target(), &["p1", "p2", "p3", "p4"], &cfg(1)).unwrap();
        assert!(p.ends_with("Here are some passages:\np1\np2\np3\nA:"));
        assert!(!p.contains("p4"));
        assert!(!p.contains("demo 0 passage d"));
        let p = build_augmented_prompt(&target(), &["p1", "p2"], &cfg(1)).unwrap();
        assert!(p.ends_with("Answer Choices: (a) chicago (b) food court\nHere are some passages:\np1\np2\nA:"));
    }

    #[test]
    fn augmented_errors() {
        assert_eq!(build_augmented_prompt(&target(), &[], &cfg(1)), Err(PromptError::EmptyRetrieval));
        let mut c = cfg(2);
        c.demonstrations[1].passages.clear();
        assert_eq!(
            build_augmented_prompt(&target(), &["p"], &c),
            Err(PromptError::MissingDemoPassages(1))
        );
        // Direct prompts do not need demo passages.
        assert!(build_direct_prompt(&target(), &c).is_ok());
    }

    #[test]
    fn config_validation() {
        assert_eq!(build_direct_prompt(&target(), &cfg(0)), Err(PromptError::NoDemonstrations));
        let mut c = cfg(1);
        c.passages_per_question = 0;
        assert_eq!(c.validate(), Err(PromptError::ZeroPassages));
        let mut c = cfg(1);
        c.demonstrations[0].answer = " ".into();
        assert_eq!(c.validate(), Err(PromptError::EmptyDemonstration(0)));
    }

    #[test]
    fn config_defaults_from_json() {
        let c: PromptConfig = serde_json::from_str(
            r#"{"demonstrations":[{"question":"q","rationale":"r","answer":"a"}]}"#,
        )
        .unwrap();
        assert_eq!(c.passage_header, "Here are some passages:");
        assert_eq!(c.passages_per_question, 3);
    }
}
