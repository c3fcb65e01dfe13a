//! Answer scoring: exact match, token F1 and accuracy over SQuAD-style
//! normalized text.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{extract_answer, AnswerFormat, Question};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ExactMatch,
    TokenF1,
    Accuracy,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::ExactMatch => "em",
            Metric::TokenF1 => "f1",
            Metric::Accuracy => "accuracy",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("gold answer is empty")]
    EmptyGold,
}

/// Lowercases, drops ASCII punctuation and the articles a/an/the, and
/// collapses whitespace.
pub fn normalize_text(s: &str) -> String {
    let lowered: String = s
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    lowered
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn score(prediction: &str, gold: &str, metric: Metric) -> Result<f64, MetricError> {
    if gold.is_empty() {
        return Err(MetricError::EmptyGold);
    }
    let pred = normalize_text(prediction);
    let gold = normalize_text(gold);
    Ok(match metric {
        Metric::ExactMatch | Metric::Accuracy => {
            if pred == gold {
                1.0
            } else {
                0.0
            }
        }
        Metric::TokenF1 => token_f1(&pred, &gold),
    })
}

/// F1 over token bags of two already-normalized strings.
fn token_f1(pred: &str, gold: &str) -> f64 {
    let pred_tokens: Vec<&str> = pred.split_whitespace().collect();
    let gold_tokens: Vec<&str> = gold.split_whitespace().collect();
    match (pred_tokens.is_empty(), gold_tokens.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut gold_counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold_tokens {
        *gold_counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pred_tokens {
        if let Some(c) = gold_counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    // 2PR/(P+R) reduces to 2c/(|pred|+|gold|); the reduced form is exact for
    // ratios like 4/5.
    (2 * common) as f64 / (pred_tokens.len() + gold_tokens.len()) as f64
}

/// How responses for a dataset are extracted and scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerSpec {
    /// Format for questions without choices; multiple-choice questions always
    /// use option letters.
    pub free_text_format: AnswerFormat,
    pub metric: Metric,
}

impl Default for AnswerSpec {
    fn default() -> Self {
        Self { free_text_format: AnswerFormat::FreeForm, metric: Metric::Accuracy }
    }
}

impl AnswerSpec {
    /// Extracts the answer from `raw` and scores it against the question's
    /// gold answer. A response without an answer pattern scores 0.
    pub fn grade(&self, question: &Question, raw: &str) -> (String, f64) {
        let format = question.answer_format(self.free_text_format);
        match extract_answer(raw, format) {
            Ok(answer) => {
                let s = score(&answer, &question.gold_answer, self.metric).unwrap_or(0.0);
                (answer, s)
            }
            Err(_) => (String::new(), 0.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_text("The Beijing Bicycle!"), "beijing bicycle");
        assert_eq!(normalize_text("A  B"), "b");
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("  an\tApple, the pie "), "apple pie");
    }

    #[test]
    fn score_examples() {
        assert_eq!(score("beijing bicycle", "Beijing Bicycle", Metric::ExactMatch), Ok(1.0));
        assert_eq!(
            score("the Beijing Bicycle film", "Beijing Bicycle", Metric::TokenF1),
            Ok(0.8)
        );
        assert_eq!(score("d", "b", Metric::Accuracy), Ok(0.0));
    }

    #[test]
    fn empty_gold() {
        assert_eq!(score("x", "", Metric::TokenF1), Err(MetricError::EmptyGold));
    }

    #[test]
    fn f1_empty_sides() {
        // Gold normalizes to nothing.
        assert_eq!(score("", "the", Metric::TokenF1), Ok(1.0));
        assert_eq!(score("cat", "the", Metric::TokenF1), Ok(0.0));
        assert_eq!(score("", "cat", Metric::TokenF1), Ok(0.0));
    }

    #[test]
    fn f1_uses_bag_counts() {
        // pred: cat cat cat, gold: cat dog -> common 1, P=1/3, R=1/2, F1=2/5
        assert_eq!(score("cat cat cat", "cat dog", Metric::TokenF1), Ok(2.0 / 5.0));
    }
}
