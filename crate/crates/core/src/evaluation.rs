//! Run scoring, the beneficial-guidance analysis over questions whose
//! correctness flips with retrieval, and the training-size and corpus
//! ablations.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptive::FinalAnswer;
use crate::collection::{CollectionError, CollectionRun};
use crate::metrics::Metric;
use crate::types::{Mode, SelfKnowledgeLabel, SelfKnowledgeStore};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no answers to evaluate")]
    EmptyRun,
    #[error("flip set is empty")]
    EmptyFlipSet,
    #[error("no label for question {0}")]
    MissingLabel(String),
    #[error("fraction {0} is outside (0, 1]")]
    FractionOutOfRange(f64),
    #[error("fractions must be ascending and end at 1.0")]
    BadFractions,
    #[error("corpus ablation needs at least two corpora, got {0}")]
    TooFewCorpora(usize),
    #[error("duplicate answer for question {0}")]
    DuplicateAnswer(String),
    #[error(transparent)]
    Collection(#[from] CollectionError),
}

/// Rounds to two decimals, the precision reports use.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub question_id: String,
    pub label_used: SelfKnowledgeLabel,
    pub retrieval_used: bool,
    pub extracted_answer: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub policy: String,
    pub n_questions: usize,
    pub metric: Metric,
    /// Mean score in percent, two decimals.
    pub value: f64,
    /// Fraction of questions answered with retrieval.
    pub retrieval_rate: f64,
    /// Sorted by question id.
    pub rows: Vec<EvalRow>,
}

/// Aggregates scored answers. The result does not depend on input order.
pub fn evaluate(
    dataset: &str,
    policy: &str,
    answers: &[FinalAnswer],
    metric: Metric,
) -> Result<EvalReport, EvalError> {
    if answers.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let mut rows: Vec<EvalRow> = answers
        .iter()
        .map(|a| EvalRow {
            question_id: a.question_id.clone(),
            label_used: a.label_used,
            retrieval_used: a.retrieval_used,
            extracted_answer: a.extracted_answer.clone(),
            score: a.score,
        })
        .collect();
    rows.sort_by(|a, b| a.question_id.cmp(&b.question_id));
    if let Some(w) = rows.windows(2).find(|w| w[0].question_id == w[1].question_id) {
        return Err(EvalError::DuplicateAnswer(w[0].question_id.clone()));
    }
    let n = rows.len();
    let total: f64 = rows.iter().map(|r| r.score).sum();
    let retrieved = rows.iter().filter(|r| r.retrieval_used).count();
    Ok(EvalReport {
        dataset: dataset.to_string(),
        policy: policy.to_string(),
        n_questions: n,
        metric,
        value: round2(100.0 * total / n as f64),
        retrieval_rate: retrieved as f64 / n as f64,
        rows,
    })
}

/// Aligned summary table, one line per report.
pub fn format_reports(reports: &[EvalReport]) -> String {
    let header = ["dataset", "policy", "n", "metric", "value", "retrieval_rate"];
    let body: Vec<[String; 6]> = reports
        .iter()
        .map(|r| {
            [
                r.dataset.clone(),
                r.policy.clone(),
                r.n_questions.to_string(),
                r.metric.name().to_string(),
                format!("{:.2}", r.value),
                format!("{:.4}", r.retrieval_rate),
            ]
        })
        .collect();
    aligned(&header, &body)
}

fn aligned<const N: usize>(header: &[&str; N], body: &[[String; N]]) -> String {
    let mut widths = header.map(str::len);
    for row in body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(header.to_vec());
    for row in body {
        line(row.iter().map(String::as_str).collect());
    }
    out
}

/// A question whose answer is correct in exactly one mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flip {
    pub question_id: String,
    pub correct_mode: Mode,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipSet {
    pub flips: Vec<Flip>,
    /// Questions left out because they errored in either mode.
    pub errored: usize,
}

impl FlipSet {
    /// A mode counts as correct when its score is exactly 1.
    pub fn from_run(run: &CollectionRun) -> Result<Self, EvalError> {
        let mut flips = Vec::new();
        for (id, pair) in &run.records {
            let (direct, augmented) = pair.complete()?;
            let d = direct.score == 1.0;
            let a = augmented.score == 1.0;
            if d != a {
                let correct_mode = if d { Mode::Direct } else { Mode::Augmented };
                flips.push(Flip { question_id: id.clone(), correct_mode });
            }
        }
        Ok(Self { flips, errored: run.errored.len() })
    }

    pub fn len(&self) -> usize {
        self.flips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flips.is_empty()
    }
}

/// Percentage of flips where the label routes to the mode that was correct:
/// known for direct-correct, unknown for augmented-correct.
pub fn beneficial_guidance(
    flips: &FlipSet,
    labels: &HashMap<String, SelfKnowledgeLabel>,
) -> Result<f64, EvalError> {
    if flips.is_empty() {
        return Err(EvalError::EmptyFlipSet);
    }
    let mut good = 0usize;
    for f in &flips.flips {
        let label = labels
            .get(&f.question_id)
            .ok_or_else(|| EvalError::MissingLabel(f.question_id.clone()))?;
        let routed = match label {
            SelfKnowledgeLabel::Known => Some(Mode::Direct),
            SelfKnowledgeLabel::Unknown => Some(Mode::Augmented),
            SelfKnowledgeLabel::Discarded => None,
        };
        if routed == Some(f.correct_mode) {
            good += 1;
        }
    }
    Ok(100.0 * good as f64 / flips.len() as f64)
}

/// One cell of an ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// The training fraction, the corpus name, or `average`.
    pub key: String,
    pub policy: String,
    pub metric: Metric,
    pub value: f64,
}

pub const ABLATION_CSV_HEADER: &str = "fraction_or_corpus,policy,metric,value";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(ABLATION_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.2}",
            csv_field(&r.key),
            csv_field(&r.policy),
            r.metric.name(),
            r.value
        );
    }
    out
}

pub fn format_ablation(rows: &[AblationRow]) -> String {
    let body: Vec<[String; 4]> = rows
        .iter()
        .map(|r| [r.key.clone(), r.policy.clone(), r.metric.name().to_string(), format!("{:.2}", r.value)])
        .collect();
    aligned(&["fraction_or_corpus", "policy", "metric", "value"], &body)
}

/// Nested training subsets: known and unknown ids are shuffled separately
/// with one seeded RNG, and each fraction keeps a prefix of
/// `ceil(fraction * class size)` of each class. Discarded entries are
/// dropped.
pub fn training_subsets(
    store: &SelfKnowledgeStore,
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<SelfKnowledgeStore>, EvalError> {
    for &f in fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(EvalError::FractionOutOfRange(f));
        }
    }
    if fractions.is_empty() || fractions.windows(2).any(|w| w[0] >= w[1]) || *fractions.last().unwrap() != 1.0 {
        return Err(EvalError::BadFractions);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut known = store.ids_with(SelfKnowledgeLabel::Known);
    let mut unknown = store.ids_with(SelfKnowledgeLabel::Unknown);
    known.shuffle(&mut rng);
    unknown.shuffle(&mut rng);
    let take = |len: usize, f: f64| ((f * len as f64).ceil() as usize).min(len);
    Ok(fractions
        .iter()
        .map(|&f| {
            let mut sub = SelfKnowledgeStore::new();
            for id in &known[..take(known.len(), f)] {
                sub.insert(*id, SelfKnowledgeLabel::Known);
            }
            for id in &unknown[..take(unknown.len(), f)] {
                sub.insert(*id, SelfKnowledgeLabel::Unknown);
            }
            sub
        })
        .collect())
}

/// Re-runs `eval` on nested subsets of the store. `eval` returns one
/// `(policy, value)` pair per policy it evaluates.
pub fn ablate_training_size<E, F>(
    store: &SelfKnowledgeStore,
    fractions: &[f64],
    seed: u64,
    metric: Metric,
    mut eval: F,
) -> Result<Vec<AblationRow>, E>
where
    E: From<EvalError>,
    F: FnMut(&SelfKnowledgeStore) -> Result<Vec<(String, f64)>, E>,
{
    let subsets = training_subsets(store, fractions, seed)?;
    let mut rows = Vec::new();
    for (f, sub) in fractions.iter().zip(&subsets) {
        for (policy, value) in eval(sub)? {
            rows.push(AblationRow { key: f.to_string(), policy, metric, value });
        }
    }
    Ok(rows)
}

/// Re-runs `eval` once per named corpus and appends a per-policy `average`
/// row.
pub fn ablate_corpus<T, E, F>(corpora: &[(String, T)], metric: Metric, mut eval: F) -> Result<Vec<AblationRow>, E>
where
    E: From<EvalError>,
    F: FnMut(&T) -> Result<Vec<(String, f64)>, E>,
{
    if corpora.len() < 2 {
        return Err(EvalError::TooFewCorpora(corpora.len()).into());
    }
    let mut rows = Vec::new();
    let mut sums: Vec<(String, f64, usize)> = Vec::new();
    for (name, corpus) in corpora {
        for (policy, value) in eval(corpus)? {
            match sums.iter_mut().find(|(p, _, _)| *p == policy) {
                Some(s) => {
                    s.1 += value;
                    s.2 += 1;
                }
                None => sums.push((policy.clone(), value, 1)),
            }
            rows.push(AblationRow { key: name.clone(), policy, metric, value });
        }
    }
    for (policy, sum, count) in sums {
        rows.push(AblationRow { key: "average".into(), policy, metric, value: sum / count as f64 });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ans(id: &str, score: f64, retrieval: bool) -> FinalAnswer {
        FinalAnswer {
            question_id: id.into(),
            label_used: if retrieval { SelfKnowledgeLabel::Unknown } else { SelfKnowledgeLabel::Known },
            retrieval_used: retrieval,
            raw_response: String::new(),
            extracted_answer: String::new(),
            score,
        }
    }

    #[test]
    fn evaluate_arithmetic() {
        let a = [ans("a", 1.0, false), ans("b", 1.0, true), ans("c", 0.0, false), ans("d", 0.0, false)];
        let r = evaluate("d", "p", &a, Metric::Accuracy).unwrap();
        assert_eq!(r.value, 50.0);
        assert_eq!(r.retrieval_rate, 0.25);
        let mut rev = a.to_vec();
        rev.reverse();
        assert_eq!(evaluate("d", "p", &rev, Metric::Accuracy).unwrap(), r);
        assert!(matches!(evaluate("d", "p", &[], Metric::Accuracy), Err(EvalError::EmptyRun)));
    }

    #[test]
    fn evaluate_rounds_to_two_decimals() {
        let a = [ans("a", 1.0, false), ans("b", 0.0, false), ans("c", 0.0, false)];
        assert_eq!(evaluate("d", "p", &a, Metric::Accuracy).unwrap().value, 33.33);
    }

    fn flips(modes: &[Mode]) -> FlipSet {
        FlipSet {
            flips: modes
                .iter()
                .enumerate()
                .map(|(i, m)| Flip { question_id: format!("q{i}"), correct_mode: *m })
                .collect(),
            errored: 0,
        }
    }

    #[test]
    fn guidance_seven_of_ten() {
        let f = flips(&[Mode::Direct; 10]);
        let labels: HashMap<_, _> = (0..10)
            .map(|i| {
                let l = if i < 7 { SelfKnowledgeLabel::Known } else { SelfKnowledgeLabel::Unknown };
                (format!("q{i}"), l)
            })
            .collect();
        assert_eq!(beneficial_guidance(&f, &labels).unwrap(), 70.0);
    }

    #[test]
    fn guidance_errors() {
        assert!(matches!(beneficial_guidance(&FlipSet::default(), &HashMap::new()), Err(EvalError::EmptyFlipSet)));
        assert!(matches!(
            beneficial_guidance(&flips(&[Mode::Direct]), &HashMap::new()),
            Err(EvalError::MissingLabel(_))
        ));
    }

    #[test]
    fn subsets_are_nested_and_full_at_one() {
        let mut store = SelfKnowledgeStore::new();
        for i in 0..40 {
            let l = match i % 3 {
                0 => SelfKnowledgeLabel::Known,
                1 => SelfKnowledgeLabel::Unknown,
                _ => SelfKnowledgeLabel::Discarded,
            };
            store.insert(format!("q{i:02}"), l);
        }
        let subs = training_subsets(&store, &[0.1, 0.25, 0.5, 1.0], 3).unwrap();
        for w in subs.windows(2) {
            for (id, l) in w[0].iter() {
                assert_eq!(w[1].get(id), Some(l));
            }
        }
        let full = subs.last().unwrap();
        assert_eq!((full.m(), full.n(), full.discarded()), (store.m(), store.n(), 0));
        assert_eq!((subs[0].m(), subs[0].n()), (2, 2));
    }

    #[test]
    fn fraction_validation() {
        let s = SelfKnowledgeStore::new();
        assert!(matches!(training_subsets(&s, &[0.0, 1.0], 0), Err(EvalError::FractionOutOfRange(_))));
        assert!(matches!(training_subsets(&s, &[1.5], 0), Err(EvalError::FractionOutOfRange(_))));
        assert!(matches!(training_subsets(&s, &[0.5], 0), Err(EvalError::BadFractions)));
        assert!(matches!(training_subsets(&s, &[0.5, 0.25, 1.0], 0), Err(EvalError::BadFractions)));
    }

    #[test]
    fn corpus_average_row() {
        let corpora = vec![("a".to_string(), 10.0), ("b".to_string(), 20.0)];
        let rows = ablate_corpus::<_, EvalError, _>(&corpora, Metric::Accuracy, |v| Ok(vec![("knn".into(), *v)])).unwrap();
        assert_eq!(rows.last().unwrap().key, "average");
        assert_eq!(rows.last().unwrap().value, 15.0);
        assert!(matches!(
            ablate_corpus::<_, EvalError, _>(&corpora[..1], Metric::Accuracy, |_| Ok(vec![])),
            Err(EvalError::TooFewCorpora(1))
        ));
        let csv = ablation_csv(&rows);
        assert!(csv.starts_with("fraction_or_corpus,policy,metric,value\na,knn,accuracy,10.00\n"));
    }
}
