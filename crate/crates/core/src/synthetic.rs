//! A two-cluster synthetic benchmark and a scripted model that answers it.
//!
//! Questions in cluster A are answered correctly from "internal knowledge"
//! and are derailed by retrieved passages; questions in cluster B are only
//! answered correctly when their evidence passage is in the prompt. Question
//! embeddings are drawn from two well-separated Gaussians, so a policy that
//! recognises the cluster routes every question to the mode that works.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adaptive::prompt::{Demonstration, PromptConfig, DEFAULT_PASSAGE_HEADER};
use crate::elicitation::template::{PromptTemplate, PRESETS};
use crate::gateway::{BackendError, CompletionBackend, GenerationRequest};
use crate::retrieval::Embedding;
use crate::types::{Choice, Passage, Question};

const LETTERS: [&str; 4] = ["a", "b", "c", "d"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cluster {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub train: usize,
    pub eval: usize,
    pub dim: usize,
    /// Distance of each cluster centre from the origin.
    pub separation: f64,
    /// Standard deviation of question embeddings around their centre.
    pub noise: f64,
    /// Standard deviation of an evidence passage around its question.
    pub evidence_noise: f64,
    pub filler_passages: usize,
    /// Probability that a self-knowledge answer from the scripted model
    /// matches the question's cluster.
    pub elicitation_accuracy: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            train: 200,
            eval: 100,
            dim: 8,
            separation: 4.0,
            noise: 1.0,
            evidence_noise: 0.1,
            filler_passages: 200,
            elicitation_accuracy: 0.7,
            seed: 7,
        }
    }
}

pub const DATASET: &str = "synthetic";
pub const ORACLE_CORPUS: &str = "oracle";
pub const DISTRACTOR_CORPUS: &str = "distractor";

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBenchmark {
    pub config: SyntheticConfig,
    pub train: Vec<Question>,
    pub eval: Vec<Question>,
    pub clusters: HashMap<String, Cluster>,
    /// Train and eval question vectors.
    pub question_embeddings: Vec<Embedding>,
    /// Evidence for every question plus filler.
    pub corpus: Vec<Passage>,
    pub corpus_embeddings: Vec<Embedding>,
    /// Same vectors as `corpus` with all evidence replaced by unrelated text.
    pub distractor_corpus: Vec<Passage>,
    pub distractor_embeddings: Vec<Embedding>,
    pub prompt_config: PromptConfig,
}

pub fn evidence_marker(question_id: &str) -> String {
    format!("Evidence for {question_id}:")
}

fn gaussian(rng: &mut ChaCha8Rng, centre: &[f64], sd: f64) -> Vec<f32> {
    let normal = Normal::new(0.0, sd).expect("finite sd");
    centre.iter().map(|c| (c + normal.sample(rng)) as f32).collect()
}

fn demonstrations() -> Vec<Demonstration> {
    let items = [
        ("Which colour results from mixing blue and yellow paint?", "(a) red (b) green (c) purple (d) orange", "Blue and yellow pigments combine into green.", "(b)"),
        ("How many legs does a spider have?", "(a) six (b) ten (c) eight (d) four", "Spiders are arachnids, which have eight legs.", "(c)"),
        ("Which planet is closest to the sun?", "(a) Mercury (b) Venus (c) Earth (d) Mars", "Mercury has the smallest orbit.", "(a)"),
        ("What is the boiling point of water at sea level in Celsius?", "(a) 50 (b) 90 (c) 120 (d) 100", "Water boils at 100 degrees Celsius at standard pressure.", "(d)"),
    ];
    items
        .iter()
        .map(|(q, choices, rationale, answer)| Demonstration {
            question: format!("{q}\nAnswer Choices: {choices}"),
            rationale: rationale.to_string(),
            answer: answer.to_string(),
            passages: vec![format!("{rationale} This is a well established fact.")],
        })
        .collect()
}

impl SyntheticBenchmark {
    pub fn generate(config: &SyntheticConfig) -> Self {
        assert!(config.dim >= 3, "synthetic benchmark needs at least 3 dimensions");
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let centre = |axis: usize| {
            let mut c = vec![0.0; config.dim];
            c[axis] = config.separation;
            c
        };
        let centres = [centre(0), centre(1)];

        let mut clusters = HashMap::new();
        let mut question_embeddings = Vec::new();
        let mut corpus = Vec::new();
        let mut corpus_embeddings = Vec::new();
        let mut distractor_corpus = Vec::new();
        let mut distractor_embeddings = Vec::new();

        let mut make_split = |split: &str, count: usize, rng: &mut ChaCha8Rng| -> Vec<Question> {
            (0..count)
                .map(|i| {
                    let id = format!("{split}-{i:03}");
                    let cluster = if rng.random_bool(0.5) { Cluster::A } else { Cluster::B };
                    let gold = LETTERS[rng.random_range(0..LETTERS.len())];
                    let topic = match cluster {
                        Cluster::A => "common knowledge",
                        Cluster::B => "long-tail trivia",
                    };
                    let q = Question {
                        id: id.clone(),
                        text: format!("In the {topic} collection, which option is recorded for item {id}?"),
                        choices: Some(
                            LETTERS
                                .iter()
                                .map(|l| Choice { letter: l.to_string(), text: format!("value {l} of {id}") })
                                .collect(),
                        ),
                        gold_answer: gold.to_string(),
                        dataset: DATASET.to_string(),
                    };
                    let centre = &centres[cluster as usize];
                    let qv = gaussian(rng, centre, config.noise);
                    let qv64: Vec<f64> = qv.iter().map(|v| *v as f64).collect();
                    let ev = gaussian(rng, &qv64, config.evidence_noise);
                    question_embeddings.push(Embedding::new(id.clone(), qv).expect("finite"));
                    let pid = format!("ev-{id}");
                    corpus.push(Passage {
                        id: pid.clone(),
                        text: format!("{} item {id} is recorded with option ({gold}).", evidence_marker(&id)),
                        corpus: ORACLE_CORPUS.into(),
                    });
                    corpus_embeddings.push(Embedding::new(pid, ev.clone()).expect("finite"));
                    let did = format!("dx-{id}");
                    distractor_corpus.push(Passage {
                        id: did.clone(),
                        text: format!("A catalogue note on the {topic} collection mentions many items."),
                        corpus: DISTRACTOR_CORPUS.into(),
                    });
                    distractor_embeddings.push(Embedding::new(did, ev).expect("finite"));
                    clusters.insert(id, cluster);
                    q
                })
                .collect()
        };
        let train = make_split("train", config.train, &mut rng);
        let eval = make_split("eval", config.eval, &mut rng);

        let zero = vec![0.0; config.dim];
        for i in 0..config.filler_passages {
            let v = gaussian(&mut rng, &zero, 1.0);
            for (prefix, name, passages, embs) in [
                ("fill", ORACLE_CORPUS, &mut corpus, &mut corpus_embeddings),
                ("dfill", DISTRACTOR_CORPUS, &mut distractor_corpus, &mut distractor_embeddings),
            ] {
                let id = format!("{prefix}-{i:03}");
                passages.push(Passage {
                    id: id.clone(),
                    text: format!("Filler passage {i} about nothing in particular."),
                    corpus: name.into(),
                });
                embs.push(Embedding::new(id, v.clone()).expect("finite"));
            }
        }

        Self {
            config: config.clone(),
            train,
            eval,
            clusters,
            question_embeddings,
            corpus,
            corpus_embeddings,
            distractor_corpus,
            distractor_embeddings,
            prompt_config: PromptConfig {
                demonstrations: demonstrations(),
                passage_header: DEFAULT_PASSAGE_HEADER.into(),
                passages_per_question: 3,
            },
        }
    }

    pub fn scripted_llm(&self) -> ScriptedLlm {
        let mut by_text = HashMap::new();
        for q in self.train.iter().chain(&self.eval) {
            by_text.insert(q.text.clone(), (q.id.clone(), self.clusters[&q.id], q.gold_answer.clone()));
        }
        ScriptedLlm {
            by_text,
            elicitation_accuracy: self.config.elicitation_accuracy,
            templates: PRESETS.iter().filter_map(|p| PromptTemplate::preset(p)).collect(),
        }
    }
}

/// Deterministic stand-in for a model, answering from the cluster of the
/// target question and the passages in the prompt.
pub struct ScriptedLlm {
    by_text: HashMap<String, (String, Cluster, String)>,
    elicitation_accuracy: f64,
    templates: Vec<PromptTemplate>,
}

fn unit_hash(parts: &[&str]) -> f64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0x1f]);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes")) as f64 / 2f64.powi(64)
}

fn wrong_letter(gold: &str) -> &'static str {
    let i = LETTERS.iter().position(|l| *l == gold).unwrap_or(0);
    LETTERS[(i + 1) % LETTERS.len()]
}

impl ScriptedLlm {
    pub fn respond(&self, prompt: &str) -> String {
        let last_line = prompt.lines().last().unwrap_or("");
        for t in &self.templates {
            let suffix = format!(" {}", t.question_suffix);
            if let Some(text) = last_line.strip_suffix(&suffix) {
                return self.self_knowledge(text, t, prompt.lines().count() > 1);
            }
        }
        self.answer(prompt)
    }

    fn self_knowledge(&self, text: &str, template: &PromptTemplate, with_demos: bool) -> String {
        let Some((id, cluster, _)) = self.by_text.get(text) else {
            return "I am not sure.".into();
        };
        // Demonstrations help a little.
        let accuracy = if with_demos { (self.elicitation_accuracy + 0.1).min(1.0) } else { self.elicitation_accuracy };
        let truthful = unit_hash(&[id, if with_demos { "icl" } else { "direct" }]) < accuracy;
        let says_known = (*cluster == Cluster::A) == truthful;
        if says_known {
            template.positive_answer.clone()
        } else {
            template.negative_answer.clone()
        }
    }

    fn answer(&self, prompt: &str) -> String {
        let target = prompt.rsplit("\n\n").next().unwrap_or(prompt);
        let first = target.lines().next().unwrap_or("");
        let Some((id, cluster, gold)) = first.strip_prefix("Q: ").and_then(|t| self.by_text.get(t)) else {
            return "I am not sure.".into();
        };
        let augmented = target.lines().any(|l| l == DEFAULT_PASSAGE_HEADER);
        let has_evidence = target.contains(&evidence_marker(id));
        let correct = match cluster {
            Cluster::A => !augmented,
            Cluster::B => augmented && has_evidence,
        };
        let letter = if correct { gold.as_str() } else { wrong_letter(gold) };
        let reason = match (cluster, augmented) {
            (Cluster::A, false) => "I remember this item well.",
            (Cluster::A, true) => "The passages point elsewhere, so I follow them.",
            (Cluster::B, false) => "I have to guess.",
            (Cluster::B, true) if has_evidence => "The evidence passage states the option.",
            (Cluster::B, true) => "The passages do not mention this item, so I guess.",
        };
        format!("{reason} The answer is ({letter}).")
    }
}

impl CompletionBackend for ScriptedLlm {
    fn complete(&self, req: &GenerationRequest) -> Result<String, BackendError> {
        Ok(self.respond(&req.prompt))
    }
}
