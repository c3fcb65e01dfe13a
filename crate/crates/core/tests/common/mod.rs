//! Helpers shared by the pipeline integration tests.
#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use skr_core::adaptive::prompt::{Demonstration, PromptConfig, DEFAULT_PASSAGE_HEADER};
use skr_core::gateway::{BackendError, Cassette, EndpointMode, Gateway, GenerationRequest, LlmEndpointConfig};
use skr_core::retrieval::{PassageSource, RetrievalError, RetrievedPassage};
use skr_core::types::{Choice, Question};

pub fn prompt_config() -> PromptConfig {
    let demonstrations = (0..4)
        .map(|i| Demonstration {
            question: format!("demo question {i}?"),
            rationale: format!("rationale {i}."),
            answer: format!("answer {i}"),
            passages: vec![format!("demo passage {i}.")],
        })
        .collect();
    PromptConfig { demonstrations, passage_header: DEFAULT_PASSAGE_HEADER.into(), passages_per_question: 3 }
}

/// Two-choice question with gold `a`.
pub fn question(id: &str) -> Question {
    Question {
        id: id.into(),
        text: format!("text of {id}?"),
        choices: Some(vec![
            Choice { letter: "a".into(), text: "yes".into() },
            Choice { letter: "b".into(), text: "no".into() },
        ]),
        gold_answer: "a".into(),
        dataset: "t".into(),
    }
}

/// The final block of a prompt, i.e. the target question.
pub fn target_block(prompt: &str) -> &str {
    prompt.rsplit("\n\n").next().unwrap()
}

/// Gateway whose backend calls `reply` and logs every prompt.
pub fn stub_gateway<F>(reply: F) -> (Gateway, Arc<Mutex<Vec<String>>>)
where
    F: Fn(&str) -> Result<String, BackendError> + Send + Sync + 'static,
{
    let log = Arc::new(Mutex::new(Vec::new()));
    let seen = log.clone();
    let backend = move |req: &GenerationRequest| -> Result<String, BackendError> {
        seen.lock().unwrap().push(req.prompt.clone());
        reply(&req.prompt)
    };
    let cfg = LlmEndpointConfig { mode: EndpointMode::Live, backoff_ms: 0, ..Default::default() };
    (Gateway::new(cfg, Arc::new(Cassette::in_memory()), Some(Arc::new(backend))), log)
}

/// Passage source that counts calls and records the requested `k`.
#[derive(Default)]
pub struct CountingSource {
    pub calls: AtomicUsize,
    pub ks: Mutex<Vec<usize>>,
    /// Question ids for which retrieval fails.
    pub fail_for: Vec<String>,
}

impl CountingSource {
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl PassageSource for CountingSource {
    fn retrieve(&self, question: &Question, k: usize) -> Result<Vec<RetrievedPassage>, RetrievalError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.ks.lock().unwrap().push(k);
        if self.fail_for.contains(&question.id) {
            return Err(RetrievalError::MissingEmbedding(question.id.clone()));
        }
        Ok((0..k)
            .map(|i| RetrievedPassage {
                id: format!("p{i}"),
                score: 1.0 - i as f64 / 10.0,
                text: format!("passage {i} for {}", question.id),
            })
            .collect())
    }
}
