use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use skr_core::elicitation::classifier::{objective, objective_and_gradient, LinearClassifier};
use skr_core::elicitation::knn::build_labeled_index;
use skr_core::elicitation::prompting::{direct_prompt, elicit_icl, icl_prompt, select_demos};
use skr_core::elicitation::template::PromptTemplate;
use skr_core::elicitation::{
    classify, elicit_knn, train_classifier, ElicitError, Elicitor, KnnElicitor, PromptElicitor, TrainParams,
};
use skr_core::gateway::{Cassette, Gateway, GenerationRequest, LlmEndpointConfig, EndpointMode, BackendError};
use skr_core::retrieval::Embedding;
use skr_core::types::{Question, SelfKnowledgeLabel, SelfKnowledgeStore};

fn question(id: &str) -> Question {
    Question { id: id.into(), text: format!("text of {id}?"), choices: None, gold_answer: "g".into(), dataset: "d".into() }
}

/// Brute force: score everything, sort, count, compare ratios in floating
/// point. Equal rationals divide to the same double, so ties agree.
fn oracle_knn(query: &[f32], train: &[(String, Vec<f32>, bool)], k: usize, m: usize, n: usize) -> SelfKnowledgeLabel {
    let norm = |v: &[f32]| v.iter().map(|x| *x as f64 * *x as f64).sum::<f64>().sqrt();
    let mut scored: Vec<(f64, &str, bool)> = train
        .iter()
        .map(|(id, v, known)| {
            let d: f64 = query.iter().zip(v).map(|(a, b)| *a as f64 * *b as f64).sum();
            (d / (norm(query) * norm(v)), id.as_str(), *known)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    let l = scored[..k].iter().filter(|s| s.2).count();
    if l as f64 / m as f64 >= (k - l) as f64 / n as f64 {
        SelfKnowledgeLabel::Known
    } else {
        SelfKnowledgeLabel::Unknown
    }
}

#[test]
fn knn_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..300 {
        let dim = rng.random_range(1..=8);
        let size = rng.random_range(10..=200);
        let k = rng.random_range(3..=10);
        let mut train = Vec::new();
        let mut store = SelfKnowledgeStore::new();
        let mut questions = Vec::new();
        let mut embs = HashMap::new();
        for i in 0..size {
            let id = format!("t{i:03}");
            let v: Vec<f32> = loop {
                let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-2i8..=2) as f32).collect();
                if v.iter().any(|x| *x != 0.0) {
                    break v;
                }
            };
            let known = rng.random_bool(0.4);
            store.insert(id.clone(), if known { SelfKnowledgeLabel::Known } else { SelfKnowledgeLabel::Unknown });
            embs.insert(id.clone(), Embedding::new(id.clone(), v.clone()).unwrap());
            questions.push(question(&id));
            train.push((id, v, known));
        }
        if store.m() == 0 || store.n() == 0 {
            continue;
        }
        let index = build_labeled_index(&questions, &embs, &store).unwrap();
        let q: Vec<f32> = (0..dim).map(|_| rng.random_range(-2.0f32..2.0)).collect();
        let vote = elicit_knn(&Embedding::new("q", q.clone()).unwrap(), &index, &store, k).unwrap();
        assert_eq!(vote.label, oracle_knn(&q, &train, k, store.m(), store.n()));
        assert_eq!(vote.known + vote.unknown, k);
    }
}

#[test]
fn knn_preconditions() {
    let mut store = SelfKnowledgeStore::new();
    let mut embs = HashMap::new();
    let mut qs = Vec::new();
    for (i, label) in [SelfKnowledgeLabel::Known, SelfKnowledgeLabel::Unknown, SelfKnowledgeLabel::Discarded].into_iter().enumerate() {
        let id = format!("t{i}");
        store.insert(id.clone(), label);
        embs.insert(id.clone(), Embedding::new(id.clone(), vec![1.0, i as f32]).unwrap());
        qs.push(question(&id));
    }
    let index = build_labeled_index(&qs, &embs, &store).unwrap();
    assert_eq!(index.len(), 2, "discarded questions are not indexed");
    let q = Embedding::new("q", vec![1.0, 0.5]).unwrap();
    assert!(matches!(elicit_knn(&q, &index, &store, 3), Err(ElicitError::KTooLarge { k: 3, size: 2 })));
    assert!(matches!(elicit_knn(&q, &index, &store, 0), Err(ElicitError::ZeroK)));
    let mut only_known = SelfKnowledgeStore::new();
    only_known.insert("t0", SelfKnowledgeLabel::Known);
    assert!(matches!(elicit_knn(&q, &index, &only_known, 1), Err(ElicitError::EmptyStore { m: 1, n: 0 })));
    assert!(KnnElicitor::new(index, Arc::new(only_known), Arc::new(embs), 1).is_err());
}

#[test]
fn knn_unanimous_neighbourhood() {
    // All 5 neighbours unknown with m=n: unknown. All known: known.
    let mut store = SelfKnowledgeStore::new();
    let mut embs = HashMap::new();
    let mut qs = Vec::new();
    for i in 0..10 {
        let id = format!("t{i}");
        let known = i < 5;
        store.insert(id.clone(), if known { SelfKnowledgeLabel::Known } else { SelfKnowledgeLabel::Unknown });
        let v = if known { vec![1.0, 0.01 * i as f32] } else { vec![0.01 * i as f32, 1.0] };
        embs.insert(id.clone(), Embedding::new(id.clone(), v).unwrap());
        qs.push(question(&id));
    }
    let index = build_labeled_index(&qs, &embs, &store).unwrap();
    let near_unknown = Embedding::new("q", vec![0.0, 1.0]).unwrap();
    assert_eq!(elicit_knn(&near_unknown, &index, &store, 5).unwrap().label, SelfKnowledgeLabel::Unknown);
    let near_known = Embedding::new("q", vec![1.0, 0.0]).unwrap();
    assert_eq!(elicit_knn(&near_known, &index, &store, 5).unwrap().label, SelfKnowledgeLabel::Known);
}

fn random_problem(rng: &mut ChaCha8Rng) -> (LinearClassifier, Vec<Vec<f64>>, Vec<usize>, f64) {
    let dim = rng.random_range(1..=6);
    let batch = rng.random_range(1..=12);
    let w = [
        (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
        (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
    ];
    let b = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    let clf = LinearClassifier::from_parts(w, b).unwrap();
    let xs = (0..batch).map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
    let ys = (0..batch).map(|_| rng.random_range(0..2)).collect();
    let l2 = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..0.1) };
    (clf, xs, ys, l2)
}

/// Relative error with a floor on the denominator so that components that
/// are zero analytically do not divide by zero.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn gradient_matches_central_differences() {
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (clf, xs, ys, l2) = random_problem(&mut rng);
        let (_, g) = objective_and_gradient(&clf, &xs, &ys, l2);
        let perturb = |c: usize, j: Option<usize>, d: f64| {
            let mut w = clf.weights().clone();
            let mut b = clf.bias();
            match j {
                Some(j) => w[c][j] += d,
                None => b[c] += d,
            }
            objective(&LinearClassifier::from_parts(w, b).unwrap(), &xs, &ys, l2)
        };
        for c in 0..2 {
            for j in 0..clf.dim() {
                let num = (perturb(c, Some(j), h) - perturb(c, Some(j), -h)) / (2.0 * h);
                worst = worst.max(rel_err(g.weights[c][j], num));
            }
            let num = (perturb(c, None, h) - perturb(c, None, -h)) / (2.0 * h);
            worst = worst.max(rel_err(g.bias[c], num));
        }
    }
    assert!(worst <= 1e-4, "worst relative error {worst}");
}

fn blobs(n: usize, seed: u64) -> Vec<(Embedding, SelfKnowledgeLabel)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let known = i % 2 == 0;
            let c = if known { [2.0f32, 0.0] } else { [0.0, 2.0] };
            let v = vec![c[0] + rng.random_range(-0.5..0.5), c[1] + rng.random_range(-0.5..0.5), 1.0];
            let label = if known { SelfKnowledgeLabel::Known } else { SelfKnowledgeLabel::Unknown };
            (Embedding::new(format!("e{i}"), v).unwrap(), label)
        })
        .collect()
}

#[test]
fn training_reduces_loss_and_separates_blobs() {
    let data = blobs(60, 2);
    let params = TrainParams { epochs: 50, ..Default::default() };
    let (clf, report) = train_classifier(&data, &params).unwrap();
    assert_eq!(report.losses.len(), 51);
    assert!((report.losses[0] - std::f64::consts::LN_2).abs() < 1e-12);
    let best = report.losses.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(best < report.losses[0]);
    for (e, l) in &data {
        assert_eq!(classify(&clf, e).unwrap().0, *l);
    }
    // Same seed, same model.
    assert_eq!(train_classifier(&data, &params).unwrap().0, clf);
}

#[test]
fn training_is_reproducible_per_seed_only() {
    let data = blobs(40, 3);
    let a = train_classifier(&data, &TrainParams { epochs: 3, batch_size: 4, seed: 1, ..Default::default() }).unwrap();
    let b = train_classifier(&data, &TrainParams { epochs: 3, batch_size: 4, seed: 2, ..Default::default() }).unwrap();
    assert_ne!(a.0, b.0);
}

fn stub_gateway(responses: Arc<Mutex<Vec<String>>>, reply: &'static str) -> Gateway {
    let cfg = LlmEndpointConfig { mode: EndpointMode::Live, ..Default::default() };
    let backend = move |req: &GenerationRequest| -> Result<String, BackendError> {
        responses.lock().unwrap().push(req.prompt.clone());
        Ok(reply.to_string())
    };
    Gateway::new(cfg, Arc::new(Cassette::in_memory()), Some(Arc::new(backend)))
}

#[test]
fn direct_prompt_is_question_then_suffix() {
    let t = PromptTemplate::default();
    assert_eq!(
        direct_prompt(&question("q1"), &t),
        "text of q1? Q: Do you need additional information to answer this question? A:"
    );
    let seen = Arc::new(Mutex::new(Vec::new()));
    let e = PromptElicitor::new(Arc::new(stub_gateway(seen.clone(), "No, I don't need it.")), t).unwrap();
    assert_eq!(e.elicit(&question("q1")).unwrap().label, SelfKnowledgeLabel::Known);
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn icl_prompt_alternates_classes() {
    let t = PromptTemplate::default();
    let (k1, k2, u1, u2) = (question("k1"), question("k2"), question("u1"), question("u2"));
    let p = icl_prompt(&[&k1, &k2], &[&u1, &u2], &question("x"), &t);
    let lines: Vec<&str> = p.lines().collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[0], format!("text of k1? {} {}", t.question_suffix, t.positive_answer));
    assert_eq!(lines[1], format!("text of u1? {} {}", t.question_suffix, t.negative_answer));
    assert_eq!(lines[2], format!("text of k2? {} {}", t.question_suffix, t.positive_answer));
    assert_eq!(lines[3], format!("text of u2? {} {}", t.question_suffix, t.negative_answer));
    assert_eq!(lines[4], format!("text of x? {}", t.question_suffix));
}

fn labelled_store() -> (SelfKnowledgeStore, HashMap<String, Question>) {
    let mut store = SelfKnowledgeStore::new();
    let mut qs = HashMap::new();
    for (id, l) in [
        ("a", SelfKnowledgeLabel::Known),
        ("b", SelfKnowledgeLabel::Unknown),
        ("c", SelfKnowledgeLabel::Known),
        ("d", SelfKnowledgeLabel::Unknown),
        ("e", SelfKnowledgeLabel::Discarded),
    ] {
        store.insert(id, l);
        qs.insert(id.to_string(), question(id));
    }
    (store, qs)
}

#[test]
fn demo_selection() {
    let (store, _) = labelled_store();
    assert_eq!(select_demos(&store, 2, "x", None).unwrap(), (vec!["a".into(), "c".into()], vec!["b".into(), "d".into()]));
    // The target is never its own demonstration.
    assert!(matches!(
        select_demos(&store, 2, "a", None),
        Err(ElicitError::InsufficientDemos { needed: 2, known: 1, unknown: 2 })
    ));
}

#[test]
fn icl_elicitation_round_trip() {
    let (store, qs) = labelled_store();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let gw = stub_gateway(seen.clone(), "Yes, I need additional information to answer this question.");
    let e = elicit_icl(&question("x"), &store, &qs, &gw, &PromptTemplate::default(), 1, None).unwrap();
    assert_eq!(e.label, SelfKnowledgeLabel::Unknown);
    assert!(!e.warning);
    assert_eq!(seen.lock().unwrap()[0].lines().count(), 3);
    assert!(matches!(
        elicit_icl(&question("x"), &store, &qs, &gw, &PromptTemplate::default(), 3, None),
        Err(ElicitError::InsufficientDemos { .. })
    ));
}

proptest! {
    #[test]
    fn vote_is_monotone_in_known_neighbours(k in 1usize..12, m in 1usize..500, n in 1usize..500) {
        use skr_core::elicitation::vote_is_known;
        // Once known, adding known neighbours keeps it known.
        let mut was_known = false;
        for l in 0..=k {
            let now = vote_is_known(l, k, m, n);
            prop_assert!(!was_known || now);
            was_known = now;
        }
        prop_assert!(vote_is_known(k, k, m, n));
    }
}
