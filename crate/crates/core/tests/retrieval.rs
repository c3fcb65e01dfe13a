use std::collections::HashMap;

use proptest::prelude::*;
use skr_core::retrieval::{
    cosine_similarity, read_embeddings, write_embeddings, DenseRetriever, Embedding, Payload, PassageSource,
    RetrievalError, VectorIndex,
};
use skr_core::types::{Passage, Question};

/// Full scan, sort by score descending then id ascending.
fn oracle_top_k(query: &[f32], entries: &[(String, Vec<f32>)], k: usize) -> Vec<(String, f64)> {
    let norm = |v: &[f32]| v.iter().map(|x| *x as f64 * *x as f64).sum::<f64>().sqrt();
    let qn = norm(query);
    let mut scored: Vec<(String, f64)> = entries
        .iter()
        .map(|(id, v)| {
            let d: f64 = query.iter().zip(v).map(|(a, b)| *a as f64 * *b as f64).sum();
            (id.clone(), d / (qn * norm(v)))
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

fn build(entries: &[(String, Vec<f32>)]) -> VectorIndex {
    let items = entries.iter().map(|(id, _)| {
        Payload::Passage(Passage { id: id.clone(), text: format!("passage {id}"), corpus: "c".into() })
    });
    let embs = entries.iter().map(|(id, v)| Embedding::new(id.clone(), v.clone()).unwrap()).collect();
    VectorIndex::build(items, embs).unwrap().0
}

/// Small integer coordinates so that exact score ties are common.
fn vector(dim: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-3i8..=3, dim)
        .prop_filter("non-zero", |v| v.iter().any(|x| *x != 0))
        .prop_map(|v| v.into_iter().map(f32::from).collect())
}

type Instance = (Vec<(String, Vec<f32>)>, Vec<f32>, usize);

fn instance() -> impl Strategy<Value = Instance> {
    (1usize..=6).prop_flat_map(|dim| {
        (prop::collection::vec(vector(dim), 1..120), vector(dim), 1usize..15).prop_map(|(vs, q, k)| {
            // Shuffled-looking ids so id order differs from insertion order.
            let entries = vs
                .into_iter()
                .enumerate()
                .map(|(i, v)| (format!("p{:03}", (i * 37) % 1000), v))
                .collect::<Vec<_>>();
            (entries, q, k)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn top_k_matches_full_scan((entries, q, k) in instance()) {
        let mut seen = std::collections::HashSet::new();
        let entries: Vec<_> = entries.into_iter().filter(|(id, _)| seen.insert(id.clone())).collect();
        let index = build(&entries);
        let got = index.top_k(&Embedding::new("q", q.clone()).unwrap(), k).unwrap();
        let want = oracle_top_k(&q, &entries, k);
        let got: Vec<(String, f64)> = got.hits.into_iter().map(|h| (h.id, h.score)).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn cosine_is_symmetric_and_bounded(a in vector(5), b in vector(5)) {
        let (ea, eb) = (Embedding::new("a", a).unwrap(), Embedding::new("b", b).unwrap());
        let ab = cosine_similarity(&ea, &eb).unwrap();
        prop_assert_eq!(ab, cosine_similarity(&eb, &ea).unwrap());
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&ab));
    }

    #[test]
    fn cosine_ignores_positive_scale(a in vector(4), b in vector(4), s in 0.01f32..100.0) {
        let ea = Embedding::new("a", a.clone()).unwrap();
        let eb = Embedding::new("b", b).unwrap();
        let scaled = Embedding::new("s", a.iter().map(|x| x * s).collect()).unwrap();
        let d = cosine_similarity(&ea, &eb).unwrap() - cosine_similarity(&scaled, &eb).unwrap();
        prop_assert!(d.abs() < 1e-6, "{}", d);
    }
}

#[test]
fn top_k_edge_cases() {
    let entries = vec![("a".to_string(), vec![1.0, 0.0]), ("b".to_string(), vec![0.0, 1.0])];
    let index = build(&entries);
    let q = Embedding::new("q", vec![1.0, 1.0]).unwrap();
    // Exact tie: ascending id.
    let ids: Vec<_> = index.top_k(&q, 2).unwrap().hits.into_iter().map(|h| h.id).collect();
    assert_eq!(ids, ["a", "b"]);
    // k larger than the index returns everything.
    assert_eq!(index.top_k(&q, 10).unwrap().hits.len(), 2);
    assert!(matches!(index.top_k(&q, 0), Err(RetrievalError::ZeroK)));
    let wrong = Embedding::new("w", vec![1.0, 1.0, 1.0]).unwrap();
    assert!(matches!(index.top_k(&wrong, 1), Err(RetrievalError::DimMismatch { expected: 2, got: 3 })));
    let zero = Embedding::new("z", vec![0.0, 0.0]).unwrap();
    assert!(matches!(index.top_k(&zero, 1), Err(RetrievalError::ZeroVector(_))));
}

#[test]
fn missing_passage_embedding_is_an_error() {
    let items = vec![Payload::Passage(Passage { id: "a".into(), text: "t".into(), corpus: "c".into() })];
    let embs = vec![Embedding::new("b", vec![1.0]).unwrap()];
    assert!(matches!(VectorIndex::build(items, embs), Err(RetrievalError::MissingEmbedding(id)) if id == "a"));
}

#[test]
fn orphan_embeddings_are_reported() {
    let items = vec![Payload::Passage(Passage { id: "a".into(), text: "t".into(), corpus: "c".into() })];
    let embs = vec![Embedding::new("a", vec![1.0]).unwrap(), Embedding::new("x", vec![1.0]).unwrap()];
    let (index, orphans) = VectorIndex::build(items, embs).unwrap();
    assert_eq!(index.len(), 1);
    assert_eq!(orphans, ["x"]);
}

#[test]
fn saved_index_answers_identically() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let entries: Vec<(String, Vec<f32>)> = (0..300)
        .map(|i| (format!("p{i:03}"), (0..16).map(|_| rng.random_range(-1.0f32..1.0)).collect()))
        .collect();
    let index = build(&entries);
    let dir = tempfile::tempdir().unwrap();
    index.save(dir.path()).unwrap();
    let loaded = VectorIndex::load(dir.path()).unwrap();
    for i in 0..100 {
        let q = Embedding::new(format!("q{i}"), (0..16).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap();
        assert_eq!(index.top_k(&q, 5).unwrap(), loaded.top_k(&q, 5).unwrap());
    }
}

#[test]
fn embedding_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.emb");
    let embs = vec![
        Embedding::new("é-unicode", vec![1.5, -0.25, 3.0e-7]).unwrap(),
        Embedding::new("b", vec![f32::MAX, f32::MIN_POSITIVE, 0.0]).unwrap(),
    ];
    write_embeddings(&path, 3, &embs).unwrap();
    let (dim, back) = read_embeddings(&path).unwrap();
    assert_eq!(dim, 3);
    assert_eq!(back, embs);
}

#[test]
fn dense_retriever_resolves_text_and_counts_calls() {
    let entries = vec![("a".to_string(), vec![1.0, 0.0]), ("b".to_string(), vec![0.0, 1.0])];
    let mut queries = HashMap::new();
    queries.insert("q1".to_string(), Embedding::new("q1", vec![0.1, 1.0]).unwrap());
    let r = DenseRetriever::new(build(&entries), std::sync::Arc::new(queries));
    let q = Question { id: "q1".into(), text: "t".into(), choices: None, gold_answer: "g".into(), dataset: "d".into() };
    let hits = r.retrieve(&q, 1).unwrap();
    assert_eq!(hits[0].text, "passage b");
    assert_eq!(r.calls(), 1);
    let other = Question { id: "nope".into(), ..q };
    assert!(matches!(r.retrieve(&other, 1), Err(RetrievalError::MissingEmbedding(_))));
}
