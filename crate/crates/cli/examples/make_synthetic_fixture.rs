//! Regenerates `fixtures/synthetic`: datasets, corpora, embedding files, the
//! run configuration and a cassette recorded from the scripted model.
//!
//! ```text
//! cargo run -p skr-cli --example make_synthetic_fixture [-- <dir>]
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};

use skr_cli::app::App;
use skr_cli::config::{AblationConfig, CorpusConfig, LoadedConfig, PathsConfig, PolicyConfig, RunConfig};
use skr_core::gateway::{EndpointMode, LlmEndpointConfig};
use skr_core::io::write_jsonl;
use skr_core::metrics::AnswerSpec;
use skr_core::retrieval::embfile::write_embeddings;
use skr_core::synthetic::{SyntheticBenchmark, SyntheticConfig, DATASET, DISTRACTOR_CORPUS, ORACLE_CORPUS};

fn fixture_config() -> RunConfig {
    let bench = SyntheticBenchmark::generate(&SyntheticConfig::default());
    RunConfig {
        dataset: DATASET.into(),
        paths: PathsConfig {
            train: Some("train.jsonl".into()),
            eval: Some("eval.jsonl".into()),
            corpus: Some("corpus.jsonl".into()),
            embeddings: Some("corpus.emb".into()),
            question_embeddings: Some("questions.emb".into()),
            cassette: Some("cassette.jsonl".into()),
            output_dir: Some("out".into()),
            ..Default::default()
        },
        llm: LlmEndpointConfig {
            base_url: "http://127.0.0.1:9/v1".into(),
            model_name: "scripted".into(),
            api_key_env: "SKR_API_KEY".into(),
            mode: EndpointMode::Replay,
            ..Default::default()
        },
        prompt: bench.prompt_config.clone(),
        policy: PolicyConfig::default(),
        answer: AnswerSpec::default(),
        seed: 0,
        ablation: AblationConfig {
            corpora: vec![
                CorpusConfig {
                    name: ORACLE_CORPUS.into(),
                    corpus: "corpus.jsonl".into(),
                    embeddings: "corpus.emb".into(),
                },
                CorpusConfig {
                    name: DISTRACTOR_CORPUS.into(),
                    corpus: "distractor.jsonl".into(),
                    embeddings: "distractor.emb".into(),
                },
            ],
            ..Default::default()
        },
        pipeline: Default::default(),
    }
}

fn write_files(dir: &Path, bench: &SyntheticBenchmark) -> Result<()> {
    let dim = bench.config.dim;
    write_jsonl(&dir.join("train.jsonl"), &bench.train)?;
    write_jsonl(&dir.join("eval.jsonl"), &bench.eval)?;
    write_jsonl(&dir.join("corpus.jsonl"), &bench.corpus)?;
    write_jsonl(&dir.join("distractor.jsonl"), &bench.distractor_corpus)?;
    write_embeddings(&dir.join("questions.emb"), dim, &bench.question_embeddings)?;
    write_embeddings(&dir.join("corpus.emb"), dim, &bench.corpus_embeddings)?;
    write_embeddings(&dir.join("distractor.emb"), dim, &bench.distractor_embeddings)?;
    let config = serde_json::to_string_pretty(&fixture_config())?;
    std::fs::write(dir.join("config.json"), config + "\n")?;
    std::fs::write(dir.join(".gitignore"), "out/\n")?;
    Ok(())
}

fn main() -> Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/synthetic"));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let bench = SyntheticBenchmark::generate(&SyntheticConfig::default());
    write_files(&dir, &bench)?;

    let cassette = dir.join("cassette.jsonl");
    if cassette.exists() {
        std::fs::remove_file(&cassette)?;
    }
    let mut config = fixture_config();
    config.llm.mode = EndpointMode::Record;
    let loaded = LoadedConfig::from_config(config, &dir)?;
    let record_dir = std::env::temp_dir().join(format!("skr-fixture-record-{}", std::process::id()));
    let app = App::new(loaded, Some(record_dir.clone()))?.with_backend(Arc::new(bench.scripted_llm()));
    app.run_pipeline()?;
    std::fs::remove_dir_all(&record_dir)?;
    println!("fixture written to {}", dir.display());
    Ok(())
}
