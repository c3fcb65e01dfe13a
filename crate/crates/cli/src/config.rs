//! Run configuration: one JSON document plus `--set key=value` overrides.
//! Relative paths resolve against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use skr_core::adaptive::PromptConfig;
use skr_core::elicitation::template::PromptTemplate;
use skr_core::elicitation::{TrainParams, DEFAULT_K};
use skr_core::gateway::LlmEndpointConfig;
use skr_core::metrics::AnswerSpec;

/// Invalid or missing configuration, naming the offending key.
#[derive(Debug, Error)]
#[error("config error at `{key}`: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self { key: key.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub train: Option<PathBuf>,
    pub eval: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    /// Passage embeddings for `corpus`.
    pub embeddings: Option<PathBuf>,
    /// Embeddings of train and eval questions.
    pub question_embeddings: Option<PathBuf>,
    /// Prebuilt passage index directory; built from `corpus` when absent.
    pub index: Option<PathBuf>,
    pub cassette: Option<PathBuf>,
    /// Label store; defaults to `train.store.jsonl` in the output directory.
    pub store: Option<PathBuf>,
    /// Classifier weights; defaults to `classifier.json` in the output directory.
    pub classifier: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    NeverRetrieve,
    AlwaysRetrieve,
    Random,
    Prompt,
    Icl,
    Cls,
    Knn,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::NeverRetrieve,
        PolicyKind::AlwaysRetrieve,
        PolicyKind::Random,
        PolicyKind::Prompt,
        PolicyKind::Icl,
        PolicyKind::Cls,
        PolicyKind::Knn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::NeverRetrieve => "never-retrieve",
            PolicyKind::AlwaysRetrieve => "always-retrieve",
            PolicyKind::Random => "random",
            PolicyKind::Prompt => "prompt",
            PolicyKind::Icl => "icl",
            PolicyKind::Cls => "cls",
            PolicyKind::Knn => "knn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }
}

/// Classifier hyperparameters; the shuffling seed is the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        let p = TrainParams::default();
        Self { learning_rate: p.learning_rate, epochs: p.epochs, batch_size: p.batch_size, l2: p.l2 }
    }
}

impl ClassifierConfig {
    pub fn params(&self, seed: u64) -> TrainParams {
        TrainParams {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            l2: self.l2,
        }
    }
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_template() -> String {
    "need-info".into()
}

fn default_demos() -> usize {
    2
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Allows `k` outside 3..=10.
    #[serde(default)]
    pub force_k: bool,
    /// Name of a built-in self-knowledge template.
    #[serde(default = "default_template")]
    pub template: String,
    #[serde(default = "default_demos")]
    pub num_demos_per_class: usize,
    /// Pick in-context demonstrations by similarity instead of id order.
    #[serde(default = "default_true")]
    pub rank_demos: bool,
    #[serde(default)]
    pub classifier: ClassifierConfig,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            kind: PolicyKind::Knn,
            k: default_k(),
            force_k: false,
            template: default_template(),
            num_demos_per_class: default_demos(),
            rank_demos: true,
            classifier: ClassifierConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub name: String,
    pub corpus: PathBuf,
    pub embeddings: PathBuf,
}

fn default_fractions() -> Vec<f64> {
    vec![0.1, 0.25, 0.5, 1.0]
}

fn default_ablation_policies() -> Vec<PolicyKind> {
    vec![PolicyKind::Knn, PolicyKind::Cls]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    /// Policies re-run for the training-size ablation.
    #[serde(default = "default_ablation_policies")]
    pub policies: Vec<PolicyKind>,
    #[serde(default)]
    pub corpora: Vec<CorpusConfig>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { fractions: default_fractions(), policies: default_ablation_policies(), corpora: Vec::new() }
    }
}

fn default_pipeline_policies() -> Vec<PolicyKind> {
    PolicyKind::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Policies answered and evaluated by `run` and `eval`.
    #[serde(default = "default_pipeline_policies")]
    pub policies: Vec<PolicyKind>,
    #[serde(default = "default_true")]
    pub ablations: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { policies: default_pipeline_policies(), ablations: true }
    }
}

fn default_dataset() -> String {
    "dataset".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_dataset")]
    pub dataset: String,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub llm: LlmEndpointConfig,
    pub prompt: PromptConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub answer: AnswerSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ablation: AblationConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
}

/// A loaded configuration and the directory its relative paths start from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

/// Splits `a.b.c=value`; the value is parsed as JSON and falls back to a
/// plain string.
fn parse_override(spec: &str) -> Result<(Vec<String>, Value), ConfigError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::new(spec, "override must look like key=value"))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ConfigError::new(key, "empty key segment"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.split('.').map(String::from).collect(), value))
}

pub fn apply_override(doc: &mut Value, spec: &str) -> Result<(), ConfigError> {
    let (path, value) = parse_override(spec)?;
    let mut cur = doc;
    for (i, seg) in path.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| ConfigError::new(path[..i].join("."), "not an object"))?;
        if i + 1 == path.len() {
            obj.insert(seg.clone(), value);
            return Ok(());
        }
        cur = obj.entry(seg.clone()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("override path is non-empty")
}

/// Best-effort dotted key for a serde error message such as
/// "unknown field `x`" or "missing field `y`".
fn error_key(prefix: &str, message: &str) -> String {
    let field = message.split('`').nth(1).filter(|_| message.contains("field"));
    match field {
        Some(f) if prefix.is_empty() => f.to_string(),
        Some(f) => format!("{prefix}.{f}"),
        None if prefix.is_empty() => "<root>".into(),
        None => prefix.to_string(),
    }
}

/// Deserializes section by section so errors carry the section name.
fn from_value(doc: Value) -> Result<RunConfig, ConfigError> {
    let obj = doc.as_object().ok_or_else(|| ConfigError::new("<root>", "config must be a JSON object"))?;
    for (key, section) in obj {
        let check = |r: Result<(), serde_json::Error>| {
            r.map_err(|e| {
                let msg = e.to_string();
                ConfigError::new(error_key(key, &msg), msg)
            })
        };
        let v = section.clone();
        match key.as_str() {
            "paths" => check(serde_json::from_value::<PathsConfig>(v).map(drop))?,
            "llm" => check(serde_json::from_value::<LlmEndpointConfig>(v).map(drop))?,
            "prompt" => check(serde_json::from_value::<PromptConfig>(v).map(drop))?,
            "policy" => check(serde_json::from_value::<PolicyConfig>(v).map(drop))?,
            "answer" => check(serde_json::from_value::<AnswerSpec>(v).map(drop))?,
            "ablation" => check(serde_json::from_value::<AblationConfig>(v).map(drop))?,
            "pipeline" => check(serde_json::from_value::<PipelineConfig>(v).map(drop))?,
            _ => {}
        }
    }
    serde_json::from_value(doc).map_err(|e| {
        let msg = e.to_string();
        ConfigError::new(error_key("", &msg), msg)
    })
}

impl LoadedConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("--config", format!("{}: {e}", path.display())))?;
        let mut doc: Value =
            serde_json::from_str(&text).map_err(|e| ConfigError::new("<root>", format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let config = from_value(doc)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let loaded = Self { config, base_dir };
        loaded.validate()?;
        Ok(loaded)
    }

    pub fn from_config(config: RunConfig, base_dir: impl Into<PathBuf>) -> Result<Self, ConfigError> {
        let loaded = Self { config, base_dir: base_dir.into() };
        loaded.validate()?;
        Ok(loaded)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.config;
        let p = &c.policy;
        if !(3..=10).contains(&p.k) && !p.force_k {
            return Err(ConfigError::new(
                "policy.k",
                format!("k={} is outside 3..=10; set policy.force_k to allow it", p.k),
            ));
        }
        if p.k == 0 {
            return Err(ConfigError::new("policy.k", "k must be at least 1"));
        }
        if PromptTemplate::preset(&p.template).is_none() {
            return Err(ConfigError::new("policy.template", format!("unknown template {:?}", p.template)));
        }
        if p.num_demos_per_class == 0 {
            return Err(ConfigError::new("policy.num_demos_per_class", "must be at least 1"));
        }
        c.prompt.validate().map_err(|e| ConfigError::new("prompt", e.to_string()))?;
        if c.llm.concurrency == 0 {
            return Err(ConfigError::new("llm.concurrency", "must be at least 1"));
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// A configured input path that must exist.
    pub fn input(&self, key: &str) -> Result<PathBuf, ConfigError> {
        let p = &self.config.paths;
        let raw = match key {
            "train" => &p.train,
            "eval" => &p.eval,
            "corpus" => &p.corpus,
            "embeddings" => &p.embeddings,
            "question_embeddings" => &p.question_embeddings,
            "index" => &p.index,
            "cassette" => &p.cassette,
            "store" => &p.store,
            "classifier" => &p.classifier,
            _ => unreachable!("unknown path key {key}"),
        };
        let full_key = format!("paths.{key}");
        let path = raw
            .as_deref()
            .map(|r| self.resolve(r))
            .ok_or_else(|| ConfigError::new(&full_key, "not set"))?;
        if !path.exists() {
            return Err(ConfigError::new(full_key, format!("{} does not exist", path.display())));
        }
        Ok(path)
    }
}
