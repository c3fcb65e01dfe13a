//! Command implementations. Every command reads its inputs from the run
//! configuration and writes its outputs under the output directory.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use skr_core::adaptive::{answer_all, FinalAnswer};
use skr_core::collection::{build_store, collect_answers, CollectionRun, ErroredQuestion};
use skr_core::elicitation::classifier::{train_classifier, ClassifierElicitor, LinearClassifier};
use skr_core::elicitation::knn::{build_labeled_index, KnnElicitor};
use skr_core::elicitation::prompting::{IclElicitor, PromptElicitor};
use skr_core::elicitation::template::PromptTemplate;
use skr_core::elicitation::{Elicitor, FixedElicitor, RandomElicitor};
use skr_core::evaluation::{
    ablate_corpus, ablate_training_size, ablation_csv, beneficial_guidance, evaluate, format_ablation,
    format_reports, round2, AblationRow, EvalError, EvalReport, FlipSet,
};
use skr_core::gateway::{Cassette, CompletionBackend, EndpointMode, Gateway};
use skr_core::io::{load_questions, read_jsonl, write_jsonl};
use skr_core::parallel::ordered_map;
use skr_core::retrieval::embfile::read_embeddings;
use skr_core::retrieval::{build_index_from_files, embeddings_by_id, DenseRetriever, Embedding, VectorIndex};
use skr_core::types::{LabelEntry, Mode, Question, SelfKnowledgeLabel, SelfKnowledgeStore};

use crate::config::{ConfigError, LoadedConfig, PolicyKind};

/// `replay-verify` found differing outputs.
#[derive(Debug, thiserror::Error)]
#[error("{diffs} diffs between replay runs")]
pub struct VerifyFailed {
    pub diffs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

#[derive(Serialize)]
struct GuidanceRow {
    policy: String,
    flips: usize,
    errored: usize,
    beneficial_guidance: f64,
}

pub struct App {
    cfg: LoadedConfig,
    out_dir: PathBuf,
    backend: Option<Arc<dyn CompletionBackend>>,
    gateway: OnceLock<Arc<Gateway>>,
    queries: OnceLock<Arc<HashMap<String, Embedding>>>,
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable output");
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

impl App {
    pub fn new(cfg: LoadedConfig, out_dir: Option<PathBuf>) -> Result<Self> {
        let out_dir = match out_dir {
            Some(d) => d,
            None => {
                let raw = cfg
                    .config
                    .paths
                    .output_dir
                    .clone()
                    .ok_or_else(|| ConfigError::new("paths.output_dir", "not set"))?;
                cfg.resolve(&raw)
            }
        };
        std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        Ok(Self { cfg, out_dir, backend: None, gateway: OnceLock::new(), queries: OnceLock::new() })
    }

    /// Uses `backend` instead of the HTTP client for live and record modes.
    pub fn with_backend(mut self, backend: Arc<dyn CompletionBackend>) -> Self {
        self.backend = Some(backend);
        self
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    pub fn config(&self) -> &LoadedConfig {
        &self.cfg
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn gateway(&self) -> Result<Arc<Gateway>> {
        if let Some(g) = self.gateway.get() {
            return Ok(g.clone());
        }
        let llm = self.cfg.config.llm.clone();
        let cassette = match &self.cfg.config.paths.cassette {
            Some(p) => Cassette::open(self.cfg.resolve(p))?,
            None if llm.mode == EndpointMode::Live => Cassette::in_memory(),
            None => return Err(ConfigError::new("paths.cassette", "required in replay and record modes").into()),
        };
        if llm.mode == EndpointMode::Replay && cassette.is_empty() {
            return Err(ConfigError::new("paths.cassette", "replay mode needs a non-empty cassette").into());
        }
        let gateway = match (&self.backend, llm.mode) {
            (Some(b), EndpointMode::Live | EndpointMode::Record) => Gateway::new(llm, Arc::new(cassette), Some(b.clone())),
            _ => Gateway::from_config(llm, Arc::new(cassette))?,
        };
        Ok(self.gateway.get_or_init(|| Arc::new(gateway)).clone())
    }

    pub fn questions(&self, split: Split) -> Result<Vec<Question>> {
        let path = self.cfg.input(split.name())?;
        Ok(load_questions(&path)?)
    }

    pub fn query_embeddings(&self) -> Result<Arc<HashMap<String, Embedding>>> {
        if let Some(q) = self.queries.get() {
            return Ok(q.clone());
        }
        let path = self.cfg.input("question_embeddings")?;
        let (_, embs) = read_embeddings(&path)?;
        Ok(self.queries.get_or_init(|| Arc::new(embeddings_by_id(embs))).clone())
    }

    fn index_dir(&self) -> PathBuf {
        match &self.cfg.config.paths.index {
            Some(p) => self.cfg.resolve(p),
            None => self.out("index"),
        }
    }

    /// The passage index: loaded if it has been built, otherwise built from
    /// the corpus and its embeddings.
    pub fn passage_index(&self) -> Result<VectorIndex> {
        let dir = self.index_dir();
        if dir.join("index.emb").exists() {
            return Ok(VectorIndex::load(&dir)?);
        }
        let corpus = self.cfg.input("corpus")?;
        let embeddings = self.cfg.input("embeddings")?;
        Ok(build_index_from_files(&corpus, &embeddings)?.0)
    }

    fn store_path(&self) -> PathBuf {
        match &self.cfg.config.paths.store {
            Some(p) => self.cfg.resolve(p),
            None => self.out("train.store.jsonl"),
        }
    }

    pub fn store(&self) -> Result<SelfKnowledgeStore> {
        let path = self.store_path();
        if !path.exists() {
            return Err(ConfigError::new("paths.store", format!("{} does not exist; run collect first", path.display())).into());
        }
        let entries: Vec<LabelEntry> = read_jsonl(&path)?;
        Ok(SelfKnowledgeStore::from_entries(entries))
    }

    fn classifier_path(&self) -> PathBuf {
        match &self.cfg.config.paths.classifier {
            Some(p) => self.cfg.resolve(p),
            None => self.out("classifier.json"),
        }
    }

    pub fn index_build(&self) -> Result<()> {
        let corpus = self.cfg.input("corpus")?;
        let embeddings = self.cfg.input("embeddings")?;
        let (index, orphans) = build_index_from_files(&corpus, &embeddings)?;
        let dir = self.index_dir();
        index.save(&dir)?;
        println!(
            "indexed {} passages (dim {}, {} orphan embeddings) into {}",
            index.len(),
            index.dim(),
            orphans.len(),
            dir.display()
        );
        Ok(())
    }

    pub fn collect(&self, split: Split) -> Result<SelfKnowledgeStore> {
        let c = &self.cfg.config;
        let questions = self.questions(split)?;
        let gateway = self.gateway()?;
        let retriever = DenseRetriever::new(self.passage_index()?, self.query_embeddings()?);
        let direct = collect_answers(&questions, &gateway, &c.prompt, None, Mode::Direct, &c.answer)?;
        let augmented = collect_answers(&questions, &gateway, &c.prompt, Some(&retriever), Mode::Augmented, &c.answer)?;
        let mut errored: Vec<ErroredQuestion> = direct.errored.iter().chain(&augmented.errored).cloned().collect();
        errored.sort_by(|a, b| (&a.question_id, a.mode as u8).cmp(&(&b.question_id, b.mode as u8)));
        let run = CollectionRun::pair(&c.dataset, c.answer.metric, direct, augmented);
        let store = build_store(&run)?;

        let name = split.name();
        run.save(&self.out(&format!("{name}.collection.jsonl")))?;
        write_jsonl(&self.out(&format!("{name}.errored.jsonl")), &errored)?;
        let store_path = match split {
            Split::Train => self.store_path(),
            Split::Eval => self.out("eval.store.jsonl"),
        };
        write_jsonl(&store_path, &store.to_entries())?;
        println!(
            "collected {name}: {} questions, m={} n={} discarded={} errored={}",
            questions.len(),
            store.m(),
            store.n(),
            store.discarded(),
            run.errored.len()
        );
        Ok(store)
    }

    fn training_examples(&self, store: &SelfKnowledgeStore) -> Result<Vec<(Embedding, SelfKnowledgeLabel)>> {
        let queries = self.query_embeddings()?;
        store
            .iter()
            .filter(|(_, l)| *l != SelfKnowledgeLabel::Discarded)
            .map(|(id, l)| {
                let e = queries
                    .get(id)
                    .with_context(|| format!("no embedding for training question {id}"))?;
                Ok((e.clone(), l))
            })
            .collect()
    }

    fn fit_classifier(&self, store: &SelfKnowledgeStore) -> Result<(LinearClassifier, Vec<f64>)> {
        let c = &self.cfg.config;
        let params = c.policy.classifier.params(c.seed);
        let (clf, report) = train_classifier(&self.training_examples(store)?, &params)?;
        Ok((clf, report.losses))
    }

    pub fn train_cls(&self) -> Result<()> {
        let store = self.store()?;
        let (clf, losses) = self.fit_classifier(&store)?;
        let path = self.out("classifier.json");
        clf.save(&path)?;
        write_json(&self.out("classifier.loss.json"), &losses)?;
        println!(
            "trained classifier on {} examples: loss {:.6} -> {:.6}",
            store.m() + store.n(),
            losses[0],
            losses.iter().cloned().fold(f64::INFINITY, f64::min)
        );
        Ok(())
    }

    fn load_classifier(&self) -> Result<LinearClassifier> {
        let path = self.classifier_path();
        if !path.exists() {
            return Err(ConfigError::new(
                "paths.classifier",
                format!("{} does not exist; run train-cls first", path.display()),
            )
            .into());
        }
        Ok(LinearClassifier::load(&path)?)
    }

    /// Builds the elicitor for `kind` over `store`. `classifier` overrides the
    /// saved classifier for the cls policy.
    pub fn elicitor(
        &self,
        kind: PolicyKind,
        store: &SelfKnowledgeStore,
        classifier: Option<LinearClassifier>,
    ) -> Result<Box<dyn Elicitor>> {
        let c = &self.cfg.config;
        let template = || PromptTemplate::preset(&c.policy.template).expect("validated template");
        Ok(match kind {
            PolicyKind::NeverRetrieve => Box::new(FixedElicitor::never_retrieve()),
            PolicyKind::AlwaysRetrieve => Box::new(FixedElicitor::always_retrieve()),
            PolicyKind::Random => Box::new(RandomElicitor::new(c.seed)),
            PolicyKind::Prompt => Box::new(PromptElicitor::new(self.gateway()?, template())?),
            PolicyKind::Icl => {
                let train = self.questions(Split::Train)?;
                let queries = self.query_embeddings()?;
                let ranking = if c.policy.rank_demos {
                    Some(build_labeled_index(&train, &queries, store)?)
                } else {
                    None
                };
                let by_id = train.into_iter().map(|q| (q.id.clone(), q)).collect();
                Box::new(IclElicitor::new(
                    self.gateway()?,
                    template(),
                    Arc::new(store.clone()),
                    Arc::new(by_id),
                    ranking,
                    queries,
                    c.policy.num_demos_per_class,
                )?)
            }
            PolicyKind::Cls => {
                let clf = match classifier {
                    Some(clf) => clf,
                    None => self.load_classifier()?,
                };
                Box::new(ClassifierElicitor::new(clf, self.query_embeddings()?))
            }
            PolicyKind::Knn => {
                let train = self.questions(Split::Train)?;
                let queries = self.query_embeddings()?;
                let index = build_labeled_index(&train, &queries, store)?;
                Box::new(KnnElicitor::new(index, Arc::new(store.clone()), queries, c.policy.k)?)
            }
        })
    }

    fn store_for(&self, kind: PolicyKind) -> Result<SelfKnowledgeStore> {
        match kind {
            PolicyKind::Icl | PolicyKind::Knn => self.store(),
            _ => Ok(SelfKnowledgeStore::new()),
        }
    }

    pub fn elicit(&self, kind: PolicyKind) -> Result<()> {
        let eval = self.questions(Split::Eval)?;
        let elicitor = self.elicitor(kind, &self.store_for(kind)?, None)?;
        let workers = self.cfg.config.llm.concurrency;
        let labels = ordered_map(&eval, workers, |q| elicitor.elicit(q).map(|e| (q.id.clone(), e)))
            .into_iter()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let entries: Vec<LabelEntry> = labels
            .iter()
            .map(|(id, e)| LabelEntry { question_id: id.clone(), label: e.label })
            .collect();
        let warnings = labels.iter().filter(|(_, e)| e.warning).count();
        write_jsonl(&self.out(&format!("labels-{}.jsonl", kind.name())), &entries)?;
        let unknown = entries.iter().filter(|e| e.label == SelfKnowledgeLabel::Unknown).count();
        println!(
            "elicited {} labels with {}: {} unknown, {} unparseable",
            entries.len(),
            kind.name(),
            unknown,
            warnings
        );
        Ok(())
    }

    fn answer_with(
        &self,
        questions: &[Question],
        elicitor: &dyn Elicitor,
        index: VectorIndex,
    ) -> Result<Vec<skr_core::adaptive::Answered>> {
        let c = &self.cfg.config;
        let retriever = DenseRetriever::new(index, self.query_embeddings()?);
        let gateway = self.gateway()?;
        Ok(answer_all(questions, elicitor, &gateway, &retriever, &c.prompt, &c.answer)?)
    }

    pub fn answer(&self, kind: PolicyKind, dump_prompts: bool) -> Result<Vec<FinalAnswer>> {
        let eval = self.questions(Split::Eval)?;
        let elicitor = self.elicitor(kind, &self.store_for(kind)?, None)?;
        let answered = self.answer_with(&eval, elicitor.as_ref(), self.passage_index()?)?;
        if dump_prompts {
            let dir = self.out_dir.join("prompts").join(kind.name());
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            for a in &answered {
                write_text(&dir.join(format!("{}.txt", a.answer.question_id)), &a.prompt)?;
            }
        }
        let answers: Vec<FinalAnswer> = answered.into_iter().map(|a| a.answer).collect();
        write_jsonl(&self.out(&format!("answers-{}.jsonl", kind.name())), &answers)?;
        let retrieved = answers.iter().filter(|a| a.retrieval_used).count();
        println!("answered {} questions with {} ({} retrieved)", answers.len(), kind.name(), retrieved);
        Ok(answers)
    }

    /// Scores every pipeline policy that has an answers file.
    pub fn eval(&self) -> Result<Vec<EvalReport>> {
        let c = &self.cfg.config;
        let flips = {
            let path = self.out("eval.collection.jsonl");
            if path.exists() {
                Some(FlipSet::from_run(&CollectionRun::load(&path, &c.dataset, c.answer.metric)?)?)
            } else {
                None
            }
        };
        let mut reports = Vec::new();
        let mut guidance = Vec::new();
        for kind in &c.pipeline.policies {
            let path = self.out(&format!("answers-{}.jsonl", kind.name()));
            if !path.exists() {
                continue;
            }
            let answers: Vec<FinalAnswer> = read_jsonl(&path)?;
            let report = evaluate(&c.dataset, kind.name(), &answers, c.answer.metric)?;
            if let Some(f) = flips.as_ref().filter(|f| !f.is_empty()) {
                let labels: HashMap<String, SelfKnowledgeLabel> =
                    answers.iter().map(|a| (a.question_id.clone(), a.label_used)).collect();
                guidance.push(GuidanceRow {
                    policy: kind.name().into(),
                    flips: f.len(),
                    errored: f.errored,
                    beneficial_guidance: round2(beneficial_guidance(f, &labels)?),
                });
            }
            reports.push(report);
        }
        if reports.is_empty() {
            bail!(EvalError::EmptyRun);
        }
        let table = format_reports(&reports);
        write_json(&self.out("reports.json"), &reports)?;
        write_text(&self.out("summary.txt"), &table)?;
        print!("{table}");
        if flips.is_some() {
            write_json(&self.out("guidance.json"), &guidance)?;
            for g in &guidance {
                println!("beneficial guidance {}: {:.2} over {} flips", g.policy, g.beneficial_guidance, g.flips);
            }
        }
        Ok(reports)
    }

    pub fn ablate_size(&self) -> Result<Vec<AblationRow>> {
        let c = &self.cfg.config;
        let store = self.store()?;
        let eval = self.questions(Split::Eval)?;
        let index = self.passage_index()?;
        let rows = ablate_training_size::<anyhow::Error, _>(
            &store,
            &c.ablation.fractions,
            c.seed,
            c.answer.metric,
            |sub| {
                let mut out = Vec::new();
                for kind in &c.ablation.policies {
                    let clf = match kind {
                        PolicyKind::Cls => Some(self.fit_classifier(sub)?.0),
                        _ => None,
                    };
                    let elicitor = self.elicitor(*kind, sub, clf)?;
                    let answers: Vec<FinalAnswer> = self
                        .answer_with(&eval, elicitor.as_ref(), index.clone())?
                        .into_iter()
                        .map(|a| a.answer)
                        .collect();
                    let report = evaluate(&c.dataset, kind.name(), &answers, c.answer.metric)?;
                    out.push((kind.name().to_string(), report.value));
                }
                Ok(out)
            },
        )?;
        self.emit_ablation("ablation-size", &rows)?;
        Ok(rows)
    }

    pub fn ablate_corpus(&self) -> Result<Vec<AblationRow>> {
        let c = &self.cfg.config;
        if c.ablation.corpora.len() < 2 {
            return Err(ConfigError::new(
                "ablation.corpora",
                format!("needs at least two corpora, got {}", c.ablation.corpora.len()),
            )
            .into());
        }
        let mut corpora = Vec::new();
        for (i, cc) in c.ablation.corpora.iter().enumerate() {
            let corpus = self.cfg.resolve(&cc.corpus);
            let embeddings = self.cfg.resolve(&cc.embeddings);
            for (field, p) in [("corpus", &corpus), ("embeddings", &embeddings)] {
                if !p.exists() {
                    return Err(ConfigError::new(
                        format!("ablation.corpora[{i}].{field}"),
                        format!("{} does not exist", p.display()),
                    )
                    .into());
                }
            }
            corpora.push((cc.name.clone(), build_index_from_files(&corpus, &embeddings)?.0));
        }
        let eval = self.questions(Split::Eval)?;
        let kind = c.policy.kind;
        let elicitor = self.elicitor(kind, &self.store_for(kind)?, None)?;
        let rows = ablate_corpus::<_, anyhow::Error, _>(&corpora, c.answer.metric, |index| {
            let answers: Vec<FinalAnswer> = self
                .answer_with(&eval, elicitor.as_ref(), index.clone())?
                .into_iter()
                .map(|a| a.answer)
                .collect();
            let report = evaluate(&c.dataset, kind.name(), &answers, c.answer.metric)?;
            Ok(vec![(kind.name().to_string(), report.value)])
        })?;
        self.emit_ablation("ablation-corpus", &rows)?;
        Ok(rows)
    }

    fn emit_ablation(&self, name: &str, rows: &[AblationRow]) -> Result<()> {
        write_text(&self.out(&format!("{name}.csv")), &ablation_csv(rows))?;
        print!("{}", format_ablation(rows));
        Ok(())
    }

    /// Every stage in order: index, collection on both splits, classifier,
    /// answers for each policy, reports and ablations.
    pub fn run_pipeline(&self) -> Result<()> {
        let c = &self.cfg.config;
        self.index_build()?;
        self.collect(Split::Train)?;
        self.collect(Split::Eval)?;
        self.train_cls()?;
        for kind in &c.pipeline.policies {
            self.answer(*kind, false)?;
        }
        self.eval()?;
        if c.pipeline.ablations {
            self.ablate_size()?;
            if c.ablation.corpora.len() >= 2 {
                self.ablate_corpus()?;
            }
        }
        Ok(())
    }
}

fn list_files(root: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).with_context(|| format!("reading {}", dir.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
                out.insert(path.strip_prefix(root).expect("under root").to_path_buf(), bytes);
            }
        }
    }
    Ok(out)
}

/// Relative paths that differ between two output trees.
pub fn diff_trees(a: &Path, b: &Path) -> Result<Vec<PathBuf>> {
    let fa = list_files(a)?;
    let fb = list_files(b)?;
    let mut diffs: Vec<PathBuf> = fa
        .iter()
        .filter(|(p, bytes)| fb.get(*p) != Some(*bytes))
        .map(|(p, _)| p.clone())
        .collect();
    diffs.extend(fb.keys().filter(|p| !fa.contains_key(*p)).cloned());
    diffs.sort();
    Ok(diffs)
}

/// Runs the full pipeline twice from the cassette alone and compares the
/// two output trees byte for byte.
pub fn replay_verify(cfg: &LoadedConfig, out_dir: &Path) -> Result<usize> {
    let mut cfg = cfg.clone();
    cfg.config.llm.mode = EndpointMode::Replay;
    let runs = [out_dir.join("run-1"), out_dir.join("run-2")];
    for dir in &runs {
        if dir.exists() {
            std::fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
        App::new(cfg.clone(), Some(dir.clone()))?.run_pipeline()?;
    }
    let diffs = diff_trees(&runs[0], &runs[1])?;
    for d in &diffs {
        println!("diff: {}", d.display());
    }
    println!("{} diffs", diffs.len());
    if diffs.is_empty() {
        Ok(0)
    } else {
        Err(VerifyFailed { diffs: diffs.len() }.into())
    }
}
