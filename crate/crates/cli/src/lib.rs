//! Command-line front end: argument parsing, configuration loading and
//! dispatch to the pipeline commands.

pub mod app;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use app::{replay_verify, App, Split};
use config::{LoadedConfig, PolicyKind};

#[derive(Debug, Parser)]
#[command(name = "skr", version, about = "Self-knowledge guided adaptive retrieval")]
pub struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true, default_value = "config.json")]
    pub config: PathBuf,
    /// Override a config value, e.g. `--set policy.k=7`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Override the run seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Allow k outside 3..=10.
    #[arg(long, global = true)]
    pub force_k: bool,
    /// Output directory, overriding `paths.output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Passage index operations.
    Index {
        #[command(subcommand)]
        action: IndexAction,
    },
    /// Answer a split in both modes and label every question.
    Collect {
        #[arg(long, default_value = "train", value_parser = ["train", "eval"])]
        split: String,
    },
    /// Train the known/unknown classifier on the collected labels.
    TrainCls,
    /// Label the eval questions with a policy.
    Elicit {
        #[arg(long)]
        policy: Option<String>,
    },
    /// Answer the eval questions, retrieving only for unknown ones.
    Answer {
        #[arg(long)]
        policy: Option<String>,
        /// Write each prompt to prompts/<policy>/<id>.txt.
        #[arg(long)]
        dump_prompts: bool,
    },
    /// Score answer files and report beneficial guidance.
    Eval,
    /// Training-size or corpus ablation.
    Ablate {
        #[arg(value_parser = ["size", "corpus"])]
        what: String,
    },
    /// Run every stage in order.
    Run,
    /// Run the pipeline twice from the cassette and diff the outputs.
    ReplayVerify,
}

#[derive(Debug, Subcommand)]
pub enum IndexAction {
    /// Build the passage index from the corpus and its embeddings.
    Build,
}

fn policy(cfg: &LoadedConfig, name: Option<&str>) -> Result<PolicyKind> {
    match name {
        None => Ok(cfg.config.policy.kind),
        Some(n) => PolicyKind::parse(n)
            .ok_or_else(|| config::ConfigError::new("--policy", format!("unknown policy {n:?}")).into()),
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let mut overrides = cli.set.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    if cli.force_k {
        overrides.push("policy.force_k=true".into());
    }
    let cfg = LoadedConfig::load(&cli.config, &overrides)?;
    if let Command::ReplayVerify = cli.command {
        let out = match &cli.out {
            Some(o) => o.clone(),
            None => App::new(cfg.clone(), None)?.out_dir().join("replay-verify"),
        };
        replay_verify(&cfg, &out)?;
        return Ok(());
    }
    let app = App::new(cfg.clone(), cli.out.clone())?;
    match &cli.command {
        Command::Index { action: IndexAction::Build } => app.index_build()?,
        Command::Collect { split } => {
            app.collect(if split == "eval" { Split::Eval } else { Split::Train })?;
        }
        Command::TrainCls => app.train_cls()?,
        Command::Elicit { policy: p } => app.elicit(policy(&cfg, p.as_deref())?)?,
        Command::Answer { policy: p, dump_prompts } => {
            app.answer(policy(&cfg, p.as_deref())?, *dump_prompts)?;
        }
        Command::Eval => {
            app.eval()?;
        }
        Command::Ablate { what } => {
            if what == "size" {
                app.ablate_size()?;
            } else {
                app.ablate_corpus()?;
            }
        }
        Command::Run => app.run_pipeline()?,
        Command::ReplayVerify => unreachable!("handled above"),
    }
    Ok(())
}

/// Parses `argv`, runs the command and returns the process exit code.
/// Failures print one JSON error line to stderr.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { error::EXIT_CONFIG } else { error::EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => error::EXIT_OK,
        Err(e) => {
            let (code, line) = error::error_line(&e);
            eprintln!("{line}");
            code
        }
    }
}
