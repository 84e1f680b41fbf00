//! `medkit` command-line front end.

pub mod config;
mod classify;
mod data;
mod generate;
mod io;
mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::Serialize;

pub use config::RunConfig;

/// Exit status for bad input or configuration.
pub const EXIT_INVALID: i32 = 1;
/// Exit status for failures while running.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// A required flag is missing.
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Runtime(String),
}

impl From<medkit_core::Error> for CliError {
    fn from(e: medkit_core::Error) -> Self {
        use medkit_core::Error as E;
        match e {
            E::Invalid(_) | E::Format { .. } | E::Json(_) => CliError::Invalid(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "medkit", version, about = "Medical triage, consultation generation and generation metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags every subcommand accepts.
#[derive(Args, Debug, Serialize)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable. Dedicated flags still win.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    #[serde(skip)]
    set: Vec<String>,
    /// Seed for every random choice of the run.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Directory receiving every file the command writes.
    #[arg(long, value_name = "DIR")]
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct StatsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Training-side JSONL corpus.
    #[arg(long = "in", value_name = "PATH")]
    #[serde(skip_serializing_if = "Option::is_none")]
    input: Option<PathBuf>,
    /// Optional held-out JSONL counted as the test side.
    #[arg(long, value_name = "PATH")]
    #[serde(skip_serializing_if = "Option::is_none")]
    test: Option<PathBuf>,
    /// `coarse` or `fine`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    granularity: Option<String>,
}

#[derive(Args, Debug, Serialize)]
struct DataArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// JSONL corpus.
    #[arg(long = "in", value_name = "PATH")]
    #[serde(skip_serializing_if = "Option::is_none")]
    input: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    granularity: Option<String>,
    /// Held-out fraction for `split`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    test_fraction: Option<f64>,
    /// Largest category size kept by `small-sample`.
    #[arg(long = "threshold")]
    #[serde(skip_serializing_if = "Option::is_none")]
    small_sample_threshold: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct PretrainEncoderArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Text corpus: JSONL dialogues or one passage per line.
    #[arg(long = "in", value_name = "PATH")]
    #[serde(skip_serializing_if = "Option::is_none")]
    input: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pretrain_epochs: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct TrainTriageArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Labelled JSONL training set.
    #[arg(long, value_name = "PATH")]
    #[serde(skip_serializing_if = "Option::is_none")]
    train: Option<PathBuf>,
    /// Pre-trained encoder checkpoint (its vocab.txt sits beside it).
    #[arg(long, value_name = "PATH")]
    #[serde(skip_serializing_if = "Option::is_none")]
    encoder: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    granularity: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    triage_epochs: Option<usize>,
    /// Drop the dendritic stack.
    #[arg(long)]
    #[serde(skip)]
    no_dd: bool,
    /// Drop the BiLSTM summary.
    #[arg(long)]
    #[serde(skip)]
    no_bilstm: bool,
    /// Classify from the BiLSTM summary without the CLS vector.
    #[arg(long)]
    #[serde(skip)]
    no_cls_fusion: bool,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Checkpoint written by the matching train command.
    #[arg(long, value_name = "PATH")]
    #[serde(skip_serializing_if = "Option::is_none")]
    ckpt: Option<PathBuf>,
    /// Labelled JSONL test set.
    #[arg(long, value_name = "PATH")]
    #[serde(skip_serializing_if = "Option::is_none")]
    test: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct TrainPromptArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Labelled JSONL training set.
    #[arg(long, value_name = "PATH")]
    #[serde(skip_serializing_if = "Option::is_none")]
    train: Option<PathBuf>,
    /// JSON object mapping each label to its surface text.
    #[arg(long, value_name = "PATH")]
    #[serde(skip_serializing_if = "Option::is_none")]
    verbalizer: Option<PathBuf>,
    /// Pre-trained encoder checkpoint (its vocab.txt sits beside it).
    #[arg(long, value_name = "PATH")]
    #[serde(skip_serializing_if = "Option::is_none")]
    encoder: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt_epochs: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct PretrainLmArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Background text, one passage per line.
    #[arg(long = "in", value_name = "PATH")]
    #[serde(skip_serializing_if = "Option::is_none")]
    input: Option<PathBuf>,
    /// Extra files (dialogue or triple JSONL, or text) whose characters join the vocabulary.
    #[arg(long = "extra-text", value_name = "PATH")]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    extra_texts: Vec<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lm_epochs: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct TrainGenArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Question-answer JSONL.
    #[arg(long, value_name = "PATH")]
    #[serde(skip_serializing_if = "Option::is_none")]
    train: Option<PathBuf>,
    /// Knowledge triples JSONL.
    #[arg(long, value_name = "PATH")]
    #[serde(skip_serializing_if = "Option::is_none")]
    graph: Option<PathBuf>,
    /// Knowledge-injected LM checkpoint from `pretrain-lm`.
    #[arg(long, value_name = "PATH")]
    #[serde(skip_serializing_if = "Option::is_none")]
    init: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    gen_epochs: Option<usize>,
    /// Start from a fresh decoder instead of the knowledge-injected one.
    #[arg(long)]
    #[serde(skip)]
    no_knowledge: bool,
    /// Feed the question alone, without retrieved knowledge.
    #[arg(long)]
    #[serde(skip)]
    no_input_supplement: bool,
}

#[derive(Args, Debug, Serialize)]
struct EvalGenArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Generator checkpoint from `train-gen`.
    #[arg(long, value_name = "PATH")]
    #[serde(skip_serializing_if = "Option::is_none")]
    ckpt: Option<PathBuf>,
    /// Question-answer JSONL with reference answers.
    #[arg(long, value_name = "PATH")]
    #[serde(skip_serializing_if = "Option::is_none")]
    test: Option<PathBuf>,
    /// Knowledge triples JSONL.
    #[arg(long, value_name = "PATH")]
    #[serde(skip_serializing_if = "Option::is_none")]
    graph: Option<PathBuf>,
    /// `greedy`, `top_k` or `temperature`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    decode: Option<String>,
}

#[derive(Args, Debug, Serialize)]
struct MetricsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Generated lines (text, or JSONL with an `answer` field).
    #[arg(long = "gen", value_name = "PATH")]
    #[serde(skip_serializing_if = "Option::is_none")]
    generated: Option<PathBuf>,
    /// Reference lines, aligned with --gen.
    #[arg(long = "ref", value_name = "PATH")]
    #[serde(skip_serializing_if = "Option::is_none")]
    reference: Option<PathBuf>,
    /// Encoder checkpoint for contextual embeddings (one-hot otherwise).
    #[arg(long, value_name = "PATH")]
    #[serde(skip_serializing_if = "Option::is_none")]
    encoder: Option<PathBuf>,
    /// `chars` or `whitespace`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tokens: Option<String>,
}

#[derive(Args, Debug, Serialize)]
struct ChatArgs {
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
    /// Generator checkpoint from `train-gen`.
    #[arg(long, value_name = "PATH")]
    #[serde(skip_serializing_if = "Option::is_none")]
    ckpt: Option<PathBuf>,
    /// Knowledge triples JSONL.
    #[arg(long, value_name = "PATH")]
    #[serde(skip_serializing_if = "Option::is_none")]
    graph: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    decode: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Corpus statistics as JSON.
    Stats(StatsArgs),
    /// Drop samples with a missing or too short question or answer.
    Clean(DataArgs),
    /// Stratified seeded train/test split.
    Split(DataArgs),
    /// Keep only the low-frequency categories.
    SmallSample(DataArgs),
    /// Masked-language-model pre-training of the encoder.
    PretrainEncoder(PretrainEncoderArgs),
    /// Supervised triage fine-tuning.
    TrainTriage(TrainTriageArgs),
    /// Accuracy and macro P/R/F1 of a triage checkpoint.
    EvalTriage(EvalArgs),
    /// Prompt-based triage fine-tuning.
    TrainPrompt(TrainPromptArgs),
    /// Accuracy and macro P/R/F1 of a prompt checkpoint.
    EvalPrompt(EvalArgs),
    /// Knowledge injection: LM training on background text.
    PretrainLm(PretrainLmArgs),
    /// Question-answer fine-tuning of the generator.
    TrainGen(TrainGenArgs),
    /// Generate answers for a test set and score them.
    EvalGen(EvalGenArgs),
    /// Generation metrics for aligned generated and reference files.
    Metrics(MetricsArgs),
    /// Answer questions read from standard input.
    Chat(ChatArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Stats(_) => "stats",
            Command::Clean(_) => "clean",
            Command::Split(_) => "split",
            Command::SmallSample(_) => "small-sample",
            Command::PretrainEncoder(_) => "pretrain-encoder",
            Command::TrainTriage(_) => "train-triage",
            Command::EvalTriage(_) => "eval-triage",
            Command::TrainPrompt(_) => "train-prompt",
            Command::EvalPrompt(_) => "eval-prompt",
            Command::PretrainLm(_) => "pretrain-lm",
            Command::TrainGen(_) => "train-gen",
            Command::EvalGen(_) => "eval-gen",
            Command::Metrics(_) => "metrics",
            Command::Chat(_) => "chat",
        }
    }
}

fn flag_table<T: Serialize>(args: &T) -> Result<toml::Table, CliError> {
    toml::Table::try_from(args).map_err(|e| CliError::Invalid(format!("flags: {e}")))
}

fn resolve<T: Serialize>(common: &Common, args: &T, extra: &[(&str, toml::Value)]) -> Result<RunConfig, CliError> {
    let mut flags = flag_table(args)?;
    for (k, v) in extra {
        flags.insert(k.to_string(), v.clone());
    }
    config::resolve(common.config.as_deref(), &common.set, flags)
}

fn off(key: &'static str, when: bool) -> Option<(&'static str, toml::Value)> {
    when.then_some((key, toml::Value::Boolean(false)))
}

fn dispatch(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Stats(a) => data::stats(&resolve(&a.common, a, &[])?),
        Command::Clean(a) => data::clean(&resolve(&a.common, a, &[])?),
        Command::Split(a) => data::split(&resolve(&a.common, a, &[])?),
        Command::SmallSample(a) => data::small_sample(&resolve(&a.common, a, &[])?),
        Command::PretrainEncoder(a) => classify::pretrain_encoder(&resolve(&a.common, a, &[])?),
        Command::TrainTriage(a) => {
            let extra: Vec<_> = [off("use_dd", a.no_dd), off("use_bilstm", a.no_bilstm), off("use_cls", a.no_cls_fusion)]
                .into_iter()
                .flatten()
                .collect();
            classify::train_triage(&resolve(&a.common, a, &extra)?)
        }
        Command::EvalTriage(a) => classify::eval_triage(&resolve(&a.common, a, &[])?),
        Command::TrainPrompt(a) => classify::train_prompt(&resolve(&a.common, a, &[])?),
        Command::EvalPrompt(a) => classify::eval_prompt(&resolve(&a.common, a, &[])?),
        Command::PretrainLm(a) => generate::pretrain_lm(&resolve(&a.common, a, &[])?),
        Command::TrainGen(a) => {
            let extra: Vec<_> = [off("use_knowledge", a.no_knowledge), off("use_supplement", a.no_input_supplement)]
                .into_iter()
                .flatten()
                .collect();
            generate::train_gen(&resolve(&a.common, a, &extra)?)
        }
        Command::EvalGen(a) => generate::eval_gen(&resolve(&a.common, a, &[])?),
        Command::Metrics(a) => report::metrics(&resolve(&a.common, a, &[])?),
        Command::Chat(a) => generate::chat(&resolve(&a.common, a, &[])?),
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("MEDKIT_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { 0 };
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            let mut cmd = Cli::command();
            cmd.build();
            let usage = cmd
                .find_subcommand_mut(cli.command.name())
                .map(|c| c.render_usage().to_string())
                .unwrap_or_default();
            eprintln!("error: {msg}\n\n{usage}\n\nFor more information, try '--help'.");
            EXIT_INVALID
        }
        Err(CliError::Invalid(msg)) => {
            eprintln!("error: {msg}");
            EXIT_INVALID
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_RUNTIME
        }
    }
}
