//! Command-line front end: argument definitions, dispatch and exit codes.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use codeinterp::error::{ClassifyError, DatasetError};

pub mod commands;
pub mod config;
pub mod run;
pub mod svg;

/// Exit code for bad invocations and configuration.
pub const EXIT_USAGE: i32 = 2;
/// Exit code for unreadable or inconsistent input data.
pub const EXIT_DATA: i32 = 3;
/// Exit code when training produced a non-finite loss.
pub const EXIT_DIVERGED: i32 = 4;

/// A mistake in how the tool was invoked or configured.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Debug, Parser)]
#[command(name = "codeinterp", version, about = "Classify building-code clauses by machine interpretability and score codes")]
pub struct Cli {
    /// TOML run configuration; flags override its keys.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log progress (-v) or debug detail (-vv) to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean and segment plain-text codes into clauses.
    Ingest(IngestArgs),
    /// Convert a tab-separated labeled file into a dataset.
    Import(ImportArgs),
    /// Add rule-based variants of minority-class examples.
    Augment(AugmentArgs),
    /// Split a dataset into train, validation and test parts.
    Split(SplitArgs),
    /// Train a classifier with a learning-rate grid search.
    Train(TrainArgs),
    /// Evaluate a trained classifier on a labeled dataset.
    Eval(EvalArgs),
    /// Classify clauses with a trained classifier.
    Predict(PredictArgs),
    /// Score codes from per-clause predictions and aggregate them.
    Score(ScoreArgs),
    /// Write report tables and charts.
    Report(ReportArgs),
    /// Measure rule interpretation before and after filtering.
    FilterExp(FilterArgs),
    /// Continue pretraining an encoder checkpoint on in-domain text.
    Pretrain(PretrainArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory of `.txt` codes, one file per code.
    #[arg(long = "in", value_name = "DIR")]
    pub input: Option<PathBuf>,
    /// JSON object mapping each document id to its metadata.
    #[arg(long, value_name = "FILE")]
    pub meta: Option<PathBuf>,
    /// Clauses JSONL to write.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Regex marking the first line of a provision.
    #[arg(long)]
    pub provision_pattern: Option<String>,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    /// Lines of `text<TAB>label`.
    #[arg(long, value_name = "FILE")]
    pub tsv: Option<PathBuf>,
    /// Dataset JSONL to write.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Id prefix and document id of the imported clauses. Defaults to the
    /// file stem.
    #[arg(long)]
    pub prefix: Option<String>,
    /// Class names for numeric labels, in index order.
    #[arg(long, value_delimiter = ',')]
    pub class_names: Vec<String>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Examples wanted per augmented category. Defaults to the largest
    /// category.
    #[arg(long)]
    pub target: Option<usize>,
    /// Categories to augment. Defaults to every category below the target.
    #[arg(long, value_delimiter = ',')]
    pub categories: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Train, validation and test shares, e.g. `0.8,0.1,0.1` or `4/5,1/10,1/10`.
    #[arg(long, value_delimiter = ',')]
    pub ratios: Vec<String>,
    /// Split each category separately.
    #[arg(long)]
    pub stratified: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    pub train: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub val: Option<PathBuf>,
    /// Model directory to write.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// pretrained_encoder, cnn, rnn, rnn_attention, transformer_scratch or ngram_linear.
    #[arg(long)]
    pub family: Option<String>,
    /// Encoder checkpoint name or directory.
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// Directory searched for named checkpoints; repeatable.
    #[arg(long, value_name = "DIR")]
    pub checkpoint_root: Vec<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Tokens per sequence, including special tokens.
    #[arg(long)]
    pub padding_size: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Learning rates to search, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub lr_grid: Vec<f64>,
    /// Character n-gram orders for ngram_linear, e.g. `1,3`.
    #[arg(long, value_delimiter = ',')]
    pub ngram_range: Vec<usize>,
    /// Word-vector text file for the sequence baselines.
    #[arg(long, value_name = "FILE")]
    pub pretrained_embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "DIR")]
    pub model: PathBuf,
    /// Labeled dataset JSONL.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Directory for eval.json and eval.csv.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, value_name = "DIR")]
    pub model: PathBuf,
    /// Text to classify; repeatable.
    #[arg(long)]
    pub text: Vec<String>,
    /// Plain-text file, one clause per line.
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Clauses JSONL.
    #[arg(long, value_name = "FILE")]
    pub clauses: Option<PathBuf>,
    /// Predictions JSONL to write instead of printing labels.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Predictions JSONL, or a directory of them.
    #[arg(long, value_name = "PATH")]
    pub predictions: PathBuf,
    /// Metadata JSON keyed by document id.
    #[arg(long, value_name = "FILE")]
    pub meta: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Percentage a code must exceed to count as highly interpretable.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Dataset whose class balance is charted.
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// `NAME=PATH` of an eval.json (or a directory holding one); repeatable.
    #[arg(long = "eval", value_name = "NAME=PATH")]
    pub evals: Vec<String>,
    /// Predictions JSONL, or a directory of them, for the corpus tables.
    #[arg(long, value_name = "PATH")]
    pub predictions: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub meta: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Clauses JSONL.
    #[arg(long, value_name = "FILE")]
    pub clauses: PathBuf,
    /// Classifier used to predict categories.
    #[arg(long, value_name = "DIR", conflicts_with = "predictions")]
    pub model: Option<PathBuf>,
    /// Existing predictions JSONL instead of a model.
    #[arg(long, value_name = "FILE")]
    pub predictions: Option<PathBuf>,
    /// JSONL of `{clause_id, outcome}` scripting the interpreter.
    #[arg(long, value_name = "FILE")]
    pub interpreter: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Source checkpoint name or directory.
    #[arg(long)]
    pub checkpoint: Option<String>,
    #[arg(long, value_name = "DIR")]
    pub checkpoint_root: Vec<PathBuf>,
    /// Unlabeled text, one passage per line.
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,
    /// Directory of the new checkpoint.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub mask_prob: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub min_lines: Option<usize>,
}

/// Exit status for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<ClassifyError>() {
            match e {
                ClassifyError::DivergedTraining { .. } => return EXIT_DIVERGED,
                ClassifyError::InvalidConfig(_) | ClassifyError::UnsupportedFamily(_) => return EXIT_USAGE,
                _ => {}
            }
        }
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(DatasetError::RatioError(_)) = cause.downcast_ref::<DatasetError>() {
            return EXIT_USAGE;
        }
    }
    EXIT_DATA
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    let loaded = config::LoadedConfig::load(cli.config.as_deref())?;
    let seed = cli.seed.or(loaded.config.seed).unwrap_or(0);
    let ctx = commands::Context { config: loaded, seed };
    match cli.command {
        Command::Ingest(a) => commands::ingest(&ctx, a),
        Command::Import(a) => commands::import(&ctx, a),
        Command::Augment(a) => commands::augment(&ctx, a),
        Command::Split(a) => commands::split(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Predict(a) => commands::predict(&ctx, a),
        Command::Score(a) => commands::score(&ctx, a),
        Command::Report(a) => commands::report(&ctx, a),
        Command::FilterExp(a) => commands::filter_exp(&ctx, a),
        Command::Pretrain(a) => commands::pretrain(&ctx, a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arguments_parse() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        let cli = Cli::try_parse_from([
            "codeinterp", "train", "--train", "a", "--val", "b", "--lr-grid", "1e-3,5e-4", "--seed", "3",
        ])
        .unwrap();
        assert_eq!(cli.seed, Some(3));
        match cli.command {
            Command::Train(t) => assert_eq!(t.lr_grid, [1e-3, 5e-4]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn errors_map_to_exit_codes() {
        let diverged = anyhow::Error::new(ClassifyError::DivergedTraining { lr: 1.0, epoch: 2 });
        assert_eq!(exit_code(&diverged), EXIT_DIVERGED);
        let usage = anyhow::Error::new(UsageError("x".into())).context("while parsing");
        assert_eq!(exit_code(&usage), EXIT_USAGE);
        let data = anyhow::Error::new(DatasetError::DuplicateId("a".into()));
        assert_eq!(exit_code(&data), EXIT_DATA);
    }
}
