mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kgrec::model::Variant;
use kgrec::train::{L2Scope, Preset};

/// Knowledge-graph attribute network recommender.
#[derive(Debug, Parser)]
#[command(name = "kgrec", version, args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write checkpoint, manifest and logs under --out.
    Train(TrainArgs),
    /// Rank every item for every test user and report Recall@K / NDCG@K.
    Evaluate(EvaluateArgs),
    /// Dump per-relation interest scores of selected users.
    Explain(ExplainArgs),
    /// Generate a planted-preference synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Run configuration (TOML); a previous run's manifest.toml works.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding kg_final.txt, train.txt and test.txt.
    #[arg(long, conflicts_with_all = ["kg", "train", "test"])]
    data: Option<PathBuf>,
    #[arg(long, requires_all = ["train", "test"])]
    kg: Option<PathBuf>,
    #[arg(long, requires_all = ["kg", "test"])]
    train: Option<PathBuf>,
    #[arg(long, requires_all = ["kg", "train"])]
    test: Option<PathBuf>,
    /// Number of items (entity ids 0..N); inferred when omitted.
    #[arg(long)]
    item_count: Option<usize>,
    /// Hyperparameter preset applied before the config file.
    #[arg(long)]
    preset: Option<Preset>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Model variant: none (full model), noatt, mean or sum.
    #[arg(long)]
    ablation: Option<Variant>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long, value_parser = parse_scope)]
    l2_scope: Option<L2Scope>,
    /// Interest temperature.
    #[arg(long)]
    tau: Option<f64>,
    /// Layers including the attribute modeling layer.
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    d_min: Option<usize>,
    #[arg(long)]
    d_max: Option<usize>,
    #[arg(long)]
    c: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    validation_fraction: Option<f64>,
    /// Continue from last.bin in the output directory.
    #[arg(long)]
    resume: bool,
    /// Also write the layer-summed item table to items.bin.
    #[arg(long)]
    dump_items: bool,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Checkpoint to evaluate; defaults to checkpoint.bin of the run.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    /// Also write per-user rankings to per_user.tsv.
    #[arg(long)]
    per_user: bool,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Comma-separated user ids.
    #[arg(long, value_delimiter = ',', required_unless_present = "all_users")]
    users: Vec<u64>,
    #[arg(long)]
    all_users: bool,
    /// relation_id<TAB>name file.
    #[arg(long)]
    names: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    users: usize,
    #[arg(long, default_value_t = 300)]
    items: usize,
    #[arg(long, default_value_t = 8)]
    relations: usize,
    /// Attribute entities per relation.
    #[arg(long, default_value_t = 10)]
    pool: usize,
    /// Fraction of relations each user prefers.
    #[arg(long, default_value_t = 0.125)]
    sparsity: f64,
    #[arg(long, default_value_t = 20)]
    interactions: usize,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// Reach the last attribute relation through a bridge entity.
    #[arg(long)]
    second_hop: bool,
    #[arg(long, default_value_t = 2022)]
    seed: u64,
}

fn parse_scope(s: &str) -> Result<L2Scope, String> {
    match s {
        "batch" => Ok(L2Scope::Batch),
        "full" => Ok(L2Scope::Full),
        other => Err(format!("unknown l2 scope {other:?} (expected batch or full)")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(commands::EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Explain(a) => commands::explain(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
