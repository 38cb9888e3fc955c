//! Command-line surface for the hmill engine: schema inference, training,
//! prediction, evaluation, and the graph pipeline (transformation, feature
//! export, vertex-sample export, score propagation, fold-protocol
//! inference).

mod graphcmd;
mod manifest;
mod pipeline;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "hmill",
    version,
    about = "Hierarchical multi-instance learning over JSON corpora and interaction graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Infer a schema from a JSONL corpus.
    Schema(SchemaArgs),
    /// Reflect a model from a schema and train it on labeled documents.
    Train(TrainArgs),
    /// Score documents with a trained model.
    Predict(PredictArgs),
    /// Score documents and compute metrics and curves against labels.
    Eval(EvalArgs),
    /// Graph pipeline commands.
    #[command(subcommand)]
    Graph(GraphCommand),
}

#[derive(Args)]
struct SchemaArgs {
    /// JSONL corpus, one document per line.
    #[arg(long)]
    input: PathBuf,
    /// Output schema file.
    #[arg(long)]
    out: PathBuf,
    /// Cap on tracked unique values per leaf.
    #[arg(long, default_value_t = 100)]
    max_unique: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// JSONL corpus with labels.
    #[arg(long)]
    data: PathBuf,
    /// Schema file from `hmill schema`.
    #[arg(long)]
    schema: PathBuf,
    /// '/'-separated path of the label field inside each document.
    #[arg(long)]
    label: String,
    #[arg(long, default_value_t = 50)]
    hidden: usize,
    /// Comma-separated aggregations: max, mean, lse, pnorm.
    #[arg(long, default_value = "max,mean,lse,pnorm")]
    agg: String,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 100)]
    batch: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Accept document keys the schema does not know about.
    #[arg(long)]
    ignore_extra_keys: bool,
    /// Keep default (missing-data) vectors fixed at zero.
    #[arg(long)]
    freeze_psi: bool,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ignore_extra_keys: bool,
    /// Directory for predictions.tsv and the run manifest.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Label path override; defaults to the one stored in the model.
    #[arg(long)]
    labels: Option<String>,
    /// Curves to emit for two-class models: pr, roc, logroc.
    #[arg(long, default_value = "")]
    curves: String,
    #[arg(long, default_value_t = 100)]
    points: usize,
    #[arg(long)]
    ignore_extra_keys: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum GraphCommand {
    /// Project bipartite relations onto their left vertex sets.
    Transform(GraphIoArgs),
    /// Export per-neighbor edge features for every vertex.
    Features(GraphFeaturesArgs),
    /// Export vertex samples as JSONL.
    Sample(GraphSampleArgs),
    /// Score propagation baseline over one transformed relation.
    Ptp(GraphPtpArgs),
    /// Train a one-step inference model and score every vertex under the
    /// held-out fold protocol.
    Infer(GraphInferArgs),
}

#[derive(Args)]
struct GraphIoArgs {
    /// Comma-separated `name=path` TSV relation files.
    #[arg(long)]
    relations: String,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GraphFeaturesArgs {
    #[arg(long)]
    relations: String,
    /// Blacklist file: `id` lines or `cluster<TAB>id` lines.
    #[arg(long)]
    blacklist: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GraphSampleArgs {
    #[arg(long)]
    relations: String,
    #[arg(long)]
    blacklist: Option<PathBuf>,
    /// Per-bag negative-neighbor cap (0 = unlimited).
    #[arg(long = "K", default_value_t = 100)]
    cap: usize,
    /// Unrolling depth; the edge-feature representation is one-step.
    #[arg(long, default_value_t = 1)]
    k_steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GraphPtpArgs {
    /// Exactly one `name=path` relation.
    #[arg(long)]
    relations: String,
    #[arg(long)]
    blacklist: PathBuf,
    #[arg(long, default_value_t = 20)]
    iters: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GraphInferArgs {
    #[arg(long)]
    relations: String,
    #[arg(long)]
    blacklist: PathBuf,
    #[arg(long = "K", default_value_t = 100)]
    cap: usize,
    /// Unrolling depth; the edge-feature representation is one-step.
    #[arg(long, default_value_t = 1)]
    k_steps: usize,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 50)]
    hidden: usize,
    #[arg(long, default_value = "max,mean,lse,pnorm")]
    agg: String,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// Negative-class loss weight.
    #[arg(long, default_value_t = 0.9)]
    w0: f64,
    /// Positive-class loss weight.
    #[arg(long, default_value_t = 0.1)]
    w1: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

fn init_thread_pool() {
    if let Ok(threads) = std::env::var("HMILL_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}

fn main() -> ExitCode {
    init_thread_pool();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Schema(args) => pipeline::cmd_schema(&args),
        Command::Train(args) => pipeline::cmd_train(&args),
        Command::Predict(args) => pipeline::cmd_predict(&args),
        Command::Eval(args) => pipeline::cmd_eval(&args),
        Command::Graph(graph) => match graph {
            GraphCommand::Transform(args) => graphcmd::cmd_transform(&args),
            GraphCommand::Features(args) => graphcmd::cmd_features(&args),
            GraphCommand::Sample(args) => graphcmd::cmd_sample(&args),
            GraphCommand::Ptp(args) => graphcmd::cmd_ptp(&args),
            GraphCommand::Infer(args) => graphcmd::cmd_infer(&args),
        },
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
