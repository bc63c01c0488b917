use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Builds graph ANN indexes by partitioning, per-subset builds and merging.
#[derive(Parser, Debug)]
#[command(name = "shardgraph", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw base and query vectors from a Gaussian mixture
    Synth(SynthArgs),
    /// Train centroids and assign vectors to overlapping subsets
    Partition(PartitionArgs),
    /// Train a product quantizer and encode every vector once
    Quantize(QuantizeArgs),
    /// Assign subset builds to workers (LPT)
    Schedule(ScheduleArgs),
    /// Build one graph per subset
    Build(BuildArgs),
    /// Merge subgraphs into the final graph
    Merge(MergeArgs),
    /// Beam search on a graph, one line of ids per query
    Search(SearchArgs),
    /// Recall and diagnostics of the final graph
    Eval(EvalArgs),
    /// Run every stage
    Pipeline(PipelineArgs),
}

/// Flags shared by every subcommand.
#[derive(Args, Debug)]
struct Common {
    /// `key = value` run configuration; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for artifacts
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    spread: Option<f32>,
    #[arg(long)]
    queries_n: Option<usize>,
}

#[derive(Args, Debug)]
struct PartitionArgs {
    #[command(flatten)]
    common: Common,
    /// Base vectors (.fvecs or .bvecs)
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    omega: Option<u32>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Subset capacity
    #[arg(long)]
    gamma: Option<usize>,
    /// Target subset count, used when no capacity is given
    #[arg(long)]
    subsets: Option<usize>,
    #[arg(long)]
    sample_size: Option<usize>,
    #[arg(long)]
    kmeans_iters: Option<usize>,
    /// Output plan file
    #[arg(long)]
    plan: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct QuantizeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Subspaces
    #[arg(long)]
    pq_m: Option<usize>,
    /// Codewords per subspace
    #[arg(long)]
    pq_ks: Option<usize>,
}

#[derive(Args, Debug)]
struct ScheduleArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    plan: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GraphArgs {
    /// Maximum out-degree
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    l_build: Option<usize>,
    #[arg(long)]
    alpha: Option<f32>,
}

#[derive(Args, Debug)]
struct BuildArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Directory for subgraph files
    #[arg(long)]
    graphs: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MergeArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long)]
    graphs: Option<PathBuf>,
    /// Final graph file
    #[arg(long)]
    out: Option<PathBuf>,
    /// Bytes allowed per merge
    #[arg(long)]
    memory_budget: Option<u64>,
}

#[derive(Args, Debug)]
struct SearchArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Query vectors
    #[arg(long)]
    query: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    beam: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    query: Option<PathBuf>,
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    /// Comma-separated beam widths
    #[arg(long)]
    beams: Option<String>,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    query: Option<PathBuf>,
    #[arg(long)]
    omega: Option<u32>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    gamma: Option<usize>,
    #[arg(long)]
    pq_m: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SHARDGRAPH_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
