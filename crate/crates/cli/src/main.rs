use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Contrastive trajectory embeddings: data, training, retrieval and evaluation.
#[derive(Debug, Parser)]
#[command(name = "trajlet", version)]
struct Cli {
    /// Worker threads for parallel sections (0 = all cores).
    #[arg(long, global = true, env = "TRAJLET_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labeled synthetic dataset from a JSON spec.
    GenData(GenDataArgs),
    /// Dump the pairwise similarity matrix of a trajectory file as CSV.
    Sim(SimArgs),
    /// Train an encoder with triplet loss.
    Train(TrainArgs),
    /// Embed trajectories into a searchable bank.
    Embed(EmbedArgs),
    /// Nearest-neighbor queries against a bank.
    Query(QueryArgs),
    /// Retrieval metrics of a bank over a query set.
    Eval(EvalArgs),
    /// Non-learned retrieval baselines.
    Baseline(BaselineArgs),
    /// Train and evaluate a grid of configurations.
    Sweep(SweepArgs),
    /// Print the encoder parameter count.
    Params(ParamsArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Replaces the seed of every spec entry.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SimArgs {
    #[arg(long, default_value = "cosine")]
    metric: trajlet::similarity::Metric,
    #[arg(long, default_value_t = trajlet::similarity::DEFAULT_ALPHA)]
    alpha: f64,
    input: PathBuf,
    output: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MiningArg {
    Random,
    Dynamic,
}

#[derive(Debug, Args)]
struct EncoderArgs {
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    d_emb: Option<usize>,
    #[arg(long)]
    max_seq_len: Option<usize>,
    /// `point` or `scalar`.
    #[arg(long)]
    token_layout: Option<trajlet::encoder::TokenLayout>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON file with optional `encoder` and `train` objects; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    metric: Option<trajlet::similarity::Metric>,
    #[command(flatten)]
    encoder: EncoderArgs,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr_max: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Match the cosine positive-pair rate when training with another metric.
    #[arg(long)]
    match_positive_rate: bool,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum)]
    mining: Option<MiningArg>,
    #[arg(long)]
    input_dropout: Option<f64>,
    #[arg(long)]
    attn_dropout: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    /// Checkpoint file or training output directory.
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write `id,label,e0,e1,...` rows for external plotting.
    #[arg(long)]
    emit_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy)]
struct IvfArg {
    nlist: usize,
    nprobe: usize,
}

fn parse_ivf(s: &str) -> Result<IvfArg, String> {
    let (a, b) = s.split_once(',').ok_or("expected NLIST,NPROBE")?;
    let nlist = a.trim().parse().map_err(|_| format!("bad nlist `{a}`"))?;
    let nprobe = b.trim().parse().map_err(|_| format!("bad nprobe `{b}`"))?;
    Ok(IvfArg { nlist, nprobe })
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[arg(long)]
    bank: PathBuf,
    /// Defaults to the checkpoint stored inside the bank directory.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Approximate search as `NLIST,NPROBE`.
    #[arg(long, value_parser = parse_ivf)]
    ivf: Option<IvfArg>,
    /// Seed for the IVF k-means.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long, default_value_t = trajlet::eval::DEFAULT_K)]
    k: usize,
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long)]
    query: PathBuf,
    #[arg(long, default_value_t = trajlet::similarity::DEFAULT_ALPHA)]
    alpha: f64,
    /// Neighbors with distances and input-space similarity scores.
    #[arg(long)]
    emit_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    search: SearchArgs,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Also report leave-one-out label purity of the bank.
    #[arg(long)]
    purity: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BaselineKind {
    Matrix,
    Endpoint,
    Multipoint,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    #[arg(value_enum)]
    kind: BaselineKind,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(short, long, default_value_t = trajlet::eval::DEFAULT_K)]
    k: usize,
    #[arg(long)]
    report: PathBuf,
    /// Waypoints for the multipoint baseline.
    #[arg(long, default_value_t = 4)]
    waypoints: usize,
    /// Save the ADE matrix (matrix baseline).
    #[arg(long)]
    matrix_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ParamsArgs {
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 1)]
    layers: usize,
    #[arg(long, default_value_t = 512)]
    d_model: usize,
    #[arg(long, default_value_t = 16)]
    d_emb: usize,
    #[arg(long, default_value_t = 128)]
    max_seq_len: usize,
    #[arg(long, default_value = "point")]
    token_layout: trajlet::encoder::TokenLayout,
}

/// Exit code per error category; 2 is left to argument errors.
fn exit_code(category: &str) -> u8 {
    match category {
        "data" => 3,
        "divergence" => 4,
        "internal" => 5,
        "config" => 6,
        "retrieval" => 7,
        "format" => 8,
        "io" => 9,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error[config]: {e}");
            return ExitCode::from(exit_code("config"));
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let cat = e.category();
            eprintln!("error[{cat}]: {e}");
            ExitCode::from(exit_code(cat))
        }
    }
}
