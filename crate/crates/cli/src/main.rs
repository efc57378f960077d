mod bench;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Build, search and evaluate spilled IVF indices for inner-product search.
///
/// Every subcommand accepts `--config FILE` with `key=value` lines; flags on
/// the command line take precedence.
#[derive(Parser, Debug)]
#[command(name = "soar", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a Gaussian-mixture dataset as fvecs
    Synth(SynthArgs),
    /// Train and write an index
    Build(BuildArgs),
    /// Query an index
    Search(SearchArgs),
    /// Recall / datapoints sweeps over probe counts, plus k-means recall targets
    Bench(BenchArgs),
    /// Export per (query, neighbor) residual statistics
    Diagnose(DiagnoseArgs),
    /// Monte-Carlo check of the spilled-assignment loss and residual correlation
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub d: usize,
    #[arg(long, default_value_t = 100)]
    pub clusters: usize,
    /// Per-coordinate noise standard deviation
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f32,
    /// Scale coordinate j by (j + 1)^-decay after sampling
    #[arg(long, default_value_t = 0.0)]
    pub decay: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scale every row to unit norm
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true")]
    pub normalize: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Also sample this many queries from the same mixture
    #[arg(long, requires = "queries_out")]
    pub queries: Option<usize>,
    #[arg(long, requires = "queries")]
    pub queries_out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyArg {
    None,
    Naive,
    Soar,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct BuildArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Partitions; defaults to n/400 (at least 2)
    #[arg(long)]
    pub c: Option<usize>,
    #[arg(long, value_enum, default_value_t = PolicyArg::Soar)]
    pub policy: PolicyArg,
    /// SOAR weight; defaults to 1.0, only valid with --policy soar
    #[arg(long)]
    pub lambda: Option<f32>,
    /// Dimensions per PQ subspace
    #[arg(long, default_value_t = 2)]
    pub s: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = soar::kmeans::DEFAULT_MAX_ITERS)]
    pub kmeans_iters: usize,
    /// PQ training sample size; 0 trains on every residual
    #[arg(long, default_value_t = soar::index::DEFAULT_PQ_TRAIN_LIMIT)]
    pub pq_train_limit: usize,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct SearchArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = 8)]
    pub probes: usize,
    /// Candidates reranked exactly; defaults to max(10k, 100)
    #[arg(long)]
    pub rerank: Option<usize>,
    /// Stop probing before exceeding this many posting entries
    #[arg(long)]
    pub budget: Option<usize>,
    /// CSV output; stdout when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct BenchArgs {
    /// One or more index files, comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    pub index: Vec<PathBuf>,
    #[arg(long)]
    pub queries: PathBuf,
    /// Ground-truth ids as ivecs, at least k per query
    #[arg(long, conflicts_with = "exact")]
    pub gt: Option<PathBuf>,
    /// Compute ground truth by brute force, cached beside the queries
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true")]
    pub exact: bool,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Probe counts; defaults to powers of two up to c, then c
    #[arg(long, value_delimiter = ',')]
    pub probes: Option<Vec<usize>>,
    /// Candidates reranked exactly; defaults to every candidate
    #[arg(long)]
    pub rerank: Option<usize>,
    /// Sweep CSV; stdout when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Recall-target CSV; stdout when omitted
    #[arg(long)]
    pub kmr_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = soar::eval::DEFAULT_DIAGNOSTICS_K)]
    pub k: usize,
    /// Per-record CSV
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 32)]
    pub d: usize,
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 1.0, 2.0])]
    pub lambda: Vec<f32>,
    /// Random (r, candidate pair) instances per λ
    #[arg(long, default_value_t = 10)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Maximum relative error of loss ratios
    #[arg(long, default_value_t = 0.02)]
    pub tolerance: f64,
    /// Maximum absolute correlation error
    #[arg(long, default_value_t = 0.005)]
    pub lemma_tolerance: f64,
}

/// Errors reported with exit code 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn main() -> ExitCode {
    let args = match config::expand_args(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Build(a) => commands::build(&a),
        Command::Search(a) => commands::search(&a),
        Command::Bench(a) => bench::bench(&a),
        Command::Diagnose(a) => commands::diagnose(&a),
        Command::Verify(a) => commands::verify(&a),
    };
    match result {
        Ok(commands::Outcome::Ok) => ExitCode::SUCCESS,
        Ok(commands::Outcome::VerificationFailed) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
