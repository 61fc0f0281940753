//! `moe-pathfinder`: file-in/file-out pipeline for path-based expert pruning.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 invariant
//! violation (including a failed `selfcheck`).

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use moe_pathfinder::{Error, ErrorClass};

#[derive(Parser, Debug)]
#[command(name = "moe-pathfinder", version, about = "Trajectory-driven expert pruning for mixture-of-experts models")]
struct Cli {
    /// Worker threads for per-sample work in score, plan and compare.
    #[arg(long, global = true, env = "MOE_PATHFINDER_JOBS", default_value_t = 1)]
    jobs: usize,

    /// Record this step's inputs, outputs and seed in a pipeline manifest.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a random model.
    GenModel(GenModelArgs),
    /// Generate random input samples for a model.
    GenData(GenDataArgs),
    /// Pick calibration samples by k-means over sample features.
    Calibrate(CalibrateArgs),
    /// Score samples into weighted layered graphs.
    Score(ScoreArgs),
    /// Find the top-m paths through each graph.
    Plan(PlanArgs),
    /// Build a retention mask and the pruned model.
    Prune(PruneArgs),
    /// Reconstruction error of a mask against the full model.
    Eval(EvalArgs),
    /// Per-expert selection counts over path sets, as CSV.
    Heatmap(HeatmapArgs),
    /// Pathfinder mask against random masks over several model seeds.
    Compare(CompareArgs),
    /// Check the top-m DP against brute-force enumeration.
    Selfcheck(SelfcheckArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum NonlinearityArg {
    None,
    Tanh,
}

#[derive(Args, Debug)]
struct GenModelArgs {
    #[arg(long)]
    layers: usize,
    /// Experts per layer.
    #[arg(long)]
    experts: usize,
    /// Hidden dimension.
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    topk: usize,
    #[arg(long, value_enum, default_value = "tanh")]
    nonlinearity: NonlinearityArg,
    #[arg(long)]
    seed: u64,
    /// Output directory.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// Model directory; supplies the hidden dimension.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    samples: usize,
    #[arg(long)]
    tokens: usize,
    #[arg(long)]
    seed: u64,
    /// Output `.tnsr` file.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Number of clusters (calibration samples).
    #[arg(long)]
    k: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = moe_pathfinder::calibration::DEFAULT_MAX_ITERS)]
    max_iters: usize,
    /// Output JSON file.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Score only the calibration samples; all samples otherwise.
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Output directory for `graph{id}.json` and its blobs.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PlanArgs {
    /// Graph JSON files written by `score`.
    #[arg(long, num_args = 1.., required = true)]
    graph: Vec<PathBuf>,
    #[arg(long = "m")]
    m: usize,
    /// Output directory for `paths{id}.json`.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("input").required(true).args(["paths", "graph"])))]
struct PruneArgs {
    #[arg(long)]
    model: PathBuf,
    /// Path sets written by `plan`; their union becomes the mask.
    #[arg(long, num_args = 1.., conflicts_with_all = ["target_retention", "m"])]
    paths: Vec<PathBuf>,
    /// Graphs to plan from; needs `--target-retention` or `--m`.
    #[arg(long, num_args = 1..)]
    graph: Vec<PathBuf>,
    /// Search the smallest m reaching this retained fraction.
    #[arg(long, conflicts_with = "m")]
    target_retention: Option<f64>,
    #[arg(long = "m")]
    m: Option<usize>,
    /// Upper bound for the m search.
    #[arg(long, default_value_t = 1 << 16)]
    m_max: usize,
    /// Output directory: `mask.json`, `report.json`, `model/`.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    /// Output JSON file; stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct HeatmapArgs {
    #[arg(long, num_args = 1.., required = true)]
    paths: Vec<PathBuf>,
    /// Experts per layer (row width).
    #[arg(long)]
    experts: usize,
    /// `layer:expert` cells overwritten with the matrix maximum.
    #[arg(long, value_parser = parse_cell)]
    outlier: Vec<(usize, usize)>,
    /// Output CSV file.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Preset {
    /// L=6, N_e=8, d=32, top-2, 50% retention.
    Desk,
    /// Planted dominant experts, retention 1/N_e.
    Planted,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("experiment").required(true).args(["preset", "config"])))]
struct CompareArgs {
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Experiment configuration JSON; carries its own seeds.
    #[arg(long, conflicts_with_all = ["seed", "models"])]
    config: Option<PathBuf>,
    /// With a preset: data, calibration and random-mask seeds are
    /// `seed`, `seed + 1`, `seed + 2`.
    #[arg(long, required_unless_present = "config")]
    seed: Option<u64>,
    /// With a preset: model seeds `0..models`.
    #[arg(long)]
    models: Option<u64>,
    #[arg(long)]
    no_importance: bool,
    #[arg(long)]
    no_transition: bool,
    /// Output directory: `comparison.csv`, `comparison.json`.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SelfcheckArgs {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long)]
    seed: u64,
}

fn parse_cell(s: &str) -> Result<(usize, usize), String> {
    let (l, i) = s.split_once(':').ok_or_else(|| format!("expected layer:expert, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(l)?, parse(i)?))
}

/// Why a command stopped, mapped onto the exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Core(Error),
    Invariant(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Invariant(_) => 3,
            Failure::Core(e) => match e.class() {
                ErrorClass::Usage => 1,
                ErrorClass::Data => 2,
                ErrorClass::Invariant => 3,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Invariant(m) => f.write_str(m),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.jobs == 0 {
        eprintln!("error: --jobs must be at least 1");
        return ExitCode::from(1);
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {} worker threads: {e}", cli.jobs);
            return ExitCode::from(1);
        }
    };
    match pool.install(|| commands::run(cli.command, cli.manifest.as_deref())) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
