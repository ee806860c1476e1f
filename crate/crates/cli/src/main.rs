//! `wproc`: command-line front end for unsupervised orthogonal alignment.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use wproc::ErrorClass;

use manifest::{default_manifest_path, RunManifest, Timer};

/// Exit codes, one per failure class.
pub mod exit {
    pub const OK: u8 = 0;
    pub const INTERNAL: u8 = 1;
    pub const IO: u8 = 2;
    pub const PARSE: u8 = 3;
    pub const CONFIG: u8 = 4;
    pub const NUMERIC: u8 = 5;
    pub const EMPTY_RESULT: u8 = 6;
}

#[derive(Debug, Parser, Serialize)]
#[command(name = "wproc", version, about = "Unsupervised orthogonal alignment of two embedding sets")]
pub struct Cli {
    /// Worker threads for data-parallel sections; 1 gives bit-reproducible runs.
    #[arg(long, global = true, env = "WPROC_THREADS")]
    pub threads: Option<usize>,

    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Where to write the run manifest (default: next to the first output).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Convex-relaxation initial map from the most frequent words.
    Init(InitCmd),
    /// Stochastic alignment (or a supervised fit with --supervised).
    Align(AlignCmd),
    /// Mutual-nearest-neighbor refinement of a map.
    Refine(RefineCmd),
    /// Top-k translations per source word as TSV.
    Translate(TranslateCmd),
    /// Precision@k against a bilingual lexicon.
    Eval(EvalCmd),
    /// Write a synthetic instance with known rotation and correspondence.
    Synth(SynthCmd),
    /// 2-D PCA coordinates of both (aligned) sets as CSV.
    Plot(PlotCmd),
    /// Accuracy and time of the alignment across batch sizes.
    BenchBatchSize(BenchCmd),
    /// Rerun the command recorded in a manifest.
    Replay(ReplayCmd),
}

#[derive(Debug, Args, Serialize)]
pub struct InputArgs {
    /// Source embeddings (.vec, optionally gzipped).
    #[arg(long)]
    pub src: PathBuf,
    /// Target embeddings (.vec, optionally gzipped).
    #[arg(long)]
    pub tgt: PathBuf,
    /// Load at most this many rows from each file.
    #[arg(long)]
    pub max_vocab: Option<usize>,
    /// Comma list of norm / center steps, or "none".
    #[arg(long, default_value = "norm,center,norm")]
    pub preprocess: String,
}

#[derive(Debug, Args, Serialize)]
pub struct FwArgs {
    /// Leading rows of each set in the convex relaxation.
    #[arg(long, default_value_t = 2500)]
    pub fw_size: usize,
    /// Frank-Wolfe iterations.
    #[arg(long, default_value_t = 300)]
    pub fw_iters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MatcherArg {
    /// Hungarian up to batch size 512, Sinkhorn above.
    Auto,
    Hungarian,
    Sinkhorn,
}

#[derive(Debug, Args, Serialize)]
pub struct AlignArgs {
    /// Initial batch size.
    #[arg(long, default_value_t = 500)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 4000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = MatcherArg::Auto)]
    pub matcher: MatcherArg,
    /// Entropic regularization as a fraction of the median batch cost.
    #[arg(long, default_value_t = 0.05)]
    pub sinkhorn_eps: f64,
    #[arg(long, default_value_t = 100)]
    pub sinkhorn_iters: usize,
    /// Keep the batch size fixed instead of doubling at 1/3 and 2/3 of the run.
    #[arg(long)]
    pub no_doubling: bool,
    /// Draw batches from this many leading rows (default min(n, 20000)).
    #[arg(long)]
    pub sample_pool: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InitArg {
    /// Read the starting map from --init-map.
    Map,
    /// Frank-Wolfe convex relaxation.
    Convex,
    /// Random orthogonal map drawn from the seed.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalArg {
    Nn,
    Csls,
    Isf,
}

#[derive(Debug, Args, Serialize)]
pub struct RetrievalArgs {
    #[arg(long, value_enum, default_value_t = RetrievalArg::Csls)]
    pub retrieval: RetrievalArg,
    #[arg(long, default_value_t = 10)]
    pub csls_k: usize,
    #[arg(long, default_value_t = 25.0)]
    pub isf_beta: f64,
    /// Rows of each set considered (default 200000; 20000 for refine).
    #[arg(long)]
    pub candidate_cap: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct InitCmd {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub fw: FwArgs,
    /// Output map.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional CSV of the objective and duality gap per iteration.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AlignCmd {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value_t = InitArg::Convex)]
    pub init: InitArg,
    /// Starting map for --init map.
    #[arg(long)]
    pub init_map: Option<PathBuf>,
    #[command(flatten)]
    pub fw: FwArgs,
    #[command(flatten)]
    pub align: AlignArgs,
    /// Fit Procrustes on this lexicon instead of running the stochastic alignment.
    #[arg(long)]
    pub supervised: Option<PathBuf>,
    /// Output map.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional CSV of the batch loss per iteration.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct RefineCmd {
    #[command(flatten)]
    pub input: InputArgs,
    /// Map to refine.
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    /// Output map.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional CSV of the dictionary size per epoch.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TranslateCmd {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub map: PathBuf,
    /// File with one source word per line (default: every source word).
    #[arg(long)]
    pub words: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    /// Output TSV: query, rank, target, score.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalCmd {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub map: PathBuf,
    /// Gold lexicon, one "source target" pair per line.
    #[arg(long)]
    pub lexicon: PathBuf,
    /// Comma list of precision cutoffs.
    #[arg(long, default_value = "1,5,10")]
    pub ks: String,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    /// Output JSON report.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthCmd {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub d: usize,
    /// Per-coordinate noise standard deviation.
    #[arg(long, default_value_t = 0.0, conflicts_with = "sigma_rel")]
    pub sigma: f64,
    /// Noise standard deviation as a multiple of the mean source row norm.
    #[arg(long)]
    pub sigma_rel: Option<f64>,
    /// Column j of the source set is scaled by exp(-decay * j / d).
    #[arg(long, default_value_t = 0.0)]
    pub decay: f64,
    /// Keep the true correspondence within windows of this many rows.
    #[arg(long)]
    pub locality: Option<usize>,
    /// Directory receiving src.vec, tgt.vec, truth.map and truth.txt.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PlotCmd {
    #[command(flatten)]
    pub input: InputArgs,
    /// Map applied to the source set first (default: none).
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Output CSV: label, set, pc1, pc2.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchCmd {
    #[command(flatten)]
    pub input: InputArgs,
    /// Gold lexicon for precision@1.
    #[arg(long)]
    pub lexicon: PathBuf,
    /// Comma list of initial batch sizes.
    #[arg(long, default_value = "100,200,400,800,1600")]
    pub sizes: String,
    #[arg(long, value_enum, default_value_t = InitArg::Convex)]
    pub init: InitArg,
    #[arg(long)]
    pub init_map: Option<PathBuf>,
    #[command(flatten)]
    pub fw: FwArgs,
    #[command(flatten)]
    pub align: AlignArgs,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    /// Output CSV: batch_size, seconds, precision_at_1.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReplayCmd {
    /// Manifest written by an earlier run.
    pub from: PathBuf,
}

/// What a command produced, for the manifest.
pub struct Outcome {
    pub outputs: Vec<PathBuf>,
    pub summary: serde_json::Value,
    /// Set when outputs were written but the run should still fail.
    pub failure: Option<anyhow::Error>,
}

impl Outcome {
    pub fn ok(outputs: Vec<PathBuf>, summary: serde_json::Value) -> Self {
        Self { outputs, summary, failure: None }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<wproc::Error>() {
            return match e.class() {
                ErrorClass::Io => exit::IO,
                ErrorClass::Parse => exit::PARSE,
                ErrorClass::Config => exit::CONFIG,
                ErrorClass::Numeric => exit::NUMERIC,
                ErrorClass::EmptyResult => exit::EMPTY_RESULT,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return exit::IO;
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return exit::PARSE;
        }
    }
    exit::INTERNAL
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Init(_) => "init",
        Command::Align(_) => "align",
        Command::Refine(_) => "refine",
        Command::Translate(_) => "translate",
        Command::Eval(_) => "eval",
        Command::Synth(_) => "synth",
        Command::Plot(_) => "plot",
        Command::BenchBatchSize(_) => "bench-batch-size",
        Command::Replay(_) => "replay",
    }
}

fn resolve_threads(requested: Option<usize>) -> anyhow::Result<usize> {
    match requested {
        Some(0) => Err(wproc::Error::InvalidConfig("--threads must be ≥ 1".into()).into()),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

fn run(argv: Vec<String>) -> anyhow::Result<()> {
    let mut argv = argv;
    let mut cli = Cli::try_parse_from(&argv).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            let _ = e.print();
            std::process::exit(exit::OK as i32);
        }
        _ => anyhow::Error::new(wproc::Error::InvalidConfig(e.to_string())),
    })?;
    if let Command::Replay(r) = &cli.command {
        let recorded = RunManifest::load(&r.from)?;
        argv = recorded.argv;
        cli = Cli::try_parse_from(&argv).map_err(|e| wproc::Error::InvalidConfig(e.to_string()))?;
        if matches!(cli.command, Command::Replay(_)) {
            return Err(wproc::Error::InvalidConfig("a manifest cannot replay another replay".into()).into());
        }
    }

    let threads = resolve_threads(cli.threads)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| anyhow::anyhow!("thread pool: {e}"))?;

    let mut timer = Timer::default();
    let outcome = commands::dispatch(&cli, &mut timer)?;
    let manifest_path = match (&cli.manifest, outcome.outputs.first()) {
        (Some(p), _) => p.clone(),
        (None, Some(first)) => default_manifest_path(first),
        (None, None) => PathBuf::from("wproc.manifest.json"),
    };
    let manifest = RunManifest {
        tool: "wproc".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command_name(&cli.command).into(),
        argv,
        seed: cli.seed,
        threads,
        config: serde_json::to_value(&cli)?,
        outputs: outcome.outputs,
        summary: outcome.summary,
        timings: timer.into_phases(),
    };
    manifest.write(&manifest_path)?;
    match outcome.failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("wproc: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
