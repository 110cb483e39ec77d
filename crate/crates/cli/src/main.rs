use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use geodecomp::dataio::canonical_json;
use geodecomp::{Error, GeometryKind, NoiseMode};
use serde_json::{json, Value};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "geodecomp", version, about = "Geodesic decomposition of labeled embedding sets")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Indented JSON output.
    #[arg(long, global = true)]
    pretty: bool,
    /// Print phase timings to stderr.
    #[arg(long, global = true)]
    timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Weighted intrinsic mean of an embedding file.
    Mean(MeanArgs),
    /// Decompose a labeled embedding set into per-primitive directions.
    Decompose(DecomposeArgs),
    /// Seen/unseen composite classification with a bias sweep.
    Classify(ClassifyArgs),
    /// Per-group accuracy of single-factor predictions.
    Robustness(RobustnessArgs),
    /// Grid search of the noise temperature.
    TuneTemp(TuneArgs),
    /// Generate a synthetic decomposable set.
    Synth(SynthArgs),
    /// Principal-axis coordinates of directions and denoised tuples.
    Project(ProjectArgs),
}

#[derive(Args, Debug, Clone)]
struct GeometryArgs {
    /// Override the geometry stored in the embedding file.
    #[arg(long)]
    geometry: Option<GeometryKind>,
    /// Hyperboloid curvature.
    #[arg(long, default_value_t = 1.0)]
    curvature: f64,
}

#[derive(Args, Debug)]
struct MeanArgs {
    #[arg(long)]
    input: PathBuf,
    /// `uniform` or a text file with one weight per row.
    #[arg(long, default_value = "uniform")]
    weights: String,
    #[command(flatten)]
    geometry: GeometryArgs,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1.0)]
    learning_rate: f64,
    /// Estimate from this many randomly chosen rows.
    #[arg(long)]
    subsample: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Simple,
    Weighted,
    Sparse,
}

#[derive(Args, Debug, Clone)]
struct AnchorArgs {
    /// Anchor embeddings (embedding file) or a decomposition file.
    #[arg(long)]
    anchors: Option<PathBuf>,
    /// Labels of an anchor embedding file.
    #[arg(long)]
    anchor_labels: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DecomposeArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Composition space JSON; derived from the labels when absent.
    #[arg(long)]
    space: Option<PathBuf>,
    #[command(flatten)]
    geometry: GeometryArgs,
    #[arg(long, default_value = "uniform")]
    noise: NoiseMode,
    #[arg(long)]
    temperature: Option<f64>,
    /// Sigmoid bias.
    #[arg(long, default_value_t = geodecomp::noise::DEFAULT_SIGMOID_BIAS, allow_negative_numbers = true)]
    bias: f64,
    #[command(flatten)]
    anchors: AnchorArgs,
    #[arg(long, value_enum, default_value_t = Method::Sparse)]
    method: Method,
    #[arg(long, default_value_t = 1e-5)]
    mean_tol: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum World {
    Closed,
    Open,
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    #[arg(long)]
    decomposition: PathBuf,
    #[arg(long)]
    test_embeddings: PathBuf,
    #[arg(long)]
    test_labels: PathBuf,
    #[arg(long, value_enum, default_value_t = World::Closed)]
    world: World,
    /// Split file naming the seen and test tuples.
    #[arg(long)]
    seen: Option<PathBuf>,
    /// `exact`, `uniform` or a comma-separated list of biases.
    #[arg(long, default_value = "exact", allow_hyphen_values = true)]
    bias_grid: String,
}

#[derive(Args, Debug)]
struct RobustnessArgs {
    #[arg(long)]
    decomposition: PathBuf,
    #[arg(long)]
    test_embeddings: PathBuf,
    #[arg(long)]
    test_labels: PathBuf,
    /// Split file whose `groups` map sample ids to groups; groups default to
    /// the full label tuple.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Factor to predict; the last factor by default.
    #[arg(long)]
    factor: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Objective {
    Auc,
    WorstGroup,
}

#[derive(Args, Debug)]
struct TuneArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    train_labels: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    val_labels: PathBuf,
    #[arg(long)]
    space: Option<PathBuf>,
    #[command(flatten)]
    geometry: GeometryArgs,
    #[command(flatten)]
    anchors: AnchorArgs,
    /// Comma-separated temperatures.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = Objective::Auc)]
    objective: Objective,
    #[arg(long, default_value = "softmax")]
    noise: NoiseMode,
    #[arg(long, default_value_t = geodecomp::noise::DEFAULT_SIGMOID_BIAS, allow_negative_numbers = true)]
    bias: f64,
    /// Split file with test tuples (AUC) or groups (worst group).
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = World::Open)]
    world: World,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out_embeddings: PathBuf,
    #[arg(long)]
    out_labels: PathBuf,
    /// Ground-truth decomposition file.
    #[arg(long)]
    out_truth: Option<PathBuf>,
    /// Split file with observed tuples as seen and hidden tuples as test.
    #[arg(long)]
    out_split: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ProjectWhat {
    Directions,
    Tuples,
    All,
}

#[derive(Args, Debug)]
struct ProjectArgs {
    #[arg(long)]
    decomposition: PathBuf,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=3))]
    dim: u8,
    #[arg(long, value_enum, default_value_t = ProjectWhat::All)]
    what: ProjectWhat,
    #[arg(long)]
    out: PathBuf,
}

/// Phase timings reported on stderr.
pub struct Timer {
    enabled: bool,
    start: Instant,
    last: Instant,
    phases: Vec<(&'static str, f64)>,
}

impl Timer {
    fn new(enabled: bool) -> Self {
        let now = Instant::now();
        Self {
            enabled,
            start: now,
            last: now,
            phases: Vec::new(),
        }
    }

    pub fn lap(&mut self, phase: &'static str) {
        let now = Instant::now();
        self.phases.push((phase, (now - self.last).as_secs_f64()));
        self.last = now;
    }

    fn report(&self) {
        if !self.enabled {
            return;
        }
        let mut s = String::from("timing:");
        for (p, t) in &self.phases {
            s.push_str(&format!(" {p}={t:.3}s"));
        }
        s.push_str(&format!(" total={:.3}s", self.start.elapsed().as_secs_f64()));
        eprintln!("{s}");
    }
}

fn error_context(e: &Error, command: &str) -> Value {
    let mut ctx = match e {
        Error::Structure { hint, .. } => json!({ "hint": hint }),
        Error::Coverage { primitives } => json!({ "primitives": primitives }),
        Error::UnknownPrimitive { factor, name, line } => json!({ "factor": factor, "name": name, "line": line }),
        Error::DegenerateNoise { tuple } | Error::MissingAnchor { tuple } => json!({ "tuple": tuple }),
        Error::Dimension { expected, actual } | Error::Truncation { expected, actual } => {
            json!({ "expected": expected, "actual": actual })
        }
        Error::Data { row, .. } => json!({ "row": row }),
        Error::Alignment { labels, rows } => json!({ "labels": labels, "rows": rows }),
        Error::OracleDivergence { iteration } => json!({ "iteration": iteration }),
        Error::CutLocus { radius } => json!({ "radius": radius }),
        _ => json!({}),
    };
    ctx["command"] = json!(command);
    ctx
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Mean(_) => "mean",
        Command::Decompose(_) => "decompose",
        Command::Classify(_) => "classify",
        Command::Robustness(_) => "robustness",
        Command::TuneTemp(_) => "tune-temp",
        Command::Synth(_) => "synth",
        Command::Project(_) => "project",
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("GEODECOMP_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("GEODECOMP_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    if let Some(msg) = commands::usage_problem(&cli.command) {
        let e = Cli::command().error(ErrorKind::MissingRequiredArgument, msg);
        let _ = e.print();
        return ExitCode::from(2);
    }
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    let name = command_name(&cli.command);
    let mut timer = Timer::new(cli.timing);
    let result = match &cli.command {
        Command::Mean(a) => commands::mean(a, cli.seed, &mut timer),
        Command::Decompose(a) => commands::decompose(a, cli.seed, &mut timer),
        Command::Classify(a) => commands::classify(a, &mut timer),
        Command::Robustness(a) => commands::robustness(a, &mut timer),
        Command::TuneTemp(a) => commands::tune(a, cli.seed, &mut timer),
        Command::Synth(a) => commands::synth(a, cli.seed, &mut timer),
        Command::Project(a) => commands::project(a, &mut timer),
    };
    timer.report();
    match result {
        Ok(v) => match canonical_json(&v, cli.pretty) {
            Ok(s) => {
                print!("{s}");
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e, name, cli.pretty),
        },
        Err(e) => fail(&e, name, cli.pretty),
    }
}

fn fail(e: &Error, command: &str, pretty: bool) -> ExitCode {
    let obj = json!({
        "code": e.code(),
        "message": e.to_string(),
        "context": error_context(e, command),
    });
    let s = canonical_json(&obj, pretty).unwrap_or_else(|_| format!("{obj}\n"));
    print!("{s}");
    eprintln!("error: {e}");
    ExitCode::from(1)
}
