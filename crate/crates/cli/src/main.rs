//! `trajeval` binary: wires the library pipeline end to end.
//!
//! Every run resolves its options into a manifest written alongside the
//! results, so any output directory documents how it was produced. Exit
//! codes: 0 success, 2 input/configuration error, 3 contract violation,
//! 4 numerical failure.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use trajeval_core::geom::AxisConvention;
use trajeval_core::ingest::HeadingMode;
use trajeval_core::predictors::ControlLimits;
use trajeval_core::{Error, FrameClock, Result, SourceTag, WindowSpec};

#[derive(Parser)]
#[command(
    name = "trajeval",
    version,
    about = "Trajectory prediction evaluation pipeline",
    propagate_version = true
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; all of them land in the manifest.
#[derive(Args, Debug, Clone)]
struct GlobalArgs {
    /// Frame rate of all inputs, Hz.
    #[arg(long, global = true, default_value_t = 20.0)]
    rate_hz: f64,

    /// Prediction horizon, frames.
    #[arg(long, global = true, default_value_t = 30)]
    horizon: usize,

    /// Minimum history frames before the anchor.
    #[arg(long, global = true, default_value_t = 1)]
    min_history: usize,

    /// Maximum history frames before the anchor.
    #[arg(long, global = true, default_value_t = 6)]
    max_history: usize,

    /// Turn-rate clamp for the unicycle predictor, rad/s.
    #[arg(long, global = true, default_value_t = 0.7)]
    max_turn_rate: f64,

    /// Acceleration clamp for the unicycle predictor, m/s^2.
    #[arg(long, global = true, default_value_t = 4.0)]
    max_accel: f64,

    /// Seed for every random draw in the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Convert raw inputs into the canonical 2D state format.
    Ingest(IngestArgs),
    /// Smooth canonical states with the unicycle EKF.
    Smooth(SmoothArgs),
    /// Emit smoothness series and roughness tables for one or more sources.
    Diagnose(DiagnoseArgs),
    /// Slice canonical states into prediction instances.
    Window(WindowArgs),
    /// Run a predictor over prediction instances.
    Predict(PredictArgs),
    /// Window, predict, and score one or more sequences end to end.
    Evaluate(EvaluateArgs),
    /// Generate (optionally corrupted) synthetic tracks from a motion profile.
    Synth(SynthArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum IngestFormat {
    /// KITTI tracking label file (17/18 whitespace-separated columns).
    KittiGt,
    /// Estimator pose file, optionally with a world-centric motion file.
    Estimator,
    /// Canonical state CSV (validated and re-emitted).
    Canonical,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ConventionArg {
    /// Ground plane is camera x (right) and z (forward).
    CameraXz,
    /// Ground plane is world x and y.
    WorldXy,
}

impl From<ConventionArg> for AxisConvention {
    fn from(c: ConventionArg) -> Self {
        match c {
            ConventionArg::CameraXz => AxisConvention::CameraXz,
            ConventionArg::WorldXy => AxisConvention::WorldXy,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum HeadingArg {
    /// Use the label yaw mapped through the camera pose.
    Provided,
    /// Difference headings from consecutive positions.
    Differenced,
}

impl From<HeadingArg> for HeadingMode {
    fn from(h: HeadingArg) -> Self {
        match h {
            HeadingArg::Provided => HeadingMode::Provided,
            HeadingArg::Differenced => HeadingMode::Differenced,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum PredictorArg {
    /// Constant-velocity single integrator.
    Cv,
    /// Dynamically-extended unicycle with clamped controls.
    Unicycle,
    /// External command speaking the instance/prediction exchange format.
    External,
}

impl PredictorArg {
    fn label(self) -> &'static str {
        match self {
            PredictorArg::Cv => "cv",
            PredictorArg::Unicycle => "unicycle",
            PredictorArg::External => "external",
        }
    }
}

#[derive(Args)]
struct IngestArgs {
    /// Input format.
    #[arg(long, value_enum)]
    format: IngestFormat,

    /// Primary input file: labels, pose file, or state CSV.
    #[arg(long)]
    input: PathBuf,

    /// World-centric motion file accompanying an estimator pose file.
    #[arg(long)]
    motion: Option<PathBuf>,

    /// Camera pose file for kitti-gt input; identity camera when absent.
    #[arg(long)]
    camera_poses: Option<PathBuf>,

    /// Planar projection convention.
    #[arg(long, value_enum, default_value_t = ConventionArg::CameraXz)]
    convention: ConventionArg,

    /// Heading channel for ingested tracks.
    #[arg(long, value_enum, default_value_t = HeadingArg::Provided)]
    heading: HeadingArg,

    /// KITTI object type whitelist, e.g. Car,Van. All types when absent.
    #[arg(long, value_delimiter = ',')]
    types: Option<Vec<String>>,

    /// Source tag recorded for canonical input (estimated|gt|gt_ekf|synthetic).
    #[arg(long, default_value = "gt")]
    source_tag: String,

    /// State CSV whose per-object mean speeds calibrate estimator scale.
    #[arg(long)]
    scale_reference: Option<PathBuf>,
}

#[derive(Args)]
struct SmoothArgs {
    /// Canonical state CSV to smooth.
    #[arg(long)]
    input: PathBuf,

    /// key=value filter overrides, one per line; `heading_std=off` drops
    /// the heading measurement.
    #[arg(long)]
    filter_config: Option<PathBuf>,

    /// Source tag of the input rows.
    #[arg(long, default_value = "gt")]
    source_tag: String,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Canonical state CSV; repeat for a cross-source comparison.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,

    /// Label per input (defaults to the file stem); repeat to match --input.
    #[arg(long)]
    label: Vec<String>,

    /// Source tag of the input rows.
    #[arg(long, default_value = "gt")]
    source_tag: String,
}

#[derive(Args)]
struct WindowArgs {
    /// Canonical state CSV to slice.
    #[arg(long)]
    input: PathBuf,

    /// Source tag of the input rows.
    #[arg(long, default_value = "gt")]
    source_tag: String,
}

#[derive(Args)]
struct PredictArgs {
    /// Instance CSV produced by `window`.
    #[arg(long)]
    instances: PathBuf,

    /// Predictor to run.
    #[arg(long, value_enum)]
    predictor: PredictorArg,

    /// Unicycle controls: `fitted` (default) or `accel=A,turn_rate=W`.
    #[arg(long)]
    controls: Option<String>,

    /// Command line for the external predictor; `{instances}` and
    /// `{predictions}` expand to exchange file paths.
    #[arg(long)]
    command: Option<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Canonical state CSV; repeat to evaluate several sequences.
    #[arg(long)]
    input: Vec<PathBuf>,

    /// Sequence label per input (defaults to the file stem).
    #[arg(long)]
    label: Vec<String>,

    /// Directory of state CSVs, one sequence per file (held-out reports).
    #[arg(long, conflicts_with = "input")]
    sequences_dir: Option<PathBuf>,

    /// Predictor to run.
    #[arg(long, value_enum, default_value_t = PredictorArg::Cv)]
    predictor: PredictorArg,

    /// Unicycle controls: `fitted` (default) or `accel=A,turn_rate=W`.
    #[arg(long)]
    controls: Option<String>,

    /// Command line for the external predictor.
    #[arg(long)]
    command: Option<String>,

    /// Source tag of the input rows.
    #[arg(long, default_value = "gt")]
    source_tag: String,

    /// Reference pose file for relative pose error.
    #[arg(long, requires = "rpe_estimate")]
    rpe_reference: Option<PathBuf>,

    /// Estimated pose file for relative pose error.
    #[arg(long, requires = "rpe_reference")]
    rpe_estimate: Option<PathBuf>,

    /// Frame interval for relative pose error.
    #[arg(long, default_value_t = 1)]
    rpe_delta: i64,
}

#[derive(Args)]
struct SynthArgs {
    /// Motion profile file (key=value plus [segment] sections).
    #[arg(long)]
    profile: PathBuf,

    /// Position noise standard deviation, m.
    #[arg(long, default_value_t = 0.0)]
    sigma_pos: f64,

    /// Heading noise standard deviation, rad.
    #[arg(long, default_value_t = 0.0)]
    sigma_heading: f64,
}

/// Options every handler needs, resolved and validated once.
pub(crate) struct RunContext {
    pub clock: FrameClock,
    pub spec: WindowSpec,
    pub limits: ControlLimits,
    pub seed: u64,
    pub out: PathBuf,
}

fn parse_source_tag(raw: &str) -> Result<SourceTag> {
    SourceTag::from_str(raw)
        .map_err(|_| Error::Config(format!("unknown source tag '{raw}'")))
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let ctx = RunContext {
        clock: FrameClock::new(g.rate_hz)?,
        spec: WindowSpec::new(g.min_history, g.max_history, g.horizon)?,
        limits: ControlLimits::new(g.max_turn_rate, g.max_accel)?,
        seed: g.seed,
        out: g.out.clone(),
    };
    std::fs::create_dir_all(&ctx.out).map_err(|e| Error::Io {
        path: ctx.out.display().to_string(),
        source: e,
    })?;

    let mut manifest = manifest::Manifest::new();
    manifest.put("rate_hz", g.rate_hz);
    manifest.put("horizon", g.horizon);
    manifest.put("min_history", g.min_history);
    manifest.put("max_history", g.max_history);
    manifest.put("max_turn_rate", g.max_turn_rate);
    manifest.put("max_accel", g.max_accel);
    manifest.put("seed", g.seed);
    manifest.put("out", g.out.display());

    match cli.command {
        Command::Ingest(args) => commands::ingest(&ctx, manifest, args),
        Command::Smooth(args) => commands::smooth(&ctx, manifest, args),
        Command::Diagnose(args) => commands::diagnose(&ctx, manifest, args),
        Command::Window(args) => commands::window(&ctx, manifest, args),
        Command::Predict(args) => commands::predict(&ctx, manifest, args),
        Command::Evaluate(args) => commands::evaluate(&ctx, manifest, args),
        Command::Synth(args) => commands::synth(&ctx, manifest, args),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
