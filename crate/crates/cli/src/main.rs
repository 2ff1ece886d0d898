use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use gazekit::geometry::CropMode;
use gazekit::metrics::PHeadRule;

mod cmd;
mod config;

use config::{FileConfig, UsageError};

/// Gaze analysis from depth: point clouds, field-of-view maps, metrics,
/// annotation statistics and crop-stability audits.
#[derive(Parser, Debug)]
#[command(name = "gazekit", version)]
struct Cli {
    /// TOML file with default values for any long option (kebab-case keys). Flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Lift a depth raster into a camera-frame point cloud (ASCII PLY).
    Unproject(UnprojectArgs),
    /// Render a field-of-view heatmap for one person.
    Fov(FovArgs),
    /// Score predictions against annotations.
    Eval(EvalArgs),
    /// Summarize an annotation file, optionally with inter-annotator agreement.
    Stats(StatsArgs),
    /// Crop-ensemble stability audit of depth-derived gaze vectors.
    Stability(StabilityArgs),
    /// Evaluate the training objective over a file of rows.
    Losses(LossesArgs),
}

#[derive(Args, Debug)]
pub struct UnprojectArgs {
    /// GPDM or 16-bit PGM depth raster.
    #[arg(long)]
    pub depth: PathBuf,
    /// Intrinsics sidecar (default: raster path with a .json extension).
    #[arg(long)]
    pub intrinsics: Option<PathBuf>,
    /// Output PLY file.
    #[arg(long)]
    pub out: PathBuf,
    /// Write the JSON summary here instead of stdout.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("direction").required(true).args(["gaze", "gaze_target", "gaze2d"])))]
pub struct FovArgs {
    #[arg(long)]
    pub depth: PathBuf,
    #[arg(long)]
    pub intrinsics: Option<PathBuf>,
    /// Eye pixel `x,y`; the head pixel in cone mode.
    #[arg(long, value_parser = cmd::parse_pixel)]
    pub eye: (usize, usize),
    /// Unit gaze `x,y,z` in the eye frame.
    #[arg(long, value_parser = cmd::parse_vec3, allow_hyphen_values = true, conflicts_with = "cone")]
    pub gaze: Option<[f64; 3]>,
    /// Pixel `x,y` the person looks at; the gaze is derived from depth.
    #[arg(long, value_parser = cmd::parse_pixel, conflicts_with = "cone")]
    pub gaze_target: Option<(usize, usize)>,
    /// Planar cone without depth decay instead of the 3D field.
    #[arg(long, requires = "gaze2d")]
    pub cone: bool,
    /// Unit image-plane direction `dx,dy` for cone mode.
    #[arg(long, value_parser = cmd::parse_vec2, allow_hyphen_values = true, requires = "cone")]
    pub gaze2d: Option<(f64, f64)>,
    /// Output GPDM raster (invalid pixels are NaN).
    #[arg(long)]
    pub out: PathBuf,
    /// Optional 8-bit PGM preview.
    #[arg(long)]
    pub preview: Option<PathBuf>,
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Annotation JSON Lines.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Prediction JSON Lines keyed by `video/clip/frame/person`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Head detections JSON Lines; P.Head is omitted without them.
    #[arg(long)]
    pub heads: Option<PathBuf>,
    #[arg(long, conflicts_with = "only_adults")]
    pub only_children: bool,
    #[arg(long)]
    pub only_adults: bool,
    /// AUC positive radius in heatmap cells.
    #[arg(long)]
    pub auc_radius: Option<f64>,
    #[arg(long)]
    pub phead_rule: Option<PHeadRule>,
    /// JSON report path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Text table path.
    #[arg(long)]
    pub text: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    /// Head detections JSON Lines (default: annotated head boxes).
    #[arg(long)]
    pub heads: Option<PathBuf>,
    /// Second annotation pass over the same frames, for agreement scores.
    #[arg(long)]
    pub second_pass: Option<PathBuf>,
    #[arg(long)]
    pub gt_sigma: Option<f64>,
    #[arg(long)]
    pub hm_size: Option<usize>,
    #[arg(long)]
    pub auc_radius: Option<f64>,
    #[arg(long)]
    pub phead_rule: Option<PHeadRule>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StabilityArgs {
    /// Manifest JSON Lines, one image per line.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub mode: Option<CropMode>,
    /// Crops per image.
    #[arg(long)]
    pub crops: Option<usize>,
    #[arg(long)]
    pub min_area_fraction: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct LossesArgs {
    /// Rows of `g_p`, `g_gt`, `pred_heatmap`, `gaze_point`, `o_p`, `o_gt`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub lambda_hm: Option<f64>,
    #[arg(long)]
    pub lambda_dir: Option<f64>,
    #[arg(long)]
    pub lambda_io: Option<f64>,
    #[arg(long)]
    pub gt_sigma: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Result of a command that did not fail.
pub enum Outcome {
    Done,
    /// Completed, but the output is probably not what the user wanted.
    Warning(String),
}

const EXIT_DATA: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_WARNING: u8 = 3;

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    if let Some(n) = cli.threads.or(file.threads) {
        if n == 0 {
            return Err(UsageError("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Unproject(a) => cmd::unproject(&a),
        Command::Fov(a) => cmd::fov(&a),
        Command::Eval(a) => cmd::eval(&a, &file),
        Command::Stats(a) => cmd::stats(&a, &file),
        Command::Stability(a) => cmd::stability(&a, &file, seed),
        Command::Losses(a) => cmd::losses(&a, &file),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Warning(msg)) => {
            eprintln!("warning: {msg}");
            ExitCode::from(EXIT_WARNING)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::from(EXIT_DATA)
            }
        }
    }
}
