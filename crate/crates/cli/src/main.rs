mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Gaussian splatting with object segmentation and localized style transfer.
#[derive(Debug, Parser)]
#[command(name = "objsplat", version)]
struct Cli {
    /// TOML config file; command-line flags take precedence over it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Global seed for synthesis and training [default: 0].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads [default: hardware parallelism].
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (repeat for trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Errors only.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic labeled scene directory.
    Synth(SynthArgs),
    /// Train Gaussians and identity features on a scene directory.
    Train(TrainArgs),
    /// Select an object's Gaussians from a trained checkpoint.
    Select(SelectArgs),
    /// Stylize the selected Gaussians' colors from a style image.
    Stylize(StylizeArgs),
    /// Render a checkpoint to PNG files.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output scene directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of objects, 1 to 15 [default: 3].
    #[arg(long)]
    objects: Option<usize>,
    /// Gaussians per object [default: 40].
    #[arg(long)]
    gaussians_per_object: Option<usize>,
    /// Background floor Gaussians [default: 60].
    #[arg(long)]
    background_gaussians: Option<usize>,
    /// Ring cameras [default: 20].
    #[arg(long)]
    cameras: Option<usize>,
    /// Image width [default: 64].
    #[arg(long)]
    width: Option<u32>,
    /// Image height [default: 64].
    #[arg(long)]
    height: Option<u32>,
    /// SH degree of the generated Gaussians [default: 1].
    #[arg(long)]
    sh_degree: Option<usize>,
    /// Noise added to the points.ply initialization [default: 0.05].
    #[arg(long)]
    perturbation: Option<f32>,
    /// Fraction of mask pixels relabeled at random [default: 0].
    #[arg(long)]
    mask_noise: Option<f32>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Scene directory (cameras.json, images/, optional masks/ and points.ply).
    #[arg(long)]
    scene: PathBuf,
    /// Output checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Training iterations [default: 30000].
    #[arg(long)]
    iters: Option<usize>,
    /// Start from this checkpoint instead of points.ply.
    #[arg(long, value_name = "CKPT")]
    init: Option<PathBuf>,
    /// SH degree when initializing from points.ply [default: 3].
    #[arg(long, default_value_t = 3)]
    sh_degree: usize,
    /// Mask cross-entropy weight [default: 1.0].
    #[arg(long)]
    lambda_ce: Option<f32>,
    /// 3D neighbor-consistency weight [default: 1.0].
    #[arg(long)]
    lambda_3d: Option<f32>,
    /// Neighbors per anchor in the consistency loss [default: 16].
    #[arg(long)]
    knn_k: Option<usize>,
    /// Anchors sampled per iteration [default: 1000].
    #[arg(long)]
    sample_size: Option<usize>,
    /// Write a checkpoint every N iterations [default: off].
    #[arg(long)]
    snapshot_every: Option<usize>,
    /// Drop nearly transparent Gaussians every 1000 iterations [default: off].
    #[arg(long)]
    prune: bool,
    /// Per-iteration JSON-lines log [default: OUT with extension .train.jsonl].
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SelectionArgs {
    /// Object IDs to select, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    object_ids: Vec<u16>,
    /// Minimum class probability [default: 0.6].
    #[arg(long)]
    threshold: Option<f32>,
    /// Neighbors for outlier removal [default: 20].
    #[arg(long)]
    outlier_k: Option<usize>,
    /// Outlier cutoff in standard deviations [default: 2.0].
    #[arg(long)]
    std_factor: Option<f32>,
}

#[derive(Debug, Args)]
struct SelectArgs {
    /// Trained checkpoint.
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    selection: SelectionArgs,
    /// Also write the selection as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScopeArg {
    Scene,
    Selection,
}

#[derive(Debug, Args)]
struct StylizeArgs {
    /// Trained checkpoint.
    #[arg(long)]
    ckpt: PathBuf,
    /// Scene directory providing the cameras.
    #[arg(long)]
    scene: PathBuf,
    /// Output checkpoint.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    selection: SelectionArgs,
    /// Style image.
    #[arg(long)]
    style: PathBuf,
    /// Feature layers, comma separated [default: 11,13,15].
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    /// Style image downscale factor in (0, 1] [default: 1.0].
    #[arg(long)]
    style_scale: Option<f32>,
    /// Learning rate for the SH coefficients [default: 0.05].
    #[arg(long)]
    lr: Option<f32>,
    /// Iterations [default: 800].
    #[arg(long)]
    iters: Option<usize>,
    /// Fraction of training views used [default: 0.25].
    #[arg(long)]
    views_frac: Option<f32>,
    /// VGG-16 weight file (FNET). Seeded random weights when absent.
    #[arg(long, value_name = "FNET")]
    weights: Option<PathBuf>,
    /// Seed for the random extractor weights [default: 0].
    #[arg(long, default_value_t = 0)]
    extractor_seed: u64,
    /// Render the whole scene or only the selection while stylizing [default: scene].
    #[arg(long, value_enum)]
    render_scope: Option<ScopeArg>,
    /// Per-iteration JSON-lines log [default: OUT with extension .style.jsonl].
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("which").args(["camera_index", "orbit"])))]
struct RenderArgs {
    /// Checkpoint to render.
    #[arg(long)]
    ckpt: PathBuf,
    /// Scene directory providing the cameras.
    #[arg(long)]
    scene: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Render only this training camera [default: all of them].
    #[arg(long)]
    camera_index: Option<usize>,
    /// Render N frames on a circle fitted to the training cameras.
    #[arg(long)]
    orbit: Option<usize>,
    /// Background color r,g,b [default: 0,0,0].
    #[arg(long, value_delimiter = ',', num_args = 3)]
    background: Option<Vec<f32>>,
}

fn init_logging(cli: &Cli) {
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else {
        match cli.verbose {
            0 => log::LevelFilter::Info,
            1 => log::LevelFilter::Debug,
            _ => log::LevelFilter::Trace,
        }
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_env("OBJSPLAT_LOG")
        .format_timestamp(None)
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    init_logging(&cli);
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
