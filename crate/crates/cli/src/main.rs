mod commands;
mod manifest;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use efps_core::networks::Ablation;
use efps_core::synthgen::SceneKind;

#[derive(Parser, Debug)]
#[command(name = "efps", version, about = "Event-fused photometric stereo toolkit")]
struct Cli {
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long, global = true, env = "EFPS_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic capture: frames, events, lights and ground truth.
    GenData(GenDataArgs),
    /// Build per-pixel observation maps from a dataset directory.
    Obsmap(ObsmapArgs),
    /// Train a network on observation-map files.
    Train(TrainArgs),
    /// Score a checkpoint on labeled observation-map files.
    Eval(EvalArgs),
    /// Write normal-map and error-map images.
    RenderNormals(RenderArgs),
    /// Calibration utilities.
    #[command(subcommand)]
    Calib(CalibCommand),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub scene: SceneKind,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u32).range(2..))]
    pub frames: u32,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 0.15)]
    pub ambient: f64,
    /// Event contrast threshold (log units).
    #[arg(long, default_value_t = 0.15)]
    pub contrast: f64,
    /// Seconds between frames.
    #[arg(long)]
    pub frame_period: Option<f64>,
    #[arg(long, default_value_t = 8)]
    pub substeps: usize,
}

#[derive(Args, Debug)]
pub struct ObsmapArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub m: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Event voxel scale.
    #[arg(long, default_value_t = 5.0)]
    pub lambda: f64,
    /// Time bins per event window.
    #[arg(long, default_value_t = 5)]
    pub bins: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// OBS1 files; labels come from the `.nrm1` file beside each.
    #[arg(long, required = true, num_args = 1..)]
    pub obs: Vec<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss log; defaults to the checkpoint path with extension `loss.csv`.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    #[arg(long)]
    pub ablation: Option<Ablation>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Config overrides as `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub obs: Vec<PathBuf>,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// CSV report path.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Directory for predicted `<object>.pred.nrm1` files.
    #[arg(long)]
    pub pred_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Predicted normals (NRM1).
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth normals (NRM1) for the error map.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub out_png: PathBuf,
    /// Error-map path; defaults to `<out-png stem>_error.png`.
    #[arg(long)]
    pub error_png: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum CalibCommand {
    /// Undistort (or with --invert, distort) pixel coordinates read as `u,v` lines.
    Undistort {
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        invert: bool,
    },
    /// Map RGB pixels to event-camera pixels through the board plane.
    Transfer {
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        points: PathBuf,
    },
    /// Recover the light direction from a chrome-ball frame.
    Light {
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        frame: PathBuf,
        #[arg(long)]
        ball_mask: PathBuf,
        /// Ball center in camera coordinates, `x,y,z`.
        #[arg(long, value_delimiter = ',', num_args = 3, allow_negative_numbers = true)]
        center: Vec<f64>,
        #[arg(long)]
        radius: f64,
        #[arg(long, default_value_t = 0.95)]
        threshold: f32,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("usage error");
            eprintln!("efps: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    let result = efps_core::par::init_threads(cli.threads)
        .map_err(anyhow::Error::from)
        .and_then(|()| match &cli.command {
            Command::GenData(a) => commands::gen_data(a),
            Command::Obsmap(a) => commands::obsmap(a),
            Command::Train(a) => commands::train(a),
            Command::Eval(a) => commands::eval(a),
            Command::RenderNormals(a) => commands::render_normals(a),
            Command::Calib(c) => commands::calib(c),
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("efps: {msg}");
            ExitCode::FAILURE
        }
    }
}
