//! `drc`: shape generation, rendering, fitting, fusion, evaluation and
//! gradient checks for differentiable ray consistency.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 failed
//! check. `DRC_THREADS` sets the worker thread count.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drc::defaults;
use drc::renderer::ShapeName;
use drc::ObservationKind;

pub const THREADS_ENV: &str = "DRC_THREADS";

#[derive(Debug, Parser)]
#[command(name = "drc", version, about = "Differentiable ray consistency for voxel grids")]
pub struct Cli {
    /// Sequential, fixed-order reductions everywhere (bitwise reproducible).
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a procedural ground-truth shape with color and part payloads.
    Shape(ShapeArgs),
    /// Render observation bundles of a grid from random views.
    Render(RenderArgs),
    /// Fit an occupancy grid (and payload) to observation bundles.
    Fit(FitArgs),
    /// Fuse depth bundles into a count-based soft occupancy grid.
    Fuse(FuseArgs),
    /// IoU of a predicted grid against ground truth at the best threshold.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Shape, render, fit and fuse, then tabulate IoU per supervision setting.
    Repro(ReproArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

fn seed_parser() -> clap::builder::RangedU64ValueParser {
    clap::value_parser!(u64).range(..=i64::MAX as u64)
}

#[derive(Debug, Args)]
pub struct ShapeArgs {
    /// sphere, cuboid or chair_like.
    #[arg(long)]
    pub name: ShapeName,
    #[arg(long, default_value_t = defaults::GRID_DIM)]
    pub dims: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Ground-truth grid; soft grids are occupied where x < 0.5.
    #[arg(long)]
    pub grid: PathBuf,
    /// Grid carrying the color or class payload (needed for color and
    /// depth_semantics).
    #[arg(long)]
    pub aux: Option<PathBuf>,
    #[arg(long, default_value_t = defaults::NUM_VIEWS)]
    pub views: usize,
    #[arg(long, default_value = "depth")]
    pub kind: ObservationKind,
    /// Maximum uniform depth noise in meters.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0, value_parser = seed_parser())]
    pub seed: u64,
    #[arg(long, default_value_t = defaults::IMAGE_SIZE)]
    pub image_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct GeometryArgs {
    /// Copy the geometry of this grid file.
    #[arg(long, conflicts_with_all = ["dims", "bounds"])]
    pub like: Option<PathBuf>,
    /// `n` or `nx,ny,nz`.
    #[arg(long, default_value = "32")]
    pub dims: String,
    /// `xmin,ymin,zmin,xmax,ymax,zmax` in meters.
    #[arg(long, default_value = "-0.5,-0.5,-0.5,0.5,0.5,0.5", allow_hyphen_values = true)]
    pub bounds: String,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// A bundle directory or a directory of bundles.
    #[arg(long)]
    pub obs: PathBuf,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    /// Defaults to the kind recorded in the bundles.
    #[arg(long)]
    pub kind: Option<ObservationKind>,
    /// Use only the first N bundles.
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long, default_value_t = defaults::ITERATIONS)]
    pub iterations: usize,
    #[arg(long, default_value_t = defaults::RAYS_PER_ITER)]
    pub rays: usize,
    #[arg(long, default_value_t = defaults::STEP_SIZE)]
    pub step_size: f64,
    #[arg(long, default_value_t = defaults::FOREGROUND_WEIGHT)]
    pub foreground_weight: f64,
    #[arg(long, default_value_t = 0, value_parser = seed_parser())]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub obs: PathBuf,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    /// Soft grids are occupied where x < 0.5.
    #[arg(long)]
    pub gt: PathBuf,
    /// Also write the report and the threshold curve here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// mask, depth, depth_semantics, color or all.
    #[arg(long, default_value = "all")]
    pub kind: String,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0, value_parser = seed_parser())]
    pub seed: u64,
    /// Scale every analytic derivative by 1 + EPS.
    #[arg(long, hide = true)]
    pub inject_fault: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReproArgs {
    #[arg(long, value_delimiter = ',', default_value = "sphere,chair_like")]
    pub shapes: Vec<ShapeName>,
    #[arg(long, default_value_t = defaults::GRID_DIM)]
    pub dims: usize,
    #[arg(long, default_value_t = defaults::NUM_VIEWS)]
    pub views: usize,
    #[arg(long, default_value_t = defaults::IMAGE_SIZE)]
    pub image_size: usize,
    #[arg(long, default_value_t = defaults::NOISE_MAX)]
    pub noise: f64,
    #[arg(long, default_value_t = 1, value_parser = seed_parser())]
    pub seed: u64,
    #[arg(long, default_value_t = defaults::ITERATIONS)]
    pub iterations: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded location.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = commands::configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(e.code());
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
