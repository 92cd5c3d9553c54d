//! `accessnet` command-line driver.
//!
//! Exit codes: 0 success, 1 a checked property failed, 2 bad arguments or
//! configuration, 3 malformed or mismatched input, 4 resource budget exceeded,
//! 5 training diverged.

mod commands;
mod config;
mod geometry;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use accessnet::image::Slice;
use accessnet::Error;

use crate::geometry::SharpSpec;

#[derive(Parser)]
#[command(
    name = "accessnet",
    version,
    about = "Collision and inaccessibility measure fields and their neural representation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct GeometryArgs {
    /// Part occupancy (VOXF).
    #[arg(long)]
    pub obstacle: PathBuf,
    /// Fixture occupancy (VOXF) on the part's lattice.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// Tool occupancy (VOXF).
    #[arg(long)]
    pub tool: PathBuf,
    /// `tip`, or `;`-separated voxel indices such as `0,0;1,0`.
    #[arg(long, default_value = "tip")]
    pub sharp: SharpSpec,
    /// Tool rotation resampling: nearest, multilinear or threshold.
    #[arg(long, default_value = "nearest")]
    pub resample: String,
    /// Largest padded FFT array, in elements.
    #[arg(long)]
    pub max_fft_elements: Option<usize>,
    /// Largest number of voxel-pair visits for `--oracle`.
    #[arg(long)]
    pub brute_force_budget: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a stack of CMF cross-sections at equispaced orientations.
    ComputeCmf {
        #[command(flatten)]
        geometry: GeometryArgs,
        #[arg(long)]
        theta_count: usize,
        /// Polar angle count; makes the orientations spatial.
        #[arg(long)]
        phi_count: Option<usize>,
        /// Use direct overlap counting instead of the FFT.
        #[arg(long)]
        oracle: bool,
        /// Output directory for sections and manifest.
        #[arg(long)]
        out: PathBuf,
    },
    /// Pointwise minimum over a stack.
    Imf {
        /// Manifest file or the directory holding it.
        #[arg(long)]
        stack: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write a grayscale PNG.
        #[arg(long)]
        png: Option<PathBuf>,
        /// Slice of a 3D field for the PNG, as axis=index.
        #[arg(long)]
        slice: Option<Slice>,
    },
    /// Compare two fields on the same lattice.
    Compare {
        #[arg(long)]
        lhs: PathBuf,
        #[arg(long)]
        rhs: PathBuf,
        /// Exit with status 1 unless lhs <= rhs everywhere.
        #[arg(long)]
        expect_le: bool,
    },
    /// Train a network on one stack.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train coarse then fine.
    TrainMultires {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune an existing model on the configured geometry.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        /// Model to start from; overrides `base_model` in the configuration.
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a model against exact fields.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        geometry: GeometryArgs,
        #[command(flatten)]
        targets: TargetArgs,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reconstruct a dense planar stack from sparse knots with each method.
    CompareBaselines {
        #[command(flatten)]
        geometry: GeometryArgs,
        #[arg(long, default_value_t = 36)]
        knots: usize,
        #[arg(long, default_value_t = 144)]
        targets: usize,
        /// Trained model for the DNN row; trains one when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        net: InlineNetArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a built-in geometry as VOXF.
    Fixture {
        #[arg(long, value_parser = commands::FIXTURE_NAMES)]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and score one network per grid cell.
    Ablation {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        densities: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        widths: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        depths: Vec<usize>,
        #[command(flatten)]
        targets: TargetArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
pub struct TargetArgs {
    #[arg(long, default_value_t = 0.0)]
    pub in_theta: f64,
    #[arg(long, default_value_t = 0.0)]
    pub in_phi: f64,
    #[arg(long, default_value_t = 12.0)]
    pub out_theta: f64,
    #[arg(long, default_value_t = 6.0)]
    pub out_phi: f64,
    /// IMF orientation sets, comma-separated: `N` azimuths, or `NxM` azimuths by
    /// polar angles. Defaults to 36,144 in 2D and 15x15,25x25 in 3D.
    #[arg(long, value_delimiter = ',')]
    pub imf_sets: Vec<String>,
}

#[derive(Args, Clone)]
pub struct InlineNetArgs {
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Range { .. } => 2,
        Error::Format { .. } | Error::Structure { .. } | Error::Io { .. } => 3,
        Error::Resource(_) => 4,
        Error::Training(_) => 5,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
