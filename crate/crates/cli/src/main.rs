use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use splsim_core::SimError;

mod commands;

#[derive(Parser, Debug)]
#[command(
    name = "splsim",
    version,
    about = "Single-photon LiDAR timestamp simulation under detector dead time"
)]
pub struct Cli {
    /// key=value parameter file (t_r, t_d, sigma_t, n_cycles, tau, s_level, b_level, n_bins, seed)
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Master random seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of histogram bins K
    #[arg(long, global = true)]
    pub bins: Option<usize>,
    /// Output file or directory, depending on the subcommand
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Log progress to stderr (repeat for more detail)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

/// System parameter overrides.
#[derive(Args, Debug, Clone, Default)]
pub struct SysArgs {
    /// Repetition period t_r
    #[arg(long, allow_negative_numbers = true)]
    pub t_r: Option<f64>,
    /// Dead time t_d
    #[arg(long, allow_negative_numbers = true)]
    pub t_d: Option<f64>,
    /// Pulse width sigma_t
    #[arg(long, allow_negative_numbers = true)]
    pub sigma_t: Option<f64>,
    /// Laser cycles N per acquisition
    #[arg(long)]
    pub n_cycles: Option<u64>,
}

/// Environment overrides.
#[derive(Args, Debug, Clone, Default)]
pub struct EnvArgs {
    /// Round-trip delay tau
    #[arg(long, allow_negative_numbers = true)]
    pub tau: Option<f64>,
    /// Signal level S (photons per cycle)
    #[arg(long, allow_negative_numbers = true)]
    pub s_level: Option<f64>,
    /// Background level B (photons per cycle)
    #[arg(long, allow_negative_numbers = true)]
    pub b_level: Option<f64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate (flux, oracle registration PDF) training pairs
    GenDataset {
        /// Number of pairs
        #[arg(long)]
        n: Option<usize>,
        /// Oracle realizations averaged per label
        #[arg(long, default_value_t = 20)]
        realizations: usize,
        /// 11,000 pairs at K=1024
        #[arg(long)]
        full_scale: bool,
        #[command(flatten)]
        sys: SysArgs,
    },
    /// Train the autoencoder on a dataset file
    Train {
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        /// Default 300, or 5000 with --full-scale
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 16)]
        latent: usize,
        /// Full-scale schedule (5000 epochs); reference held-out RMSE 0.017
        #[arg(long)]
        full_scale: bool,
        /// Per-epoch loss history CSV
        #[arg(long, value_name = "FILE")]
        history: Option<PathBuf>,
    },
    /// Simulate a scene (or one pixel) with either engine
    Simulate {
        #[arg(long, value_enum)]
        engine: EngineArg,
        /// Scene file; without it a single pixel from the environment flags
        #[arg(long, value_name = "FILE")]
        scene: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        #[command(flatten)]
        sys: SysArgs,
        #[command(flatten)]
        env: EnvArgs,
    },
    /// Print the registration count estimate as CSV
    EstimateCount {
        /// Take f_r from this model instead of the oracle histogram
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        /// Oracle realizations for the empirical f_r
        #[arg(long, default_value_t = 1000)]
        realizations: usize,
        #[command(flatten)]
        sys: SysArgs,
        #[command(flatten)]
        env: EnvArgs,
    },
    /// Per-pixel runtime of both engines across cycle counts
    Benchmark {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "100,1000,10000")]
        cycles: Vec<u64>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[command(flatten)]
        sys: SysArgs,
        #[command(flatten)]
        env: EnvArgs,
    },
    /// Emit figure data as CSV
    PlotData {
        #[arg(value_enum)]
        kind: PlotKindArg,
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        /// Oracle realizations (count-hist, pdf-compare)
        #[arg(long, default_value_t = 5000)]
        realizations: usize,
        /// Cycle counts (runtime)
        #[arg(long, value_delimiter = ',', default_value = "100,1000,10000")]
        cycles: Vec<u64>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[command(flatten)]
        sys: SysArgs,
        #[command(flatten)]
        env: EnvArgs,
    },
    /// Depth-map demo on a synthetic ramp scene with both engines
    DepthDemo {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[arg(long, default_value_t = 180)]
        width: usize,
        #[arg(long, default_value_t = 120)]
        height: usize,
        /// Delay at the left edge of the ramp
        #[arg(long, default_value_t = 2.0)]
        near: f64,
        /// Delay at the right edge of the ramp
        #[arg(long, default_value_t = 6.0)]
        far: f64,
        #[arg(long, default_value_t = 1.0)]
        reflectivity: f64,
        #[command(flatten)]
        sys: SysArgs,
        #[command(flatten)]
        env: EnvArgs,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum EngineArg {
    Oracle,
    Fast,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKindArg {
    CountHist,
    PdfCompare,
    Runtime,
}

/// Exit status plus a one-line message.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_VALIDATION: u8 = 3;
pub const EXIT_RUNTIME: u8 = 4;

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let code = match e {
            SimError::Parameter(_)
            | SimError::Shape { .. }
            | SimError::Normalization { .. }
            | SimError::Format(_) => EXIT_VALIDATION,
            SimError::Degenerate(_)
            | SimError::NoPhotons
            | SimError::NonFiniteLoss { .. }
            | SimError::Io(_) => EXIT_RUNTIME,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        SimError::Io(e).into()
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let text = e.to_string();
            let first = text
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("usage error");
            eprintln!("{}", first.trim());
            return ExitCode::from(EXIT_USAGE);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message.replace('\n', " "));
            ExitCode::from(f.code)
        }
    }
}
