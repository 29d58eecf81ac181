//! `ralu` — mixed-resolution rectified-flow sampling at desk scale.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::Overrides;

/// Exit codes: 0 success, 1 verification failure, 2 config error, 3 IO
/// error.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn verification(message: String) -> Self {
        Self { code: 1, message }
    }
    pub fn config(message: String) -> Self {
        Self { code: 2, message }
    }
    pub fn io(message: String) -> Self {
        Self { code: 3, message }
    }

    pub fn from_core(err: ralu_core::Error) -> Self {
        use ralu_core::Error::*;
        match err {
            Io(_) | Format(_) => Self::io(err.to_string()),
            _ => Self::config(err.to_string()),
        }
    }
}

impl From<ralu_core::Error> for CliError {
    fn from(err: ralu_core::Error) -> Self {
        Self::from_core(err)
    }
}

#[derive(Parser)]
#[command(
    name = "ralu",
    version,
    about = "Region-adaptive latent upsampling for rectified-flow samplers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// TOML configuration file
    #[arg(long, global = false)]
    config: Option<PathBuf>,
    /// Named preset: flux4x, flux7x, sd3-2x, sd3-3x
    #[arg(long)]
    preset: Option<String>,
    /// Base seed (falls back to the config file, then RALU_SEED, then 0)
    #[arg(long)]
    seed: Option<u64>,
    /// Upsampling ratio override
    #[arg(long)]
    ratio: Option<f64>,
    /// Noise-strength override (skips solving for c)
    #[arg(long)]
    c: Option<f64>,
    /// Original-model shift override
    #[arg(long = "h-ori")]
    h_ori: Option<f64>,
    /// Output directory (default: ralu-out)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            config: self.config.clone(),
            preset: self.preset.clone(),
            seed: self.seed,
            ratio: self.ratio,
            c: self.c,
            h_ori: self.h_ori,
            out: self.out.clone(),
            caching: None,
            decoder: None,
            verbose: self.verbose,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve the noise-timestep schedule and export it with density tables
    Schedule {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the three-stage sampler (or the full-resolution baseline)
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Run the single-stage full-resolution baseline instead
        #[arg(long)]
        baseline: bool,
        /// Enable token caching at this ratio on stages 2 and 3
        #[arg(long)]
        caching: Option<f64>,
    },
    /// Statistical verification: injection law, schedule and flow oracles
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Monte-Carlo sample count (minimum 1000)
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        /// Ablation: skip the injection and expect the replication signature
        #[arg(long)]
        skip_injection: bool,
    },
    /// Token counts, token-steps and the parameterized cost breakdown
    Cost {
        #[command(flatten)]
        common: CommonArgs,
        /// Caching ratio used for cached-step token counts
        #[arg(long)]
        caching: Option<f64>,
    },
    /// Decode a latent, detect edges and select top-k patches
    Edges {
        #[command(flatten)]
        common: CommonArgs,
        /// LAT1 latent to decode (default: the built-in target mean field)
        #[arg(long)]
        input: Option<PathBuf>,
        /// Decoder: norm (default) or affine
        #[arg(long)]
        decoder: Option<String>,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Schedule { common } => commands::schedule::run(&common.overrides()),
        Command::Run {
            common,
            baseline,
            caching,
        } => {
            let mut over = common.overrides();
            over.caching = caching;
            commands::run::run(&over, baseline)
        }
        Command::Verify {
            common,
            samples,
            skip_injection,
        } => commands::verify::run(&common.overrides(), samples, skip_injection),
        Command::Cost { common, caching } => {
            let mut over = common.overrides();
            over.caching = caching;
            commands::cost::run(&over)
        }
        Command::Edges {
            common,
            input,
            decoder,
        } => {
            let mut over = common.overrides();
            over.decoder = decoder;
            commands::edges::run(&over, input.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}
