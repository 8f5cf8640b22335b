//! `odf`: ODF features, oracle checks, training and evaluation of the mini
//! classifier, glyph and contribution export, and timing.
//!
//! Tables go to stdout as CSV. The config echo, progress and errors go to
//! stderr. Exit codes: 0 success, 1 validation error, 2 computation failure.

mod commands;
mod dataset;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use odf_core::AlignmentMode;
use odf_net::{NetMode, RotationAug};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "odf", version, about = "Orientation distribution function features for point clouds")]
pub struct Cli {
    /// Seed for datasets, training and generated clouds.
    #[arg(long, global = true, default_value_t = 29)]
    pub seed: u64,
    /// Maximum number of parallel workers (all cores when unset).
    #[arg(long, global = true, env = "ODF_WORKERS")]
    pub workers: Option<usize>,
    /// Progress and timing details on stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct BankArgs {
    /// Icosphere tessellation level: 0, 1 or 2 (12, 42 or 162 directions).
    #[arg(long, default_value_t = 1)]
    pub level: u32,
    /// Neighbor ranks used as cone heights.
    #[arg(long, value_delimiter = ',', default_values_t = [8usize, 16, 24, 32])]
    pub ranks: Vec<usize>,
    /// Cone apex half-angles in degrees.
    #[arg(long = "alphas-deg", value_delimiter = ',', default_values_t = [31.71f64, 60.0])]
    pub alphas_deg: Vec<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the canonical direction set as XYZ text.
    Directions {
        #[arg(long, default_value_t = 1)]
        level: u32,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the ODF field of a cloud and write it in binary form.
    Features {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "rixyz")]
        align: AlignmentMode,
        #[command(flatten)]
        bank: BankArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the fast extractor with the brute-force oracle on random clouds.
    OracleCheck {
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long = "min-points", default_value_t = 33)]
        min_points: usize,
        #[arg(long = "max-points", default_value_t = 256)]
        max_points: usize,
        /// Corrupt one fast-path value to confirm mismatches are caught.
        #[arg(long)]
        perturb: bool,
    },
    /// Train the classifier and save a checkpoint.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        ckpt: PathBuf,
        /// Rotation augmentation during training.
        #[arg(long, default_value = "none")]
        rotation: RotationAug,
        #[arg(long = "batch-size", default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        /// Tessellation level of the cone directions.
        #[arg(long, default_value_t = 1)]
        level: u32,
    },
    /// Evaluate a checkpoint and/or produce the rotation-scenario table.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        /// Checkpoint to evaluate.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Train z- and SO(3)-augmented models and print z/z, SO3/SO3, z/SO3.
        #[arg(long)]
        scenarios: bool,
    },
    /// Export ODF glyphs as OBJ line geometry.
    Glyphs {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "rixyz")]
        align: AlignmentMode,
        #[command(flatten)]
        bank: BankArgs,
        /// Glyph for every n-th point.
        #[arg(long, default_value_t = 1)]
        every: usize,
        /// Length of the longest segment of each glyph.
        #[arg(long, default_value_t = 0.05)]
        length: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-point max-pool credit of a trained model, as `index,score` CSV.
    Contrib {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time ODF extraction with one worker and with many.
    Bench {
        #[arg(long, default_value_t = 1024)]
        points: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 1)]
        level: u32,
    },
}

#[derive(Debug, Args, Clone)]
pub struct DataArgs {
    /// `synth`, `synth:key=value,...` or a directory with train/ and test/.
    #[arg(long, default_value = "synth")]
    pub dataset: String,
    #[arg(long, default_value = "standard")]
    pub mode: NetMode,
    #[arg(long, default_value_t = 12)]
    pub epochs: usize,
    /// Voting copies at test time (1 disables voting).
    #[arg(long, default_value_t = 5)]
    pub votes: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", CliError::Validation(first.to_string()).line());
            return ExitCode::from(1);
        }
    };
    eprintln!("config: {}", commands::echo(&cli));
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
