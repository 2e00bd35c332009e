//! Command-line front end for the `pbgdnet` training engine.

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub mod commands;
pub mod dataset;
pub mod training;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] pbgdnet::Error),

    #[error("usage: {0}")]
    Usage(String),

    #[error("gradient check failed for: {0}")]
    GradCheckFailed(String),

    #[error("cannot write output: {0}")]
    Output(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use pbgdnet::Error as E;
        match self {
            CliError::Core(e) => match e.root() {
                E::Config(_) => EXIT_CONFIG,
                E::Numeric(_) => EXIT_NUMERIC,
                _ => EXIT_DATA,
            },
            CliError::Usage(_) => EXIT_CONFIG,
            CliError::GradCheckFailed(_) => EXIT_NUMERIC,
            CliError::Output(_) => EXIT_DATA,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "pbgdnet", version, about = "Train CNN classifiers on arbitrary-sized images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the Square toy dataset as PPM files plus manifest.csv.
    SynthSquare {
        #[arg(long, default_value_t = 2000)]
        count: usize,
        #[arg(long, default_value_t = pbgdnet::config::DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Accuracy and confusion counts of a checkpoint on a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Resize images to HxW first.
        #[arg(long, value_parser = parse_hw)]
        resize: Option<(usize, usize)>,
    },
    /// Write the three residual maps of an image as PGM files.
    ExtractResidual {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use the learnt kernels of this checkpoint instead of the SRM init.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare analytic gradients with central finite differences.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated op names (default: all).
        #[arg(long)]
        ops: Option<String>,
    },
    /// Wall-clock benchmarks.
    Bench {
        #[arg(long, value_enum)]
        mode: BenchMode,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BenchMode {
    UpdateBatch,
    Resolution,
}

pub fn parse_hw(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once('x').ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    match (parse(h)?, parse(w)?) {
        (0, _) | (_, 0) => Err("resize target must be positive".into()),
        hw => Ok(hw),
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::SynthSquare { count, seed, out: dir } => commands::synth_square(count, seed, &dir, out).map(drop),
        Command::Train { config, resume } => training::run_from_file(&config, resume.as_deref(), out).map(drop),
        Command::Eval {
            checkpoint,
            manifest,
            resize,
        } => commands::eval(&checkpoint, &manifest, resize, out).map(drop),
        Command::ExtractResidual {
            image,
            out: dir,
            checkpoint,
        } => commands::extract_residual(&image, &dir, checkpoint.as_deref(), out).map(drop),
        Command::GradCheck { seed, ops } => commands::grad_check(seed, ops.as_deref(), out).map(drop),
        Command::Bench { mode, repeats, seed } => commands::bench(mode, repeats, seed, out).map(drop),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_error_kind() {
        let cfg = CliError::Core(pbgdnet::Error::Config("x".into()));
        assert_eq!(cfg.exit_code(), EXIT_CONFIG);
        assert_eq!(
            CliError::Core(pbgdnet::Error::Numeric("nan".into())).exit_code(),
            EXIT_NUMERIC
        );
        let io = pbgdnet::Error::Io(std::io::Error::other("gone"));
        assert_eq!(CliError::Core(io).exit_code(), EXIT_DATA);
        assert_eq!(CliError::Usage("ops".into()).exit_code(), EXIT_CONFIG);
    }

    #[test]
    fn hw_parsing() {
        assert_eq!(parse_hw("64x48"), Ok((64, 48)));
        assert!(parse_hw("64").is_err());
        assert!(parse_hw("0x4").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
