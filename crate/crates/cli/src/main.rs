//! `dlab`: train, verify, traverse, report and generate.
//!
//! Exit codes: 0 success, 1 runtime or I/O failure, 2 invalid configuration
//! or arguments, 3 training aborted on a non-finite value, 4 verification
//! thresholds not met. `DLAB_THREADS` caps the worker pool.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dlab_core::exec::with_thread_cap;
use dlab_core::verify::{BATTERY_SAMPLES, BATTERY_SIZE};

use commands::{Suite, TraverseArgs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error(transparent)]
    Core(dlab_core::Error),
}

impl From<dlab_core::Error> for CliError {
    fn from(e: dlab_core::Error) -> Self {
        match e {
            dlab_core::Error::Config { field, reason } => CliError::Config { field, reason },
            other => CliError::Core(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use dlab_core::Error as E;
        match self {
            CliError::Config { .. } => 2,
            CliError::Core(E::Diverged { .. } | E::Numeric { .. } | E::NonFinite { .. }) => 3,
            CliError::Core(_) => 1,
        }
    }
}

const VERIFY_UNMET: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "dlab", version, about = "Projection VAE experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model from a JSON run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the verification batteries and write CSV reports.
    Verify {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = BATTERY_SIZE)]
        cases: usize,
        #[arg(long, default_value_t = BATTERY_SAMPLES)]
        samples: usize,
    },
    /// Decode a sweep of one latent coordinate into a PGM strip.
    Traverse {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        coord: usize,
        #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true, default_values_t = [-3.0, 3.0])]
        range: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        /// Index of the dataset image whose encoding fixes the other coordinates.
        #[arg(long, default_value_t = 0, conflicts_with = "zero_anchor")]
        anchor: usize,
        /// Fix the other coordinates at zero instead of at an image's encoding.
        #[arg(long)]
        zero_anchor: bool,
        /// Dataset file; defaults to the one recorded in the checkpoint's run directory.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge the metrics of several runs into one CSV table.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rasterize a synthetic dataset to a DTNS1 file.
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// JSON factor spec; defaults to the standard 256-image grid.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        width: usize,
        #[arg(long, default_value_t = 16)]
        height: usize,
    },
}

fn run(command: Command) -> Result<u8, CliError> {
    match command {
        Command::Train { config, out } => commands::train_run(&config, &out)?,
        Command::Verify {
            suite,
            seed,
            out,
            cases,
            samples,
        } => {
            if !commands::verify_run(suite, seed, cases, samples, &out)? {
                return Ok(VERIFY_UNMET);
            }
        }
        Command::Traverse {
            checkpoint,
            coord,
            range,
            steps,
            anchor,
            zero_anchor,
            dataset,
            out,
        } => commands::traverse_run(&TraverseArgs {
            checkpoint,
            coord,
            range: (range[0], range[1]),
            steps,
            anchor,
            zero_anchor,
            dataset,
            out,
        })?,
        Command::Report { runs, out } => commands::report_run(&runs, &out)?,
        Command::Generate {
            out,
            spec,
            width,
            height,
        } => commands::generate_run(spec.as_deref(), width, height, &out)?,
    }
    Ok(0)
}

fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var("DLAB_THREADS") {
        Ok(v) => v.trim().parse::<usize>().map(Some).map_err(|e| CliError::Config {
            field: "DLAB_THREADS".into(),
            reason: e.to_string(),
        }),
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = thread_cap().and_then(|cap| with_thread_cap(cap, || run(cli.command)));
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn negative_range_parses() {
        let cli = Cli::try_parse_from([
            "dlab", "traverse", "--checkpoint", "c", "--coord", "1", "--range", "-3", "3", "--out", "s.pgm",
        ])
        .unwrap();
        match cli.command {
            Command::Traverse { range, steps, anchor, .. } => {
                assert_eq!(range, vec![-3.0, 3.0]);
                assert_eq!((steps, anchor), (10, 0));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn exit_codes() {
        let diverged = CliError::from(dlab_core::Error::Diverged { epoch: 1, batch: 0 });
        assert_eq!(diverged.exit_code(), 3);
        let cfg = CliError::from(dlab_core::Error::Config {
            field: "x".into(),
            reason: "y".into(),
        });
        assert_eq!(cfg.exit_code(), 2);
        assert_eq!(CliError::from(std::io::Error::other("disk")).exit_code(), 1);
    }
}
