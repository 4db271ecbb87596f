//! `locc-blocks`: run, sample or verify an LOCC block-unitary protocol from
//! a JSON config, or run the built-in verification grid.
//!
//! Exit status: 0 when everything verifies, 1 on a verification failure,
//! 2 on a configuration or usage error.

mod config;
mod report;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use locc_blocks::protocol::CorrectionOrder;
use locc_blocks::selftest::{self, Grid, SelftestOptions};

use config::{Mode, Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "locc-blocks", version, about)]
struct Args {
    /// JSON run configuration.
    #[arg(long, value_name = "PATH", required_unless_present = "selftest")]
    config: Option<PathBuf>,

    /// Overrides the config's mode (default: verify).
    #[arg(long, value_enum)]
    mode: Option<Mode>,

    /// Overrides the config's seed (default: 0).
    #[arg(long)]
    seed: Option<u64>,

    /// Where to write the JSON report (default: stdout for runs, nowhere for
    /// --selftest).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Run the full verification grid instead of a config.
    #[arg(long, conflicts_with = "config")]
    selftest: bool,

    /// Restricts the --selftest grid, e.g. "n=1,2;m=1;cases=10".
    #[arg(long, value_name = "SPEC", requires = "selftest")]
    grid: Option<String>,

    /// Swaps Alice's step-5 corrections, to check that verification notices.
    #[arg(long, hide = true)]
    corrupt_correction_order: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: io::Error },
    #[error("verification failed: {0}")]
    Verification(String),
    #[error(transparent)]
    Library(#[from] locc_blocks::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 1,
            _ => 2,
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = if args.selftest {
        run_selftest(&args)
    } else {
        run_config(&args)
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("locc-blocks: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn write_json<T: serde::Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    match out {
        Some(path) => fs::write(path, text).map_err(|source| CliError::Output {
            path: path.to_path_buf(),
            source,
        }),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|source| CliError::Output {
                path: PathBuf::from("<stdout>"),
                source,
            }),
    }
}

fn run_config(args: &Args) -> Result<(), CliError> {
    let path = args.config.as_deref().expect("clap enforces --config");
    let mut cfg = RunConfig::load(
        path,
        Overrides {
            mode: args.mode,
            seed: args.seed,
            out: args.out.clone(),
        },
    )?;
    if args.corrupt_correction_order {
        cfg.options.correction_order = CorrectionOrder::ZFirst;
    }

    let report = report::run(&cfg)?;
    write_json(&report, cfg.output.as_deref())?;

    let s = &report.summary;
    eprintln!(
        "{} {} seed={}: {} branches, {} failed, total probability {:.12}, max amplitude error {:.2e}",
        report.protocol,
        report.mode,
        report.seed,
        s.branches,
        s.failed,
        s.total_probability,
        s.max_amplitude_error
    );
    eprintln!("resources per run: {}", report.resources);

    match report.first_failure() {
        None => Ok(()),
        Some((branch, why)) => {
            let bits: String = branch.report.bits.iter().map(|b| char::from(b'0' + b)).collect();
            Err(CliError::Verification(format!(
                "{} branch {bits}: {why}",
                report.protocol
            )))
        }
    }
}

fn run_selftest(args: &Args) -> Result<(), CliError> {
    let grid: Grid = match &args.grid {
        Some(spec) => spec.parse().map_err(|e| CliError::Config(format!("grid: {e}")))?,
        None => Grid::default(),
    };
    let opts = SelftestOptions {
        seed: args.seed.unwrap_or(0),
        grid,
        corrupt_correction_order: args.corrupt_correction_order,
    };
    let report = selftest::run(&opts);
    for c in &report.criteria {
        println!("{c}");
    }
    if let Some(out) = &args.out {
        write_json(&report, Some(out))?;
    }
    let max_error = report
        .criteria
        .iter()
        .filter(|c| c.id != 6)
        .map(|c| c.max_error)
        .fold(0.0, f64::max);
    println!("max amplitude error across criteria: {max_error:.2e}");

    match report.first_failure() {
        None => {
            println!("selftest passed");
            Ok(())
        }
        Some(c) => Err(CliError::Verification(format!(
            "criterion {} ({}): {}",
            c.id,
            c.title,
            c.failure.as_deref().unwrap_or("failed")
        ))),
    }
}
