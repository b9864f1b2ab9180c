//! `bertrand-logit <solve|verify|sample>`.
//!
//! Exit codes: 0 success, 1 a verification check failed, 2 inadmissible
//! market, 3 non-convergence or failed certification, 4 I/O, parse or
//! invalid-input error.

mod io;
mod sample;
mod solve;
mod verify;

use std::process::ExitCode;

use anyhow::{Context, Result};
use bertrand_logit::Error;
use clap::{Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "bertrand-logit", version, about = "Bertrand-Nash prices for multi-product firms under Logit demand")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve for equilibrium prices.
    Solve(solve::SolveArgs),
    /// Run structural checks on given or solved prices.
    Verify(verify::VerifyArgs),
    /// Draw consumer choices at given or solved prices.
    Sample(sample::SampleArgs),
}

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_INADMISSIBLE: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_INPUT: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Inadmissible(_) | Error::ConditionFailed(_)) => EXIT_INADMISSIBLE,
        Some(Error::NonConvergence { .. } | Error::NotCertified(_) | Error::Inconsistent(_) | Error::NoRoot { .. }) => {
            EXIT_SOLVER
        }
        _ => EXIT_INPUT,
    }
}

/// Machine-readable failure summary printed on stdout for exit codes 2 and 3.
#[derive(Serialize)]
struct FailurePayload<'a> {
    schema_version: u32,
    status: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    residual: Option<f64>,
}

fn payload(err: &anyhow::Error, code: u8) -> Option<String> {
    let status = match code {
        EXIT_INADMISSIBLE => "inadmissible",
        EXIT_SOLVER => "not_converged",
        _ => return None,
    };
    let residual = err.chain().find_map(|e| match e.downcast_ref::<Error>() {
        Some(Error::NonConvergence { residual, .. }) => Some(*residual),
        _ => None,
    });
    let p = FailurePayload {
        schema_version: bertrand_logit::config::SCHEMA_VERSION,
        status,
        message: format!("{err:#}"),
        residual,
    };
    Some(io::to_json(&p))
}

/// `BL_SEED` takes precedence over `--seed`.
fn seed(flag: u64) -> Result<u64> {
    match std::env::var("BL_SEED") {
        Ok(v) => v.trim().parse().with_context(|| format!("BL_SEED=\"{v}\" is not an unsigned integer")),
        Err(_) => Ok(flag),
    }
}

fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Solve(args) => solve::run(args),
        Command::Verify(args) => verify::run(args, seed(args.seed)?),
        Command::Sample(args) => sample::run(args, seed(args.seed)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(EXIT_CHECK_FAILED),
        Err(err) => {
            let code = exit_code(&err);
            eprintln!("error: {err:#}");
            if let Some(text) = payload(&err, code) {
                print!("{text}");
            }
            ExitCode::from(code)
        }
    }
}
