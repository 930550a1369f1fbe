//! `mcast`: solve, certify and simulate the multicast mechanisms from the
//! command line.
//!
//! Every run writes `manifest.json` into `--out`; a failed run also writes
//! `error.json` and exits with 2 (parse), 3 (validation), 4 (A4) or 5
//! (numeric failure).

mod args;
mod commands;
mod error;
mod output;

use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;

use args::{Cli, Command};
use error::{CliError, Kind};
use output::{pretty, Out};

#[derive(Serialize)]
struct Versions {
    mcast: &'static str,
    mcast_core: &'static str,
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a Command,
    versions: Versions,
    threads: Option<usize>,
    outputs: &'a [String],
    exit_code: u8,
}

/// `MECH_THREADS` caps the rayon pool.
fn configure_threads() -> Result<Option<usize>, CliError> {
    let Ok(raw) = std::env::var("MECH_THREADS") else {
        return Ok(None);
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::new(
            Kind::Parse,
            format!("MECH_THREADS must be a positive integer, got `{raw}`"),
        )
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::new(Kind::Io, format!("cannot size the thread pool: {e}")))?;
    Ok(Some(n))
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("error: {}", e.message);
    eprint!("{}", pretty(e));
    ExitCode::from(e.code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(Kind::Parse.code())
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let threads = match configure_threads() {
        Ok(t) => t,
        Err(e) => return fail(&e),
    };
    let mut out = match Out::create(cli.command.out()) {
        Ok(out) => out,
        Err(e) => return fail(&e),
    };

    let result = commands::run(&cli.command, &mut out);
    let exit_code = match &result {
        Ok(()) => 0,
        Err(e) => {
            // A failed write of the error report must not mask the error.
            let _ = out.write_json("error.json", e);
            e.code
        }
    };
    let written = out.written.clone();
    let manifest = Manifest {
        config: &cli.command,
        versions: Versions {
            mcast: env!("CARGO_PKG_VERSION"),
            mcast_core: mcast_core::VERSION,
        },
        threads,
        outputs: &written,
        exit_code,
    };
    if let Err(e) = out.write_json("manifest.json", &manifest) {
        return fail(&e);
    }
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
