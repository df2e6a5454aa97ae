//! `spatial-aft` command-line driver.
//!
//! Exit codes: 0 success, 2 usage, 3 input or validation failure, 4
//! numerical failure, 5 convergence warning under `--strict`.

mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::Parser;
use serde_json::json;
use spatial_aft::{Error, ErrorClass};

use crate::args::{Cli, Command};
use crate::commands::{Context, Outcome};

const EXIT_INPUT: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;
const EXIT_CONVERGENCE: u8 = 5;

fn run(cli: &Cli, argv: &[String]) -> Result<Outcome, Error> {
    let threads = cli.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        return Err(Error::Domain("--threads must be positive".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Domain(format!("cannot configure worker threads: {e}")))?;
    let ctx = Context {
        argv,
        threads,
        out: cli.out.as_deref(),
    };
    match &cli.command {
        Command::Simulate(a) => commands::simulate(&ctx, cli, a),
        Command::Fit(a) => commands::fit(&ctx, cli, a),
        Command::Summarize(a) => commands::summarize(&ctx, cli, a),
        Command::Km(a) => commands::km(&ctx, cli, a),
        Command::Compare(a) => commands::compare(&ctx, cli, a),
        Command::ValidateKernel(a) => commands::validate_kernel(&ctx, cli, a),
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse_from(&argv);
    match run(&cli, &argv) {
        Ok(outcome) => {
            println!("{}", json!({ "status": "ok", "out_dir": outcome.out_dir, "warning": outcome.warning }));
            match outcome.warning {
                Some(w) if outcome.strict => {
                    eprintln!("{}", json!({ "error": "convergence", "class": "convergence", "message": w }));
                    ExitCode::from(EXIT_CONVERGENCE)
                }
                Some(w) => {
                    eprintln!("warning: {w}");
                    ExitCode::SUCCESS
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            let (class, code) = match e.class() {
                ErrorClass::Input => ("input", EXIT_INPUT),
                ErrorClass::Numerical => ("numerical", EXIT_NUMERICAL),
            };
            let mut record = json!({ "error": e.kind(), "class": class, "message": e.to_string() });
            if let Error::Validation { path, line, .. } = &e {
                record["path"] = json!(path);
                record["line"] = json!(line);
            }
            eprintln!("{record}");
            ExitCode::from(code)
        }
    }
}
