//! Command-line front end for `ewca-core`: CSV ingestion and export, run
//! manifests, evaluation tables and solver benchmarks.

pub mod args;
pub mod bench;
pub mod commands;
pub mod error;
pub mod manifest;
pub mod parallel;
pub mod table;

use std::ffi::OsString;

use clap::Parser;

pub use error::{CliError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match args::Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: &args::Cmd) -> Result<()> {
    use args::Cmd;
    match command {
        Cmd::Fit(a) => {
            let r = commands::fit(a)?;
            println!(
                "iterations {} converged {} objective {} time {:.3}s",
                r.iterations,
                r.converged,
                r.final_objective(),
                r.wall_time
            );
            for w in &r.warnings {
                eprintln!("warning: {w:?}");
            }
        }
        Cmd::Pca(a) => {
            commands::pca_command(a)?;
        }
        Cmd::Transform(a) => {
            commands::transform(a)?;
        }
        Cmd::Evaluate(a) => {
            for row in commands::evaluate(a)? {
                let eps = row.epsilon.map(|e| format!("{e:.4e}")).unwrap_or_else(|| "-".into());
                println!("k {:>3} {:>14} eps {:>11} mean {:.4} q1 {:.4} q3 {:.4}", row.k, row.method, eps, row.report.mean, row.report.q1, row.report.q3);
            }
        }
        Cmd::Benchmark(a) => {
            for row in commands::benchmark(a)? {
                println!("{:>3} d {:>6} mean {:.3}s q1 {:.3}s q3 {:.3}s", row.algorithm.name(), row.dim, row.mean, row.q1, row.q3);
            }
        }
        Cmd::Synthetic(a) => {
            println!("{}", commands::synthetic(a)?.display());
        }
    }
    Ok(())
}
