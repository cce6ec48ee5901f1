//! `dualxda`: command-line driver for surrogate fitting, attribution,
//! reference baselines, XDA heatmaps and evaluation metrics.

mod args;
mod commands;
mod inputs;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::Cli;

/// Failure reported as a single `error: <kind>: <message>` line.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError { kind: "validation", message: message.into() }
    }
}

impl From<dualxda::Error> for CliError {
    fn from(e: dualxda::Error) -> Self {
        let message = match &e {
            dualxda::Error::OutOfRange { .. } => e.to_string(),
            dualxda::Error::Io(io) => io.to_string(),
            _ => e.to_string().split_once(": ").map(|(_, m)| m.to_string()).unwrap_or_else(|| e.to_string()),
        };
        CliError { kind: e.kind(), message }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            let _ = e.print();
            return ExitCode::from(2);
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: usage: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind, e.message.replace('\n', " "));
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let threads = resolve_threads(cli.threads)?;
    let config = serde_json::json!({ "threads": threads, "json": cli.json, "command": &cli.command });
    eprintln!("config: {config}");
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError { kind: "state", message: format!("cannot start worker pool: {e}") })?;
    let report = pool.install(|| commands::dispatch(&cli.command))?;
    if cli.json {
        println!("{}", serde_json::to_string(&report).expect("reports are plain JSON"));
    } else {
        print_human(&report);
    }
    Ok(())
}

/// `--threads` wins over `DXDA_THREADS`; 0 or unset means all cores.
fn resolve_threads(flag: Option<usize>) -> CliResult<usize> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var("DXDA_THREADS") {
            Ok(v) if !v.trim().is_empty() => v
                .trim()
                .parse()
                .map_err(|_| CliError::validation(format!("DXDA_THREADS must be a nonnegative integer, got {v:?}")))?,
            _ => 0,
        },
    };
    Ok(if n == 0 { std::thread::available_parallelism().map_or(1, |p| p.get()) } else { n })
}

fn print_human(report: &serde_json::Value) {
    match report {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                if k == "config" || v.is_null() || v.as_object().is_some_and(|o| o.is_empty()) {
                    continue;
                }
                match v {
                    serde_json::Value::String(s) => println!("{k}: {s}"),
                    other => println!("{k}: {other}"),
                }
            }
        }
        other => println!("{other}"),
    }
}
