//! Scene-graph generation toolkit: synthesize datasets, assign supervision,
//! fit predictions, run the detector, and score the results.
//!
//! Every runtime failure is reported as a single JSON object on stderr so
//! wrappers can parse it; exit codes are 0 (ok), 1 (runtime error),
//! 2 (usage error). `SSRCNN_LOG` controls diagnostic logging (error, warn,
//! info, debug, trace).

mod commands;
mod config;
mod formats;
mod output;
mod plot;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde_json::json;

use formats::InputError;

#[derive(Parser)]
#[command(
    name = "ssrcnn",
    version,
    about = "Scene-graph generation toolkit: synthetic data, supervision assignment, detection heads, and evaluation",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its frequency sidecar
    Gen(commands::gen::GenArgs),
    /// Run the two-stage supervision assignment over a dataset
    Assign(commands::assign::AssignArgs),
    /// Fit free predictions to each scene by gradient descent
    Fit(commands::fit::FitArgs),
    /// Score predictions against a dataset
    Eval(commands::eval::EvalArgs),
    /// Sweep the logit-adjustment strength and derive focusing parameters
    Calibrate(commands::calibrate::CalibrateArgs),
    /// Run the cascaded detector over synthetic feature maps
    Forward(commands::forward::ForwardArgs),
    /// Combine headline metrics into the weighted score
    Report(commands::report::ReportArgs),
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SSRCNN_LOG", "warn"))
        .format_timestamp(None)
        .init();
}

/// Single-line machine-readable error on stderr.
fn emit_error(kind: &str, message: &str, detail: Option<&InputError>) {
    let mut error = json!({ "kind": kind, "message": message });
    if let Some(d) = detail {
        error["file"] = json!(d.file.display().to_string());
        if let Some(loc) = &d.location {
            error["location"] = json!(loc);
        }
        if let Some(line) = d.line {
            error["line"] = json!(line);
        }
        if let Some(column) = d.column {
            error["column"] = json!(column);
        }
    }
    eprintln!("{}", json!({ "error": error }));
}

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Gen(args) => commands::gen::run(args),
        Command::Assign(args) => commands::assign::run(args),
        Command::Fit(args) => commands::fit::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Calibrate(args) => commands::calibrate::run(args),
        Command::Forward(args) => commands::forward::run(args),
        Command::Report(args) => commands::report::run(args),
    }
}

fn main() {
    init_logging();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                std::process::exit(0);
            }
            emit_error("usage", e.to_string().trim_end(), None);
            std::process::exit(2);
        }
    };
    if let Err(err) = dispatch(&cli) {
        let input = err.chain().find_map(|c| c.downcast_ref::<InputError>());
        let kind = if input.is_some() { "invalid-input" } else { "error" };
        emit_error(kind, &format!("{err:#}"), input);
        std::process::exit(1);
    }
}
