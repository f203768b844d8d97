mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use args::Cli;
use commands::Failure;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = set_threads(cli.threads).and_then(|()| commands::run(&cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let record = json!({
                "error": { "kind": f.kind_name(), "message": f.message, "exit_code": f.exit_code() }
            });
            eprintln!("{record}");
            ExitCode::from(f.exit_code())
        }
    }
}

fn set_threads(threads: Option<usize>) -> Result<(), Failure> {
    let Some(t) = threads else { return Ok(()) };
    if t == 0 {
        return Err(Failure {
            kind: hicorr_core::ErrorKind::Validation,
            message: "--threads must be at least 1".into(),
        });
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(t)
        .build_global()
        .map_err(|e| Failure {
            kind: hicorr_core::ErrorKind::Validation,
            message: e.to_string(),
        })
}
