use std::process::ExitCode;

use clap::Parser;

mod args;
mod commands;
mod manifest;

use args::Cli;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gbe: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
