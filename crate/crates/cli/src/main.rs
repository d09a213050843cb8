// SPDX-License-Identifier: MIT OR Apache-2.0

mod args;
mod commands;
mod error;
mod inspect;
mod live;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use error::CliError;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    if let Command::Replay(r) = &cli.command {
        return manifest::replay(&r.manifest);
    }
    let touched = commands::run(&cli.command)?;
    let path = cli
        .manifest
        .clone()
        .unwrap_or_else(|| manifest::default_path(&cli.command, &touched));
    manifest::write(&path, &cli.command, &touched)
}
