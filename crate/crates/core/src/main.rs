use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use pcsgan::cli::{self, Cli, Command};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let what = match &cli.command {
        Command::Train(_) => "train",
        Command::Evaluate(_) => "evaluate",
        Command::Transform(_) => "transform",
        Command::Ablate(_) => "ablate",
    };
    match cli::run(cli).with_context(|| format!("{what} failed")) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
