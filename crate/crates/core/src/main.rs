use std::process::ExitCode;

use clap::Parser;

use adskew::cli::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ADSKEW_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("adskew: error: {msg}");
            ExitCode::FAILURE
        }
    }
}
