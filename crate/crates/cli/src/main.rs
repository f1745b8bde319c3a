mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use v2s_core::dataio::parse_kv;
use v2s_core::Error;

use crate::args::Cli;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let raw: Vec<String> = std::env::args().collect();
    let argv = match args::config_path(&raw) {
        Some(path) => match std::fs::read_to_string(&path) {
            Ok(text) => match parse_kv(&text) {
                Ok(pairs) => {
                    let pairs: Vec<_> = pairs.into_iter().filter(|(k, _)| k != "config").collect();
                    args::splice_config(&raw, &pairs)
                }
                Err(e) => return fail(&e),
            },
            Err(e) => return fail(&Error::io(path, e)),
        },
        None => raw,
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn fail(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(commands::exit_code(err))
}
