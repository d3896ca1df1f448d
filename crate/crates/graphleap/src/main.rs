use std::process::ExitCode;

use clap::Parser;
use graphleap::cli::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GRAPHLEAP_LOG", "warn")).init();
    let code = run(Cli::parse());
    ExitCode::from(u8::try_from(code).unwrap_or(1))
}
