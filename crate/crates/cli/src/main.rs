use clap::Parser;

use commexp_cli::args::Cli;
use commexp_cli::commands;
use commexp_cli::exit::{error_json, ErrorClass};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = commands::run(&cli.command) {
        eprintln!("{}", error_json(&e));
        std::process::exit(ErrorClass::of(&e).exit_code());
    }
}
