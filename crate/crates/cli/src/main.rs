mod args;
mod commands;
mod output;

use clap::error::ErrorKind;
use clap::Parser;

use args::Cli;
use output::{EXIT_OK, EXIT_USAGE};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };

    env_logger::Builder::new()
        .filter_level(if cli.global.quiet {
            log::LevelFilter::Error
        } else {
            log::LevelFilter::Info
        })
        .parse_env("HDRPCAL_LOG")
        .format_timestamp(None)
        .format_target(false)
        .init();

    if let Err(e) = commands::run(&cli) {
        log::error!("{e}");
        std::process::exit(e.exit_code());
    }
}
