use std::process::ExitCode;

use clap::Parser;

use reembody_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    reembody_cli::init_logging();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("reembody: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
