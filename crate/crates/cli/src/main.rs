use std::process::ExitCode;

use clap::Parser;
use guidedec_cli::args::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match guidedec_cli::execute(&cli, &mut std::io::stdout().lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.code)
        }
    }
}
