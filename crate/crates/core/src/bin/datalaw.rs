use std::process::ExitCode;

fn main() -> ExitCode {
    datalaw::cli::run(std::env::args_os())
}
