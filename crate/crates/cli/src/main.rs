use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(mfe_cli::run(std::env::args_os().collect()))
}
