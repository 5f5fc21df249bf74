use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(qsd_cli::run(std::env::args_os()))
}
