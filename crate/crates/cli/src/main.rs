use std::process::ExitCode;

fn main() -> ExitCode {
    lunet_cli::run(std::env::args_os())
}
