use std::process::ExitCode;

fn main() -> ExitCode {
    mortpanel::cli::main_with_args(std::env::args_os())
}
