use std::process::ExitCode;

fn main() -> ExitCode {
    dppv::cli::main_with_args(std::env::args_os())
}
