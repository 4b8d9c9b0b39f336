use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(sparsemix::cli::run(std::env::args_os()))
}
