use std::process::ExitCode;

fn main() -> ExitCode {
    rfde_core::cli::run()
}
