use std::process::ExitCode;

fn main() -> ExitCode {
    partial_steer::cli::main()
}
