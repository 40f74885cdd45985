use std::process::ExitCode;

fn main() -> ExitCode {
    sweepsim::cli::main()
}
