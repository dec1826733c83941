use std::process::ExitCode;

fn main() -> ExitCode {
    fusionsim::cli::main()
}
