use std::process::ExitCode;

fn main() -> ExitCode {
    nuq::cli::main_entry()
}
