use std::process::ExitCode;

fn main() -> ExitCode {
    sfperc::cli::main_entry()
}
