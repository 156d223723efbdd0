use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(lsdg_cli::cli_main(std::env::args()) as u8)
}
