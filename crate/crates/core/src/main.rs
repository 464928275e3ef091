use std::io::Write;
use std::process::ExitCode;

fn main() -> ExitCode {
    let (status, out) = isolab::cli::dispatch(std::env::args_os(), &mut std::io::stdin());
    if status == isolab::cli::EXIT_USAGE {
        eprint!("{out}");
    } else {
        let _ = std::io::stdout().write_all(out.as_bytes());
    }
    ExitCode::from(status as u8)
}
