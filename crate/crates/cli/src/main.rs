use std::io;
use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(tricl_lab::app::execute(
        std::env::args_os(),
        &mut io::stdout(),
        &mut io::stderr(),
    ))
}
