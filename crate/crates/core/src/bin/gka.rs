use std::io;
use std::process::ExitCode;

fn main() -> ExitCode {
    let env_seed = std::env::var(gka_core::cli::SEED_ENV).ok();
    let code = gka_core::cli::run(std::env::args_os(), env_seed.as_deref(), &mut io::stdout(), &mut io::stderr());
    ExitCode::from(code as u8)
}
