use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    match std::panic::catch_unwind(|| aridprob_cli::main_with_args(std::env::args_os())) {
        Ok(code) => ExitCode::from(code),
        Err(_) => ExitCode::from(aridprob_cli::EXIT_INTERNAL),
    }
}
