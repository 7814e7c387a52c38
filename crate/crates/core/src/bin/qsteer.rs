fn main() -> std::process::ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    qsteer::experiment::cli::main_with(std::env::args_os())
}
