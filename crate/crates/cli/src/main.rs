use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("QSE_LOG", "warn")).init();
    let code = qse_cli::run(qse_cli::Cli::parse());
    std::process::exit(code);
}
