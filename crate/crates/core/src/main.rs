use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = shapecorr::cli::run(shapecorr::cli::Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
