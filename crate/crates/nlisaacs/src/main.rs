use clap::Parser;
use nlisaacs::{run, Cli, EXIT_FAILED, EXIT_OK};

fn main() {
    let cli = Cli::parse();
    let common = cli.command.common();
    let level = match common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let pool = match rayon::ThreadPoolBuilder::new().num_threads(common.threads).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start {} worker threads: {e}", common.threads);
            std::process::exit(nlisaacs::EXIT_CONFIG);
        }
    };
    let code = match pool.install(|| run(&cli)) {
        Ok(outcome) if outcome.passed => EXIT_OK,
        Ok(_) => EXIT_FAILED,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
