mod commands;
mod config;
mod data;
mod error;

use clap::Parser;

use config::{Cli, Command};
use error::Result;

fn init_threads(threads: usize) {
    if threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Impute(args) => {
            let job = args.resolve()?;
            init_threads(job.run.threads);
            commands::impute(&job)
        }
        Command::Simulate(args) => {
            let job = args.resolve()?;
            init_threads(job.run.threads);
            commands::simulate(&job)
        }
        Command::Ratio(args) => {
            let job = args.resolve()?;
            init_threads(job.run.threads);
            commands::ratio(&job)
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
