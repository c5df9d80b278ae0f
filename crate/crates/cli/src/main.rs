mod args;
mod commands;
mod error;
mod settings;

use std::process::ExitCode;

use clap::{CommandFactory, Parser};

use args::{Cli, Command};
use error::{CliError, CliResult};
use settings::Config;

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::usage(format!("cannot start worker pool: {e}")))?;
    }
    let cfg = Config::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Simulate(a) => commands::simulate_cmd(a, &cfg, cli.seed),
        Command::Transport(a) => commands::transport_cmd(a, &cfg),
        Command::Match(a) => commands::match_cmd(a, &cfg, cli.seed),
        Command::Cate(a) => commands::cate_cmd(a, &cfg, cli.seed),
        Command::Bootstrap(a) => commands::bootstrap_cmd(a, &cfg, cli.seed),
        Command::Stability(a) => commands::stability_cmd(a, &cfg, cli.seed),
    }
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Simulate(_) => "simulate",
        Command::Transport(_) => "transport",
        Command::Match(_) => "match",
        Command::Cate(_) => "cate",
        Command::Bootstrap(_) => "bootstrap",
        Command::Stability(_) => "stability",
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OTCF_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Usage(_) = e {
                let mut cmd = Cli::command();
                cmd.build();
                if let Some(sub) = cmd.find_subcommand_mut(subcommand_name(&cli.command)) {
                    eprintln!("\n{}", sub.render_usage());
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
