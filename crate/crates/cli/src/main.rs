use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nsrl::harness::{budget_report, regret_report, run_experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "nsrl", version, about = "Non-stationary tabular RL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment and write trace and aggregate CSVs.
    Run(RunArgs),
    /// Exact quantities computed from the true model.
    Oracle {
        #[command(subcommand)]
        report: OracleCommand,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override the number of seeds.
    #[arg(long)]
    seeds: Option<usize>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record greedy policies and write exact cumulative regret.
    #[arg(long)]
    record_policy: bool,
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Total and per-epoch variation budgets.
    Budgets {
        #[arg(long)]
        config: PathBuf,
    },
    /// Exact dynamic regret of every seed, or of the seed behind one trace.
    Regret {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> nsrl::Result<()> {
    match cli.command {
        Command::Run(args) => {
            let mut cfg = ExperimentConfig::load(&args.config)?;
            if let Some(n) = args.seeds {
                cfg.run.seeds = n;
            }
            if let Some(out) = args.out {
                cfg.run.out = out;
            }
            cfg.run.record_policy |= args.record_policy;
            let out = run_experiment(&cfg)?;
            for path in &out.traces {
                println!("wrote {}", path.display());
            }
            println!("wrote {}", out.aggregate.display());
            if let Some(reward) = out.stats.mean_reward.last() {
                println!("final mean cumulative reward = {reward}");
            }
            if let Some(regret) = out.stats.mean_regret.as_ref().and_then(|r| r.last()) {
                println!("final mean cumulative regret = {regret}");
            }
        }
        Command::Oracle { report } => {
            let text = match report {
                OracleCommand::Budgets { config } => budget_report(&ExperimentConfig::load(&config)?)?,
                OracleCommand::Regret { config, trace } => {
                    regret_report(&ExperimentConfig::load(&config)?, trace.as_deref())?
                }
            };
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
