use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cmbd::errors::Result;
use cmbd::runcfg::RunConfig;
use cmbd::stages;

/// Cross-modal backdoor toolkit: mine invariant regions and keywords,
/// train triggers, assemble poisoned training sets, and measure the attack.
#[derive(Parser)]
#[command(name = "cmbd", version, arg_required_else_help = true)]
struct Cli {
    /// Run configuration (TOML). Omit to use built-in defaults.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Directory holding this run's artifacts.
    #[arg(short, long, global = true, default_value = "runs/default")]
    run_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split the dataset and mine invariant regions and keywords.
    Mine,
    /// Train the visual trigger generator on the mined masks.
    TrainTrigger,
    /// Assemble the poisoned training set for each target.
    Poison,
    /// Train the clean victim and one victim per poisoned set.
    TrainVictim,
    /// Score the victims and write attack reports.
    Evaluate,
    /// Run every stage in order.
    Pipeline,
}

fn run(cli: &Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Mine => stages::cmd_mine(&config, &cli.run_dir),
        Command::TrainTrigger => stages::cmd_train_trigger(&config, &cli.run_dir),
        Command::Poison => stages::cmd_poison(&config, &cli.run_dir),
        Command::TrainVictim => stages::cmd_train_victim(&config, &cli.run_dir),
        Command::Evaluate => stages::cmd_evaluate(&config, &cli.run_dir),
        Command::Pipeline => stages::cmd_pipeline(&config, &cli.run_dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
