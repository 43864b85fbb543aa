use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fiadd::cli::{self, CliError, Command, Context, RunConfig};

#[derive(Parser)]
#[command(name = "fiadd", version, about = "Focused inferential density discrimination on frozen embeddings")]
struct Args {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Omit the generation time from text reports.
    #[arg(long)]
    no_timestamp: bool,
    /// Config overrides as `--key value`, e.g. `--gamma 3 --train.k 4`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset.
    Synth(Common),
    /// Check dataset invariants.
    Validate(Common),
    /// Split and train once per seed.
    Train(Common),
    /// Score a checkpoint.
    Eval(Common),
    /// Distance, silhouette and error analyses.
    Analyze(Common),
    /// Train across a grid of one parameter.
    Sweep(Common),
    /// Compare analytic gradients with finite differences.
    Gradcheck(Common),
}

fn run(args: Args) -> Result<(), CliError> {
    let (command, common) = match args.command {
        Cmd::Synth(c) => (Command::Synth, c),
        Cmd::Validate(c) => (Command::Validate, c),
        Cmd::Train(c) => (Command::Train, c),
        Cmd::Eval(c) => (Command::Eval, c),
        Cmd::Analyze(c) => (Command::Analyze, c),
        Cmd::Sweep(c) => (Command::Sweep, c),
        Cmd::Gradcheck(c) => (Command::GradCheck, c),
    };
    let overrides = cli::parse_overrides(&common.overrides)?;
    let config = RunConfig::load(common.config.as_deref(), &overrides, command)?;
    cli::run(command, &Context::new(config, !common.no_timestamp))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
