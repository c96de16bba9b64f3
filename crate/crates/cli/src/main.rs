use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hrvae_cli::commands::report_json;
use hrvae_cli::{CliError, ExperimentConfig};

/// Train, evaluate and compare sequence VAEs for text.
#[derive(Parser)]
#[command(name = "hrvae", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file; omitted keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set seed=7`. Repeatable, applied in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory, overriding `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        config.apply_overrides(&self.overrides)?;
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        Ok(config)
    }

    /// Only an explicit config file is checked against a checkpoint.
    fn for_checkpoint(&self) -> Result<(ExperimentConfig, bool), CliError> {
        Ok((self.resolve()?, self.config.is_some()))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one model.
    Train(ConfigArgs),
    /// Print test-set metrics of a checkpoint as JSON.
    Eval {
        checkpoint: PathBuf,
        test: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Greedy reconstruction, one `input<TAB>output` line per input line.
    Reconstruct {
        checkpoint: PathBuf,
        input: PathBuf,
        /// Sample tokens and z with this seed instead of greedy decoding.
        #[arg(long)]
        sample_seed: Option<u64>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train the HR model and the baseline under one seed and merge their
    /// loss curves.
    Compare(ConfigArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => {
            let outcome = hrvae_cli::train(&args.resolve()?)?;
            eprintln!("wrote {}", outcome.out_dir.display());
        }
        Command::Eval {
            checkpoint,
            test,
            config,
        } => {
            let (resolved, explicit) = config.for_checkpoint()?;
            resolved.validate()?;
            let report = hrvae_cli::eval(&checkpoint, &test, explicit.then_some(&resolved), resolved.eval_options())?;
            println!("{}", report_json(&report));
        }
        Command::Reconstruct {
            checkpoint,
            input,
            sample_seed,
            config,
        } => {
            let (resolved, explicit) = config.for_checkpoint()?;
            for line in hrvae_cli::reconstruct(&checkpoint, &input, explicit.then_some(&resolved), sample_seed)? {
                println!("{line}");
            }
        }
        Command::Compare(args) => {
            let (hr, _) = hrvae_cli::compare(&args.resolve()?)?;
            let root = hr.out_dir.parent().map(|p| p.display().to_string()).unwrap_or_default();
            eprintln!("wrote {root}/compare.csv");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.code)
        }
    }
}
