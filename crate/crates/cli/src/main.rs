mod config;
mod error;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use boswe::reproduce::GridRow;
use boswe::synthetic::SyntheticSpec;
use clap::{Args, Parser, Subcommand};

use crate::error::CliError;
use crate::stages::TableKind;

/// Text classification with bags of super word embeddings.
///
/// Relative data paths in the configuration are resolved against
/// BOSWE_DATA_ROOT when it is set, otherwise against the configuration
/// file's directory.
#[derive(Parser)]
#[command(name = "boswe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster training word vectors into the vocabulary (vocab.bin).
    BuildVocab(ConfigArg),
    /// Histogram every document over the vocabulary (features.bin).
    Featurize(ConfigArg),
    /// Kernel matrices for each configured kernel combination (gram-*.bin).
    Gram(ConfigArg),
    /// Train SVMs on the stored kernel matrices (model-*.bin).
    Train(ConfigArg),
    /// Score the configuration: cross-validation, or the stored models on the test split.
    Evaluate(ConfigArg),
    /// Run a vocabulary-by-kernel grid and print it as a table.
    Reproduce {
        table: TableKind,
        #[command(flatten)]
        config: ConfigArg,
        /// Override the grid rows, e.g. `single:5000,per_class:7500`.
        #[arg(long, value_delimiter = ',', value_parser = stages::parse_row)]
        rows: Vec<GridRow>,
    },
    /// Validate a configuration and print it with every default filled in.
    CheckConfig(ConfigArg),
    /// Write a separable synthetic corpus, word vectors and a matching configuration.
    Synthetic {
        /// Target directory.
        dir: PathBuf,
        #[arg(long, default_value_t = 100)]
        docs_per_class: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::BuildVocab(c) => stages::build_vocab(&config::load(&c.config)?),
        Command::Featurize(c) => stages::featurize(&config::load(&c.config)?),
        Command::Gram(c) => stages::gram(&config::load(&c.config)?),
        Command::Train(c) => stages::train(&config::load(&c.config)?),
        Command::Evaluate(c) => stages::evaluate(&config::load(&c.config)?),
        Command::Reproduce { table, config, rows } => stages::reproduce(&config::load(&config.config)?, table, &rows),
        Command::CheckConfig(c) => {
            stages::check_config(&config::load(&c.config)?);
            Ok(())
        }
        Command::Synthetic {
            dir,
            docs_per_class,
            seed,
        } => {
            if docs_per_class < 10 {
                return Err(CliError::Validation(vec!["--docs-per-class: must be at least 10".into()]));
            }
            let spec = SyntheticSpec {
                docs_per_class,
                seed,
                ..SyntheticSpec::default()
            };
            stages::synthetic(&dir, &spec)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
