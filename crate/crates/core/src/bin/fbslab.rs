use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fbslab::experiment::{read_summary, run_experiment, ExperimentConfig, RunError};

/// Experiments on variable-exponent singular free-boundary energies.
#[derive(Parser)]
#[command(name = "fbslab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its report bundle.
    Run {
        config: PathBuf,
        /// Overrides of the form dotted.key=value; values parse as JSON, else as strings.
        overrides: Vec<String>,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
    /// Re-print the summary of a bundle directory.
    Report { bundle: PathBuf },
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, overrides } => {
            let cfg = match ExperimentConfig::load(&config, &overrides) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return code(2);
                }
            };
            let dir = cfg.output.clone().unwrap_or_else(|| {
                let stem = if cfg.name.is_empty() { "run" } else { cfg.name.as_str() };
                PathBuf::from("runs").join(stem)
            });
            match run_experiment(&cfg, &dir) {
                Ok(summary) => {
                    print!("{}", summary.render());
                    println!("bundle: {}", dir.display());
                    code(summary.exit_code())
                }
                Err(e @ RunError::Pipeline { .. }) => {
                    if let Ok(summary) = read_summary(&dir) {
                        print!("{}", summary.render());
                    }
                    eprintln!("pipeline error: {e}");
                    code(e.exit_code())
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    code(e.exit_code())
                }
            }
        }
        Command::Validate { config } => {
            match ExperimentConfig::load(&config, &[]).and_then(|c| c.validate()) {
                Ok(()) => {
                    println!("{}: valid", config.display());
                    code(0)
                }
                Err(e) => {
                    eprintln!("config error: {e}");
                    code(2)
                }
            }
        }
        Command::Report { bundle } => match read_summary(&bundle) {
            Ok(summary) => {
                print!("{}", summary.render());
                code(summary.exit_code())
            }
            Err(e) => {
                eprintln!("error: {e}");
                code(e.exit_code())
            }
        },
    }
}
