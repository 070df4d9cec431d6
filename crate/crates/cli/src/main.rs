use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use voltgp_cli::{cmd_run, cmd_sweep, cmd_validate, parse_values, RunOptions};

/// Decentralized gradient-projection voltage control simulator.
#[derive(Parser)]
#[command(name = "voltgp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Override a scenario value by dotted path, e.g. dynamics.alpha=0.5.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (defaults to $VOLTGP_WORKERS, then all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Explicit beta' for the tracking bound.
    #[arg(long = "beta-prime")]
    beta_prime: Option<f64>,
}

impl RunArgs {
    fn options(self) -> RunOptions {
        RunOptions {
            overrides: self.overrides,
            out_dir: self.out,
            workers: self.workers,
            beta_prime: self.beta_prime,
            stem: None,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario and print its step-size bounds.
    Validate { file: PathBuf },
    /// Run an ensemble from a scenario or a previous run manifest.
    Run {
        file: PathBuf,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Run one ensemble per value of a parameter and summarize.
    Sweep {
        file: PathBuf,
        /// Dotted parameter path.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        #[command(flatten)]
        args: RunArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Validate { file } => cmd_validate(&file).map(|report| print!("{report}")),
        Command::Run { file, args } => cmd_run(&file, &args.options()).map(|o| {
            println!(
                "{}",
                serde_json::to_string_pretty(&o.manifest).expect("manifest serializes")
            );
        }),
        Command::Sweep {
            file,
            param,
            values,
            args,
        } => cmd_sweep(&file, &param, &parse_values(&values), &args.options()).and_then(|report| {
            print!("{}", report.to_csv());
            if report.failures() > 0 {
                Err(voltgp_cli::CliError::Runtime(anyhow::anyhow!(
                    "{} of {} sweep points failed",
                    report.failures(),
                    report.rows.len()
                )))
            } else {
                Ok(())
            }
        }),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
