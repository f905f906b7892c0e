use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fairfedcs::harness::commands::{cmd_report, cmd_run, cmd_sweep, parse_policies, parse_seeds, parse_sigmas, EXIT_CONFIG};
use fairfedcs::harness::SweepOptions;

/// Fairness-aware client selection experiments.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write trace.csv, rounds.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "FAIRFEDCS_OUT", default_value = "fairfedcs-out")]
        out: PathBuf,
        /// Write every client in every round to trace.csv.
        #[arg(long)]
        full_trace: bool,
    },
    /// Run policies x seeds from one base config and aggregate into sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated: fairfedcs, random, greedy, rbcsf, rbff_proxy, ablation.
        #[arg(long, default_value = "fairfedcs,ablation,random,greedy,rbff_proxy")]
        policies: String,
        /// `0..20`, `0..=19` or `1,2,3`.
        #[arg(long, default_value = "0..20")]
        seeds: String,
        /// Comma-separated sigma values for the CSI-ranked policies.
        #[arg(long)]
        sigmas: Option<String>,
        /// Worker threads; defaults to one per core.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, env = "FAIRFEDCS_OUT", default_value = "fairfedcs-out")]
        out: PathBuf,
        #[arg(long)]
        full_trace: bool,
    },
    /// Summarise a finished sweep into a results table and plot data.
    Report {
        /// Directory written by `sweep`.
        #[arg(long)]
        sweep: PathBuf,
        /// Defaults to `<sweep>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let code = match Cli::parse().command {
        Command::Run { config, out, full_trace } => cmd_run(&config, &out, full_trace),
        Command::Sweep { config, policies, seeds, sigmas, jobs, out, full_trace } => {
            let parsed = (|| {
                let sigmas = sigmas.as_deref().map(parse_sigmas).transpose()?;
                Ok::<_, fairfedcs::Error>((parse_policies(&policies)?, parse_seeds(&seeds)?, sigmas))
            })();
            match parsed {
                Ok((policies, seeds, sigmas)) => {
                    let opts = SweepOptions { sigmas, jobs, full_trace };
                    cmd_sweep(&config, &policies, &seeds, &out, &opts)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_CONFIG
                }
            }
        }
        Command::Report { sweep, out } => {
            let out = out.unwrap_or_else(|| sweep.join("report"));
            cmd_report(&sweep, &out)
        }
    };
    ExitCode::from(code as u8)
}
