use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use maopac::config::load_config;
use maopac::harness::{bounds_report, run_experiment};
use maopac::trace::mean;

#[derive(Parser)]
#[command(name = "maopac", version, about = "Decentralized off-policy actor-critic experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write per-seed and aggregate CSVs.
    Run {
        config: PathBuf,
        /// Output directory; overrides the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write one SVG plot per metric panel.
        #[arg(long)]
        plots: bool,
    },
    /// Print bound constants and the finite-time bounds.
    Bounds {
        config: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        j: usize,
        #[arg(long)]
        eps: f64,
        /// Emphatic weight at step j (default: its worst case).
        #[arg(long)]
        m: Option<f64>,
        /// Follow-on trace at step j (default: its worst case).
        #[arg(long)]
        f: Option<f64>,
    },
    /// Check a config and list every problem.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> maopac::Result<()> {
    match command {
        Command::Validate { config } => {
            load_config(&config)?;
            println!("{}: ok", config.display());
        }
        Command::Bounds { config, n, j, eps, m, f } => {
            let cfg = load_config(&config)?;
            print!("{}", bounds_report(&cfg, n, j, eps, m, f)?);
        }
        Command::Run { config, out, plots } => {
            let cfg = load_config(&config)?;
            let report = run_experiment(&cfg, out.as_deref(), plots)?;
            for r in &report.seeds {
                let s = &r.summary;
                print!(
                    "seed {:>4}  cum_avg_reward {:.4}  flagged {}  clamps {}",
                    s.seed, s.final_cum_reward, s.flagged_rows, s.clamp_count
                );
                if let Some(o) = s.oracle_final_cum_reward {
                    print!("  oracle {o:.4}");
                }
                println!();
            }
            let finals: Vec<f64> = report.seeds.iter().map(|r| r.summary.final_cum_reward).collect();
            println!("mean final cum_avg_reward {:.4}", mean(&finals));
            println!("wrote {} files (trend-level metrics, no reference scale)", report.files.len());
        }
    }
    Ok(())
}
