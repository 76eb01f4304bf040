use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use explain_al::harness::{self, ExperimentConfig};
use explain_al::tuner::write_history_jsonl;
use explain_al::Error;

#[derive(Parser)]
#[command(name = "explain-al", version, about = "Explanation-guided active learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every strategy and seed in the config and write curves.csv, summary.json and config.txt.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Tune the explainer parameters on the first seed's initial pool and write trials.jsonl.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trials: usize,
    },
    /// Recompute summary.json from curves.csv in a results directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let curves = harness::run_experiment(&cfg)?;
            let summary = harness::emit_results(&curves, &cfg, &cfg.output_dir)?;
            for s in &summary.strategies {
                if let Some(last) = s.points.last() {
                    println!(
                        "{:<28} labeled={:<5} f1_macro={:.4} [{:.4}, {:.4}]",
                        s.strategy, last.labeled_size, last.mean, last.ci_low, last.ci_high
                    );
                }
            }
            println!("results written to {}", cfg.output_dir.display());
        }
        Command::Sweep { config, trials } => {
            let cfg = ExperimentConfig::load(&config)?;
            let (best, history) = harness::sweep(&cfg, trials)?;
            std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::Io {
                path: cfg.output_dir.clone(),
                source: e,
            })?;
            let path = cfg.output_dir.join("trials.jsonl");
            let file = std::fs::File::create(&path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            write_history_jsonl(&history, std::io::BufWriter::new(file))?;
            println!(
                "best eval_budget={} top_k={} batch_eval_limit={} objective={:.4}",
                best.theta.eval_budget, best.theta.top_k, best.theta.batch_eval_limit, best.objective
            );
            println!("trial history written to {}", path.display());
        }
        Command::Report { dir } => {
            let summary = harness::report(&dir)?;
            println!(
                "summary.json rewritten for {} strategies",
                summary.strategies.len()
            );
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
