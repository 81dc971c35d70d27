use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use fedsiam_core::config::ExperimentConfig;
use fedsiam_core::{data, experiment};

#[derive(Parser)]
#[command(name = "fedsiam", about = "Semi-supervised federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its metrics.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `key=value`, applied after the config file.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory; defaults to the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; defaults to FEDSIAM_THREADS or all cores.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Compare finished runs.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Accuracy for the rounds-to-target column.
        #[arg(long)]
        target: Option<f64>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print each client's partition as CSV.
    PartitionAudit {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn load_config(path: Option<&PathBuf>, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = match path {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    Ok(ExperimentConfig::parse(&text, overrides)?)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            overrides,
            out,
            threads,
        } => {
            let cfg = load_config(config.as_ref(), &overrides)?;
            let threads = threads.unwrap_or_else(experiment::threads_from_env);
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let records = experiment::run_experiment(&cfg, threads)?;
            experiment::write_experiment(&records, &out)?;
            for r in &records {
                println!(
                    "{} seed {}: best {:.4} final {:.4} upload {} download {} ({:.1}s)",
                    r.config.variant,
                    r.config.seed,
                    r.best_acc(),
                    r.final_acc(),
                    r.upload_total(),
                    r.download_total(),
                    r.wall_clock_secs
                );
            }
            println!("wrote {}", out.display());
        }
        Command::Compare { dirs, target, csv } => {
            let mut records = Vec::new();
            for d in &dirs {
                records.extend(experiment::load_runs(d)?);
            }
            let cmp = experiment::compare_runs(&records, target)?;
            print!("{}", cmp.to_text());
            if let Some(p) = csv {
                fs::write(&p, cmp.to_csv()).with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::PartitionAudit { config, overrides } => {
            let cfg = load_config(config.as_ref(), &overrides)?;
            let (train, _) = experiment::load_data(&cfg)?;
            let part = data::partition(&train, &cfg.partition_spec(cfg.seed))?;
            if let Some(s) = &part.server_labeled {
                eprintln!("server labeled samples: {}", s.labels.len());
            }
            print!("{}", data::partition_audit_csv(&part.shards));
        }
    }
    Ok(())
}
