use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use ipmdpg::experiment::{self, ExperimentConfig, ExperimentKind};

/// Interior-point MPC policy-gradient experiments.
#[derive(Debug, Parser)]
#[command(name = "ipmdpg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment kind and write CSV traces plus manifest.json.
    Run {
        /// TOML config; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dotted override, e.g. `learner.learning_rate=0.02` (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seed list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        kind: Option<ExperimentKind>,
    },
    /// Compare two learning traces and print a JSON summary.
    Compare { trace_a: PathBuf, trace_b: PathBuf },
    /// Print the effective configuration as TOML.
    PrintConfig {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn effective_config(
    config: Option<&PathBuf>,
    set: &[String],
    out: Option<PathBuf>,
    seeds: Option<Vec<u64>>,
    kind: Option<ExperimentKind>,
) -> Result<ExperimentConfig> {
    let mut overrides = set.to_vec();
    if let Some(k) = kind {
        overrides.push(format!("kind=\"{}\"", k.name()));
    }
    if let Some(s) = seeds {
        let list: Vec<String> = s.iter().map(u64::to_string).collect();
        overrides.push(format!("seeds=[{}]", list.join(",")));
    }
    let mut cfg = ExperimentConfig::load(config.map(PathBuf::as_path), &overrides)?;
    if let Some(dir) = out {
        cfg.out_dir = dir;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            set,
            out,
            seeds,
            kind,
        } => {
            let cfg = effective_config(config.as_ref(), &set, out, seeds, kind)?;
            let manifest = experiment::run(&cfg)
                .with_context(|| format!("{} run failed (partial artifacts in {})", cfg.kind, cfg.out_dir.display()))?;
            println!("{}", serde_json::to_string_pretty(&manifest.summary)?);
            eprintln!(
                "wrote {} files to {} in {:.1}s",
                manifest.files.len() + 2,
                cfg.out_dir.display(),
                manifest.wall_clock_seconds
            );
        }
        Command::Compare { trace_a, trace_b } => {
            let cmp = experiment::compare(&trace_a, &trace_b)?;
            println!("{}", serde_json::to_string_pretty(&cmp)?);
        }
        Command::PrintConfig { config, set } => {
            let cfg = effective_config(config.as_ref(), &set, None, None, None)?;
            print!("{}", cfg.to_toml_string());
        }
    }
    Ok(())
}
