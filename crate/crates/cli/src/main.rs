use std::path::PathBuf;

use anyhow::{Context, Result};
use aqcf_cli::commands;
use aqcf_cli::config::RunConfig;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aqcf", version, about = "Adaptive quantum-classical fusion transformer")]
struct Cli {
    /// Overrides the seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory in the config file.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Worker threads; AQCF_THREADS takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Staged training from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Scores a checkpoint on a labelled CSV file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Gradient variance of random circuits over qubit counts and depths.
    DiagnosePlateau {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Prints circuit expectations and the fusion weight for a text.
    Encode {
        #[arg(long)]
        text: String,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Writes the synthetic toy task and its config.
    MakeToy {
        #[arg(long, default_value_t = 2000)]
        train: usize,
        #[arg(long, default_value_t = 500)]
        test: usize,
    },
}

fn threads(flag: Option<usize>) -> Result<Option<usize>> {
    match std::env::var("AQCF_THREADS") {
        Ok(v) => Ok(Some(v.trim().parse().context("AQCF_THREADS must be a positive integer")?)),
        Err(_) => Ok(flag),
    }
}

fn load_config(path: Option<&PathBuf>, cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.output_dir {
        cfg.output_dir = d.clone();
    }
    Ok(cfg)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = threads(cli.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Train { config } => {
            let cfg = load_config(Some(config), &cli)?;
            let summary = commands::train(cfg, |m| {
                if m.step % 10 == 0 {
                    eprintln!(
                        "step {:>6} epoch {} stage {} loss {:.4} lambda {:.3}",
                        m.step, m.epoch, m.stage, m.loss, m.mean_lambda
                    );
                }
            })?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Eval { checkpoint, data } => {
            let out = cli
                .output_dir
                .clone()
                .or_else(|| checkpoint.parent().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("."));
            let report = commands::eval(checkpoint, data, &out)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::DiagnosePlateau { config } => {
            let cfg = load_config(config.as_ref(), &cli)?;
            let rows = commands::diagnose_plateau(&cfg)?;
            print!("{}", commands::plateau_csv(&rows)?);
        }
        Command::Encode { text, checkpoint } => {
            let enc = commands::encode(checkpoint, text)?;
            println!("{}", serde_json::to_string_pretty(&enc)?);
        }
        Command::MakeToy { train, test } => {
            let dir = cli.output_dir.clone().unwrap_or_else(|| PathBuf::from("toy"));
            commands::make_toy(&dir, *train, *test, cli.seed.unwrap_or(0))?;
            eprintln!("wrote {}", dir.display());
        }
    }
    Ok(())
}
