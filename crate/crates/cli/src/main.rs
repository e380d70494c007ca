mod commands;
mod config;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::RunConfig;
use signrep_core::synth::Split;

#[derive(Parser)]
#[command(
    name = "signrep",
    about = "Self-supervised sign representation pipeline on synthetic signers",
    version
)]
struct Cli {
    /// Run configuration file (key = value); defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the configured output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override the feature-extraction stride
    #[arg(long, global = true)]
    stride: Option<usize>,

    /// Use activity-weighted video representations
    #[arg(long, global = true)]
    weighted: Option<bool>,

    /// Override the class-distribution KL weight
    #[arg(long, global = true)]
    kappa: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset into data_dir
    Generate {
        /// Also dump the first item's prior targets as JSON
        #[arg(long)]
        dump_priors: bool,
    },
    /// Pretrain the encoder and write checkpoints plus the training log
    Pretrain,
    /// Extract per-video features from a checkpoint into feature stores
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// train, test or both
        #[arg(long, default_value = "both")]
        split: String,
    },
    /// Rank test queries against the training dictionary
    Retrieve {
        /// Directory holding the feature stores (defaults to out_dir)
        #[arg(long)]
        features_dir: Option<PathBuf>,
    },
    /// Build the class probability distribution from a feature store
    Classdist {
        /// Feature store (defaults to out_dir/features_train_weighted.srft)
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Summarize a finished run directory
    Report {
        /// Run directory (defaults to out_dir)
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Print an annotated configuration file with every default
    Defaults,
}

fn resolved_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.display().to_string();
    }
    if let Some(stride) = cli.stride {
        cfg.stride = stride;
    }
    if let Some(weighted) = cli.weighted {
        cfg.weighted = weighted;
    }
    if let Some(kappa) = cli.kappa {
        cfg.kappa = kappa;
    }
    if let Ok(threads) = std::env::var("SIGNREP_THREADS") {
        cfg.threads = threads
            .parse()
            .context("SIGNREP_THREADS must be an integer")?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = resolved_config(&cli)?;
    if cfg.threads > 0 {
        // cap every parallel section in this process
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .ok();
    }
    let out_dir = PathBuf::from(&cfg.out_dir);

    match &cli.command {
        Command::Generate { dump_priors } => {
            commands::log_resolved_config(&cfg, &out_dir)?;
            commands::cmd_generate(&cfg, *dump_priors)
        }
        Command::Pretrain => {
            commands::log_resolved_config(&cfg, &out_dir)?;
            commands::cmd_pretrain(&cfg)
        }
        Command::Extract {
            checkpoint,
            manifest,
            split,
        } => {
            commands::log_resolved_config(&cfg, &out_dir)?;
            let splits: Vec<Split> = match split.as_str() {
                "train" => vec![Split::Train],
                "test" => vec![Split::Test],
                "both" => vec![Split::Train, Split::Test],
                other => anyhow::bail!("unknown split {other}; use train, test or both"),
            };
            commands::cmd_extract(&cfg, checkpoint, manifest, &splits)
        }
        Command::Retrieve { features_dir } => {
            commands::log_resolved_config(&cfg, &out_dir)?;
            let dir = features_dir.clone().unwrap_or_else(|| out_dir.clone());
            commands::cmd_retrieve(&cfg, &dir)
        }
        Command::Classdist { features } => {
            commands::log_resolved_config(&cfg, &out_dir)?;
            let path = features
                .clone()
                .unwrap_or_else(|| out_dir.join("features_train_weighted.srft"));
            commands::cmd_classdist(&cfg, &path)
        }
        Command::Report { run } => {
            let dir = run.clone().unwrap_or_else(|| out_dir.clone());
            commands::log_resolved_config(&cfg, &dir)?;
            commands::cmd_report(&dir)
        }
        Command::Defaults => {
            print!("{}", RunConfig::documented_defaults());
            Ok(())
        }
    }
}
