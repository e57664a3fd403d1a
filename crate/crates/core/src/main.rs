use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use das_dml::config::RunConfig;
use das_dml::dataset::load_csv;
use das_dml::encoder::Checkpoint;
use das_dml::experiment::{ablation_variants, run_comparison, sweep_variants};
use das_dml::train::{evaluate, load_dataset, train};
use das_dml::{DasError, Result};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "das-dml", version, about = "Metric learning with densely-anchored sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run config; defaults are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set das.K=8` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Whether produced embeddings may serve as anchors
    /// (`sampling.produced_as_anchors`).
    #[arg(long, value_name = "BOOL")]
    produced_as_anchors: Option<bool>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let mut config = base.with_overrides(&self.set)?;
        if let Some(flag) = self.produced_as_anchors {
            config.sampling.produced_as_anchors = flag;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic dataset as CSV (label last).
    GenerateData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train one run; writes run.log.jsonl, checkpoint.json and config.json.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the test split of the configured dataset.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluate on this CSV instead of the configured dataset.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        label_col: usize,
        #[arg(long)]
        header: bool,
    },
    /// Ablation: baseline / scaling only / shifting only / both.
    Compare {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Grid sweep over one config key.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dotted key to sweep, e.g. `das.K`.
        #[arg(long)]
        key: String,
        /// Comma-separated JSON values, e.g. `1,2,4,8,16,32`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[arg(long, short)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData { cfg, out } => {
            let dataset = load_dataset(&cfg.load()?)?;
            dataset.save_csv(&out)?;
            log::info!("wrote {} points to {}", dataset.len(), out.display());
        }
        Command::Train { cfg, out } => {
            let mut config = cfg.load()?;
            config.output_dir = Some(out.to_string_lossy().into_owned());
            let outcome = train(config)?;
            if let Some(report) = outcome.log.final_eval() {
                println!("{}", report.to_json_value());
            }
        }
        Command::Evaluate { cfg, checkpoint, data, label_col, header } => {
            let config = cfg.load()?;
            let checkpoint = Checkpoint::load(&checkpoint)?;
            let dataset = match data {
                Some(path) => load_csv(path, label_col, header)?,
                None => load_dataset(&config)?,
            };
            let report = evaluate(&checkpoint, &dataset, &config.eval)?;
            println!("{}", report.to_json_value());
        }
        Command::Compare { cfg, seeds, out } => {
            let table = run_comparison(&cfg.load()?, &ablation_variants(), &seeds)?;
            table.write(&out)?;
            print!("{}", table.to_text());
        }
        Command::Sweep { cfg, key, values, seeds, out } => {
            let values: Vec<Value> = values
                .iter()
                .map(|v| serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.clone())))
                .collect();
            let table = run_comparison(&cfg.load()?, &sweep_variants(&key, &values), &seeds)?;
            table.write(&out)?;
            print!("{}", table.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &DasError) -> u8 {
    if e.is_config_error() {
        2
    } else {
        3
    }
}
