use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use deepen::experiments::output::{
    aggregate_from_disk, emit_plot_data, plot_dir, read_aggregates, write_aggregates,
};
use deepen::experiments::{run_experiment, ExperimentSpec};
use deepen::SplitDataset;
use serde_json::json;

/// Output directory override, mainly for CI.
const OUT_DIR_ENV: &str = "DEEPEN_OUT_DIR";
const DATASET_FILE: &str = "dataset.csv";

#[derive(Parser)]
#[command(
    name = "deepen",
    version,
    about = "Layer-insertion experiments on the two-spiral task"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the spiral dataset of an experiment and write it to <out-dir>/dataset.csv.
    GenerateData {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the dataset seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Train every arm for every seed and write runs, events, and aggregates.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this training seed instead of the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Recompute the aggregate curves from the run files on disk.
    Aggregate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Write plot-ready series and a manifest from the aggregates.
    PlotData {
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn load(config: &Path) -> Result<ExperimentSpec> {
    ExperimentSpec::load(config).with_context(|| format!("loading {}", config.display()))
}

/// Reads the shared dataset file, generating it on first use.
fn dataset(spec: &ExperimentSpec, dir: &Path) -> Result<SplitDataset> {
    let path = dir.join(DATASET_FILE);
    if path.exists() {
        return SplitDataset::read(&path, 2).with_context(|| format!("reading {}", path.display()));
    }
    let data = spec.data.generate()?;
    data.write(&path)?;
    Ok(data)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData {
            config,
            seed,
            out_dir: dir,
        } => {
            let mut spec = load(&config)?;
            if let Some(seed) = seed {
                spec.data.seed = seed;
            }
            let dir = out_dir(dir);
            let path = dir.join(DATASET_FILE);
            spec.data.generate()?.write(&path)?;
            println!("{}", path.display());
        }
        Command::Run {
            config,
            seed,
            out_dir: dir,
        } => {
            let mut spec = load(&config)?;
            if let Some(seed) = seed {
                spec = spec.with_seeds(vec![seed]);
            }
            let dir = out_dir(dir);
            let data = dataset(&spec, &dir)?;
            let results = run_experiment(&spec, &data, &dir)?;
            for agg in &results.aggregates {
                println!(
                    "{:<12} runs={:<3} final_loss={:.6} final_test_error={:.4}",
                    agg.arm,
                    agg.runs,
                    agg.final_train_loss().unwrap_or(f64::NAN),
                    agg.mean_test_error.last().copied().unwrap_or(f64::NAN)
                );
            }
            let failed: Vec<String> = results.failures().map(|r| r.run_id()).collect();
            if !failed.is_empty() {
                bail!("{} run(s) failed: {}", failed.len(), failed.join(", "));
            }
        }
        Command::Aggregate {
            config,
            out_dir: dir,
        } => {
            let spec = load(&config)?;
            let dir = out_dir(dir);
            let aggregates = aggregate_from_disk(&spec, &dir)?;
            if let Some(empty) = aggregates.iter().find(|a| a.runs == 0) {
                bail!("no complete runs found for arm {}", empty.arm);
            }
            write_aggregates(&aggregates, &dir)?;
        }
        Command::PlotData { out_dir: dir } => {
            let dir = out_dir(dir);
            let aggregates = read_aggregates(&dir)?;
            let manifest = emit_plot_data(&aggregates, &plot_dir(&dir))?;
            println!(
                "{} curves, {} markers in {}",
                manifest.curves.len(),
                manifest.events.len(),
                plot_dir(&dir).display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let causes: Vec<String> = err.chain().skip(1).map(|c| c.to_string()).collect();
            eprintln!(
                "{}",
                json!({ "status": "error", "error": err.to_string(), "causes": causes })
            );
            ExitCode::FAILURE
        }
    }
}
