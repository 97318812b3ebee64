//! Spiral-classification experiments: configuration, multi-seed execution,
//! and aggregation.
//!
//! An experiment is a set of arms (architecture plus insertion plan) trained
//! on one shared dataset draw for every seed in its seed list. A given seed
//! initializes every arm with the same baseline parameters, so arms that
//! differ only in their insertion plan share their history up to the
//! insertion point.

pub mod dataset;
pub mod init;
pub mod output;

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::insertion::DEFAULT_W1_SCALE;
use crate::network::NetworkSpec;
use crate::training::{train, InsertionPlan, Optimizer, TrainConfig, TrainError, TrainingHistory};
use dataset::{generate_spirals, split_train_test, SplitDataset};

/// Spiral parameters. The defaults are this repository's frozen choice:
/// with them a one-hidden-layer ReLU net of width 5 stalls while a
/// two-hidden-layer one keeps improving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub n_total: usize,
    pub n_train: usize,
    pub noise_std: f64,
    pub turns: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_total: 600,
            n_train: 450,
            noise_std: 0.02,
            turns: 1.0,
            seed: 2024,
        }
    }
}

impl DataConfig {
    pub fn generate(&self) -> Result<SplitDataset> {
        let all = generate_spirals(self.n_total, self.noise_std, self.turns, self.seed)?;
        split_train_test(&all, self.n_train, self.seed)
    }
}

/// One comparison arm of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    pub name: String,
    pub spec: NetworkSpec,
    pub learning_rate: f64,
    #[serde(default)]
    pub post_insertion_learning_rate: Option<f64>,
    #[serde(default)]
    pub insertion: Option<InsertionPlan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(default)]
    pub data: DataConfig,
    pub total_iterations: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default = "default_w1_scale")]
    pub w1_scale: f64,
    pub arms: Vec<ArmSpec>,
}

fn default_w1_scale() -> f64 {
    DEFAULT_W1_SCALE
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Parse {
                path: path.display().to_string(),
                reason: j.to_string(),
            },
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("experiment spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.arms.is_empty() {
            return Err(Error::Config(format!(
                "experiment {:?} has no arms",
                self.name
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config(format!(
                "experiment {:?} has no seeds",
                self.name
            )));
        }
        let mut names = HashSet::new();
        for arm in &self.arms {
            let ok = !arm.name.is_empty()
                && arm
                    .name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            if !ok {
                return Err(Error::Config(format!(
                    "arm name {:?} must be nonempty ASCII letters, digits, '_' or '-'",
                    arm.name
                )));
            }
            if !names.insert(arm.name.as_str()) {
                return Err(Error::Config(format!("duplicate arm name {:?}", arm.name)));
            }
            self.train_config(arm, self.seeds[0]).validate()?;
        }
        Ok(())
    }

    pub fn train_config(&self, arm: &ArmSpec, seed: u64) -> TrainConfig {
        TrainConfig {
            spec: arm.spec.clone(),
            learning_rate: arm.learning_rate,
            post_insertion_learning_rate: arm.post_insertion_learning_rate,
            total_iterations: self.total_iterations,
            insertion: arm.insertion,
            seed,
            optimizer: self.optimizer,
            w1_scale: self.w1_scale,
        }
    }

    /// Same experiment restricted to one seed.
    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Self {
        self.seeds = seeds;
        self
    }
}

pub fn run_id(arm: &str, seed: u64) -> String {
    format!("{arm}-s{seed}")
}

/// Result of one arm and seed.
#[derive(Debug)]
pub struct RunOutcome {
    pub arm: String,
    pub seed: u64,
    pub result: std::result::Result<TrainingHistory, RunFailure>,
}

impl RunOutcome {
    pub fn run_id(&self) -> String {
        run_id(&self.arm, self.seed)
    }

    /// The recorded history, including the partial one of a diverged run.
    pub fn history(&self) -> Option<&TrainingHistory> {
        match &self.result {
            Ok(h) => Some(h),
            Err(f) => f.partial_history.as_deref(),
        }
    }
}

#[derive(Debug)]
pub struct RunFailure {
    pub message: String,
    pub iteration: Option<usize>,
    pub partial_history: Option<Box<TrainingHistory>>,
}

/// Mean curves of one arm across its successful runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmAggregate {
    pub arm: String,
    pub insertion_iteration: Option<usize>,
    pub runs: usize,
    pub mean_train_loss: Vec<f64>,
    pub mean_test_error: Vec<f64>,
}

impl ArmAggregate {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.mean_train_loss.last().copied()
    }
}

#[derive(Debug)]
pub struct ExperimentResults {
    pub spec: ExperimentSpec,
    /// Arm-major, seeds in the order of the spec.
    pub runs: Vec<RunOutcome>,
    pub aggregates: Vec<ArmAggregate>,
}

impl ExperimentResults {
    pub fn failures(&self) -> impl Iterator<Item = &RunOutcome> {
        self.runs.iter().filter(|r| r.result.is_err())
    }

    pub fn aggregate(&self, arm: &str) -> Option<&ArmAggregate> {
        self.aggregates.iter().find(|a| a.arm == arm)
    }

    pub fn history(&self, arm: &str, seed: u64) -> Option<&TrainingHistory> {
        self.runs
            .iter()
            .find(|r| r.arm == arm && r.seed == seed)
            .and_then(|r| r.result.as_ref().ok())
    }
}

/// Trains every arm for every seed, in parallel, without touching disk.
pub fn execute(spec: &ExperimentSpec, data: &SplitDataset) -> Result<ExperimentResults> {
    spec.validate()?;
    let jobs: Vec<(&ArmSpec, u64)> = spec
        .arms
        .iter()
        .flat_map(|arm| spec.seeds.iter().map(move |&seed| (arm, seed)))
        .collect();
    let runs: Vec<RunOutcome> = jobs
        .par_iter()
        .map(|&(arm, seed)| {
            let result = train(&spec.train_config(arm, seed), data).map_err(|e| match e {
                TrainError::Diverged {
                    iteration, history, ..
                } => RunFailure {
                    message: format!("diverged at iteration {iteration}"),
                    iteration: Some(iteration),
                    partial_history: Some(history),
                },
                TrainError::Failed(err) => RunFailure {
                    message: err.to_string(),
                    iteration: None,
                    partial_history: None,
                },
            });
            RunOutcome {
                arm: arm.name.clone(),
                seed,
                result,
            }
        })
        .collect();
    let aggregates = aggregate_runs(spec, &runs);
    Ok(ExperimentResults {
        spec: spec.clone(),
        runs,
        aggregates,
    })
}

/// Per-arm means over successful runs, summed in seed order.
pub fn aggregate_runs(spec: &ExperimentSpec, runs: &[RunOutcome]) -> Vec<ArmAggregate> {
    spec.arms
        .iter()
        .map(|arm| {
            let histories: Vec<&TrainingHistory> = runs
                .iter()
                .filter(|r| r.arm == arm.name)
                .filter_map(|r| r.result.as_ref().ok())
                .collect();
            let curves: Vec<(Vec<f64>, Vec<f64>)> = histories
                .iter()
                .map(|h| {
                    (
                        h.records.iter().map(|r| r.train_loss).collect(),
                        h.records.iter().map(|r| r.test_error).collect(),
                    )
                })
                .collect();
            mean_curves(
                &arm.name,
                arm.insertion.map(|p| p.iteration),
                spec.total_iterations + 1,
                &curves,
            )
        })
        .collect()
}

pub(crate) fn mean_curves(
    arm: &str,
    insertion_iteration: Option<usize>,
    len: usize,
    curves: &[(Vec<f64>, Vec<f64>)],
) -> ArmAggregate {
    let mut loss = vec![0.0; len];
    let mut err = vec![0.0; len];
    for (l, e) in curves {
        for i in 0..len {
            loss[i] += l[i];
            err[i] += e[i];
        }
    }
    let n = curves.len() as f64;
    if !curves.is_empty() {
        loss.iter_mut().chain(err.iter_mut()).for_each(|v| *v /= n);
    } else {
        loss.fill(f64::NAN);
        err.fill(f64::NAN);
    }
    ArmAggregate {
        arm: arm.to_string(),
        insertion_iteration,
        runs: curves.len(),
        mean_train_loss: loss,
        mean_test_error: err,
    }
}

/// Trains everything and writes run, event, aggregate, and failure files
/// under `out_dir`.
pub fn run_experiment(
    spec: &ExperimentSpec,
    data: &SplitDataset,
    out_dir: &Path,
) -> Result<ExperimentResults> {
    let results = execute(spec, data)?;
    output::write_results(&results, out_dir)?;
    Ok(results)
}
