//! File formats written by the experiment runner.
//!
//! Layout under the output directory:
//!
//! ```text
//! runs/<arm>-s<seed>.csv          run_id,arm,iteration,train_loss,test_error
//! runs/<arm>-s<seed>.params.json  final parameters (checkpoint format)
//! events.csv                      run_id,arm,iteration,event,position,merit_0,...,param_count
//! aggregate/<arm>.csv             iteration,mean_train_loss,mean_test_error
//! aggregate/index.json            arms with run counts and insertion iterations
//! failures.json                   machine-readable list of failed runs
//! plot/<arm>.<quantity>.dat       "iteration value" series
//! plot/manifest.json              curves and insertion markers
//! ```
//!
//! Floats are written with 17 significant digits so files replay exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{mean_curves, run_id, ArmAggregate, ExperimentResults, ExperimentSpec, RunOutcome};
use crate::error::{Error, Result};
use crate::network::param_count;
use crate::training::{EventKind, TrainingHistory};

pub const RUN_HEADER: &str = "run_id,arm,iteration,train_loss,test_error";
pub const AGGREGATE_HEADER: &str = "iteration,mean_train_loss,mean_test_error";

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

pub fn run_csv(run_id: &str, arm: &str, history: &TrainingHistory) -> String {
    let mut out = String::with_capacity(64 * (history.records.len() + 1));
    out.push_str(RUN_HEADER);
    out.push('\n');
    for r in &history.records {
        let _ = writeln!(
            out,
            "{run_id},{arm},{},{},{}",
            r.iteration,
            float(r.train_loss),
            float(r.test_error)
        );
    }
    out
}

/// Event log rows of all runs, arm-major in spec order. Every run gets a
/// `start` row with its initial parameter count.
pub fn events_csv(runs: &[RunOutcome]) -> String {
    let width = runs
        .iter()
        .filter_map(RunOutcome::history)
        .flat_map(|h| &h.events)
        .filter_map(|e| match &e.kind {
            EventKind::Insertion { report, .. } => Some(report.candidates.len()),
            EventKind::LearningRateChange { .. } => None,
        })
        .max()
        .unwrap_or(0);
    let mut out = String::from("run_id,arm,iteration,event,position");
    for i in 0..width {
        let _ = write!(out, ",merit_{i}");
    }
    out.push_str(",param_count\n");
    let blanks = ",".repeat(width);
    for run in runs {
        let Some(h) = run.history() else { continue };
        let id = run.run_id();
        let _ = writeln!(
            out,
            "{id},{},0,start,{blanks},{}",
            run.arm, h.initial_param_count
        );
        let mut count = h.initial_param_count;
        for e in &h.events {
            match &e.kind {
                EventKind::Insertion {
                    report,
                    param_count_after,
                    ..
                } => {
                    count = *param_count_after;
                    let _ = write!(
                        out,
                        "{id},{},{},insertion,{}",
                        run.arm, e.iteration, report.chosen.index
                    );
                    for i in 0..width {
                        out.push(',');
                        if let Some(c) = report.candidates.get(i) {
                            out.push_str(&float(c.merit));
                        }
                    }
                    let _ = writeln!(out, ",{count}");
                }
                EventKind::LearningRateChange { .. } => {
                    let _ = writeln!(
                        out,
                        "{id},{},{},lr_change,{blanks},{count}",
                        run.arm, e.iteration
                    );
                }
            }
        }
    }
    out
}

pub fn aggregate_csv(agg: &ArmAggregate) -> String {
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for (i, (l, e)) in agg
        .mean_train_loss
        .iter()
        .zip(&agg.mean_test_error)
        .enumerate()
    {
        let _ = writeln!(out, "{i},{},{}", float(*l), float(*e));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateIndexEntry {
    pub arm: String,
    pub file: String,
    pub runs: usize,
    pub insertion_iteration: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub run_id: String,
    pub arm: String,
    pub seed: u64,
    pub error: String,
    pub iteration: Option<usize>,
}

pub fn failure_records(runs: &[RunOutcome]) -> Vec<FailureRecord> {
    runs.iter()
        .filter_map(|r| {
            r.result.as_ref().err().map(|f| FailureRecord {
                run_id: r.run_id(),
                arm: r.arm.clone(),
                seed: r.seed,
                error: f.message.clone(),
                iteration: f.iteration,
            })
        })
        .collect()
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

pub fn write_results(results: &ExperimentResults, out_dir: &Path) -> Result<()> {
    let runs_dir = out_dir.join("runs");
    for run in &results.runs {
        let Some(h) = run.history() else { continue };
        let id = run.run_id();
        write(
            &runs_dir.join(format!("{id}.csv")),
            &run_csv(&id, &run.arm, h),
        )?;
        if run.result.is_ok() {
            write(
                &runs_dir.join(format!("{id}.params.json")),
                &h.final_params.to_checkpoint_json(),
            )?;
        }
    }
    write(&out_dir.join("events.csv"), &events_csv(&results.runs))?;
    write_aggregates(&results.aggregates, out_dir)?;
    let failures = serde_json::to_string_pretty(&failure_records(&results.runs))?;
    write(&out_dir.join("failures.json"), &failures)?;
    Ok(())
}

pub fn write_aggregates(aggregates: &[ArmAggregate], out_dir: &Path) -> Result<()> {
    let dir = out_dir.join("aggregate");
    let mut index = Vec::with_capacity(aggregates.len());
    for agg in aggregates {
        let file = format!("{}.csv", agg.arm);
        write(&dir.join(&file), &aggregate_csv(agg))?;
        index.push(AggregateIndexEntry {
            arm: agg.arm.clone(),
            file,
            runs: agg.runs,
            insertion_iteration: agg.insertion_iteration,
        });
    }
    write(
        &dir.join("index.json"),
        &serde_json::to_string_pretty(&index)?,
    )
}

/// Loss and test-error columns of one run file.
pub fn read_run_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(RUN_HEADER) {
        return Err(parse_error(path, "unexpected header"));
    }
    let mut loss = Vec::new();
    let mut err = Vec::new();
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(parse_error(
                path,
                format!("line {}: expected 5 fields", n + 2),
            ));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| parse_error(path, format!("line {}: {e}", n + 2)))
        };
        let it: usize = f[2]
            .parse()
            .map_err(|_| parse_error(path, format!("line {}: bad iteration", n + 2)))?;
        if it != n {
            return Err(parse_error(
                path,
                format!("line {}: iteration {it} out of order", n + 2),
            ));
        }
        loss.push(num(f[3])?);
        err.push(num(f[4])?);
    }
    Ok((loss, err))
}

/// Rebuilds the aggregates from the run files of `spec` found in `out_dir`.
/// Runs with missing or truncated files are skipped.
pub fn aggregate_from_disk(spec: &ExperimentSpec, out_dir: &Path) -> Result<Vec<ArmAggregate>> {
    let len = spec.total_iterations + 1;
    let mut out = Vec::with_capacity(spec.arms.len());
    for arm in &spec.arms {
        let mut curves = Vec::new();
        for &seed in &spec.seeds {
            let path = out_dir
                .join("runs")
                .join(format!("{}.csv", run_id(&arm.name, seed)));
            if !path.exists() {
                continue;
            }
            let curve = read_run_csv(&path)?;
            if curve.0.len() == len {
                curves.push(curve);
            }
        }
        out.push(mean_curves(
            &arm.name,
            arm.insertion.map(|p| p.iteration),
            len,
            &curves,
        ));
    }
    Ok(out)
}

pub fn read_aggregates(out_dir: &Path) -> Result<Vec<ArmAggregate>> {
    let dir = out_dir.join("aggregate");
    let index_path = dir.join("index.json");
    if !index_path.exists() {
        return Err(Error::Config(format!(
            "no aggregate index at {}",
            index_path.display()
        )));
    }
    let index: Vec<AggregateIndexEntry> = serde_json::from_str(&fs::read_to_string(&index_path)?)?;
    index
        .into_iter()
        .map(|entry| {
            let path = dir.join(&entry.file);
            if !path.exists() {
                return Err(Error::Config(format!(
                    "missing aggregate file {}",
                    path.display()
                )));
            }
            let text = fs::read_to_string(&path)?;
            let mut lines = text.lines();
            if lines.next() != Some(AGGREGATE_HEADER) {
                return Err(parse_error(&path, "unexpected header"));
            }
            let mut loss = Vec::new();
            let mut err = Vec::new();
            for (n, line) in lines.enumerate() {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 3 {
                    return Err(parse_error(
                        &path,
                        format!("line {}: expected 3 fields", n + 2),
                    ));
                }
                let num = |s: &str| {
                    s.parse::<f64>()
                        .map_err(|e| parse_error(&path, format!("line {}: {e}", n + 2)))
                };
                loss.push(num(f[1])?);
                err.push(num(f[2])?);
            }
            Ok(ArmAggregate {
                arm: entry.arm,
                insertion_iteration: entry.insertion_iteration,
                runs: entry.runs,
                mean_train_loss: loss,
                mean_test_error: err,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotCurve {
    pub arm: String,
    pub quantity: String,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotMarker {
    pub arm: String,
    pub iteration: usize,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotManifest {
    pub curves: Vec<PlotCurve>,
    pub events: Vec<PlotMarker>,
}

/// Writes one series file per arm and quantity plus `manifest.json` into
/// `plot_dir`.
pub fn emit_plot_data(aggregates: &[ArmAggregate], plot_dir: &Path) -> Result<PlotManifest> {
    if aggregates.is_empty() {
        return Err(Error::Config("no aggregates to plot".into()));
    }
    let mut manifest = PlotManifest {
        curves: Vec::new(),
        events: Vec::new(),
    };
    for agg in aggregates {
        if agg.mean_train_loss.is_empty() {
            return Err(Error::Config(format!(
                "aggregate for arm {:?} is empty",
                agg.arm
            )));
        }
        for (quantity, series) in [
            ("loss", &agg.mean_train_loss),
            ("test_error", &agg.mean_test_error),
        ] {
            let file = format!("{}.{quantity}.dat", agg.arm);
            let mut text = String::new();
            for (i, v) in series.iter().enumerate() {
                let _ = writeln!(text, "{i} {}", float(*v));
            }
            write(&plot_dir.join(&file), &text)?;
            manifest.curves.push(PlotCurve {
                arm: agg.arm.clone(),
                quantity: quantity.into(),
                file,
            });
        }
        if let Some(it) = agg.insertion_iteration {
            manifest.events.push(PlotMarker {
                arm: agg.arm.clone(),
                iteration: it,
                label: "insertion".into(),
            });
        }
    }
    write(
        &plot_dir.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

/// Parameter counts at the start and after each insertion, for reporting.
pub fn param_count_trace(history: &TrainingHistory) -> Vec<(usize, usize)> {
    let mut out = vec![(0, history.initial_param_count)];
    for e in &history.events {
        if let EventKind::Insertion {
            param_count_after, ..
        } = e.kind
        {
            out.push((e.iteration, param_count_after));
        }
    }
    debug_assert_eq!(
        out.last().map(|p| p.1),
        Some(param_count(history.final_params.spec()))
    );
    out
}

pub fn plot_dir(out_dir: &Path) -> PathBuf {
    out_dir.join("plot")
}
