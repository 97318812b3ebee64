//! Gradient-descent training with an optional layer insertion mid-run.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::{backprop, GradientSet};
use crate::error::{Error, Result};
use crate::experiments::dataset::SplitDataset;
use crate::experiments::init::init_params;
use crate::insertion::{grow, CandidatePosition, MeritReport, Strategy, DEFAULT_W1_SCALE};
use crate::network::{objective, param_count, test_error, NetworkSpec, ParamSet};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    FullBatchGd,
    /// One iteration is one mini-batch step. The training set is reshuffled
    /// every epoch and cut into contiguous batches.
    MiniBatchSgd { batch_size: usize },
}

/// When and how to grow the network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InsertionPlan {
    /// Number of parameter updates made before the layer is inserted.
    pub iteration: usize,
    pub strategy: Strategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub spec: NetworkSpec,
    pub learning_rate: f64,
    /// Learning rate after the insertion; defaults to `learning_rate`.
    #[serde(default)]
    pub post_insertion_learning_rate: Option<f64>,
    pub total_iterations: usize,
    #[serde(default)]
    pub insertion: Option<InsertionPlan>,
    pub seed: u64,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default = "default_w1_scale")]
    pub w1_scale: f64,
}

fn default_w1_scale() -> f64 {
    DEFAULT_W1_SCALE
}

impl TrainConfig {
    pub fn new(spec: NetworkSpec, learning_rate: f64, total_iterations: usize, seed: u64) -> Self {
        Self {
            spec,
            learning_rate,
            post_insertion_learning_rate: None,
            total_iterations,
            insertion: None,
            seed,
            optimizer: Optimizer::FullBatchGd,
            w1_scale: DEFAULT_W1_SCALE,
        }
    }

    pub fn with_insertion(mut self, iteration: usize, strategy: Strategy) -> Self {
        self.insertion = Some(InsertionPlan {
            iteration,
            strategy,
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let positive = |lr: f64| lr.is_finite() && lr > 0.0;
        if !positive(self.learning_rate)
            || !self.post_insertion_learning_rate.is_none_or(positive)
        {
            return Err(Error::Config(
                "learning rates must be positive and finite".into(),
            ));
        }
        if let Some(plan) = self.insertion {
            if plan.iteration >= self.total_iterations {
                return Err(Error::Config(format!(
                    "insertion at iteration {} but only {} iterations",
                    plan.iteration, self.total_iterations
                )));
            }
        }
        if let Optimizer::MiniBatchSgd { batch_size: 0 } = self.optimizer {
            return Err(Error::Config("mini-batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub train_loss: f64,
    pub test_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    Insertion {
        report: MeritReport,
        param_count_before: usize,
        param_count_after: usize,
        /// Training loss of the baseline and of the grown network at the
        /// insertion point. They agree up to rounding.
        loss_before: f64,
        loss_after: f64,
        widths_after: Vec<usize>,
    },
    LearningRateChange {
        from: f64,
        to: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub iteration: usize,
    pub kind: EventKind,
}

impl Event {
    pub fn chosen_position(&self) -> Option<CandidatePosition> {
        match &self.kind {
            EventKind::Insertion { report, .. } => Some(report.chosen),
            EventKind::LearningRateChange { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingHistory {
    /// One record per iteration `0..=total_iterations`; record `n` describes
    /// the parameters after `n` updates.
    pub records: Vec<IterationRecord>,
    pub events: Vec<Event>,
    pub initial_param_count: usize,
    pub final_params: ParamSet,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training diverged at iteration {iteration} (loss {loss})")]
    Diverged {
        iteration: usize,
        loss: f64,
        history: Box<TrainingHistory>,
    },
    #[error(transparent)]
    Failed(#[from] Error),
}

/// `params - lr * grads`. A zero learning rate returns the parameters
/// unchanged.
pub fn gd_step(params: &ParamSet, grads: &GradientSet, lr: f64) -> Result<ParamSet> {
    if !grads.is_congruent_with(params) {
        return Err(Error::Shape(
            "gradient does not match the parameter set".into(),
        ));
    }
    if !(lr >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be nonnegative, got {lr}"
        )));
    }
    let mut next = params.clone();
    if lr == 0.0 {
        return Ok(next);
    }
    for (p, g) in next.tensors_mut().into_iter().zip(grads.grads.tensors()) {
        for (pv, gv) in p.values_mut().iter_mut().zip(g.values()) {
            *pv -= lr * gv;
        }
    }
    Ok(next)
}

/// Trains a network initialized from `config.seed` on `data.train`,
/// recording the training loss and test error after every update.
pub fn train(
    config: &TrainConfig,
    data: &SplitDataset,
) -> std::result::Result<TrainingHistory, TrainError> {
    config.validate()?;
    let params = init_params(&config.spec, config.seed)?;
    train_from(config, params, data)
}

/// Like [`train`], starting from the given parameters.
pub fn train_from(
    config: &TrainConfig,
    mut params: ParamSet,
    data: &SplitDataset,
) -> std::result::Result<TrainingHistory, TrainError> {
    config.validate()?;
    if params.spec() != &config.spec {
        return Err(
            Error::Config("initial parameters do not match the configured spec".into()).into(),
        );
    }
    let train_set = &data.train;
    let mut lr = config.learning_rate;
    let mut records = Vec::with_capacity(config.total_iterations + 1);
    let mut events = Vec::new();
    let initial_param_count = param_count(params.spec());
    let mut batches = BatchStream::new(config, train_set.len());

    let diverged =
        |iteration, loss, records: Vec<IterationRecord>, events, params| TrainError::Diverged {
            iteration,
            loss,
            history: Box::new(TrainingHistory {
                records,
                events,
                initial_param_count,
                final_params: params,
            }),
        };

    // Full-batch: the pass that yields the next update's gradient also
    // yields the loss recorded for the current state.
    let mut pending = match batches {
        None => Some(backprop(&params, train_set)?),
        Some(_) => None,
    };

    for n in 0..=config.total_iterations {
        let loss = match &pending {
            Some((loss, _)) => *loss,
            None => objective(&params, train_set)?,
        };
        let err = test_error(&params, &data.test)?;
        records.push(IterationRecord {
            iteration: n,
            train_loss: loss,
            test_error: err,
        });
        if !loss.is_finite() || !params.is_finite() {
            return Err(diverged(n, loss, records, events, params));
        }

        if let Some(plan) = config.insertion.filter(|p| p.iteration == n) {
            let merit_batch = match config.optimizer {
                Optimizer::FullBatchGd => None,
                Optimizer::MiniBatchSgd { batch_size } => Some(batch_size.min(train_set.len())),
            };
            let (grown, report) = grow(
                &params,
                train_set,
                plan.strategy,
                config.w1_scale,
                merit_batch,
            )?;
            let before = param_count(params.spec());
            params = grown;
            if batches.is_none() {
                pending = Some(backprop(&params, train_set)?);
            }
            let loss_after = match &pending {
                Some((l, _)) => *l,
                None => objective(&params, train_set)?,
            };
            events.push(Event {
                iteration: n,
                kind: EventKind::Insertion {
                    report,
                    param_count_before: before,
                    param_count_after: param_count(params.spec()),
                    loss_before: loss,
                    loss_after,
                    widths_after: params.spec().widths.clone(),
                },
            });
            if let Some(next) = config
                .post_insertion_learning_rate
                .filter(|&next| next != lr)
            {
                events.push(Event {
                    iteration: n,
                    kind: EventKind::LearningRateChange { from: lr, to: next },
                });
                lr = next;
            }
        }

        if n == config.total_iterations {
            break;
        }
        params = match (&mut batches, pending.take()) {
            (None, Some((_, grads))) => {
                let next = gd_step(&params, &grads, lr)?;
                pending = Some(backprop(&next, train_set)?);
                next
            }
            (Some(stream), _) => {
                let batch = train_set.subset(&stream.next_batch());
                let (_, grads) = backprop(&params, &batch)?;
                gd_step(&params, &grads, lr)?
            }
            (None, None) => unreachable!("full-batch gradient is always computed ahead"),
        };
    }

    Ok(TrainingHistory {
        records,
        events,
        initial_param_count,
        final_params: params,
    })
}

/// Per-epoch reshuffled batches of training indices.
struct BatchStream {
    rng: rand_chacha::ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
}

impl BatchStream {
    fn new(config: &TrainConfig, n: usize) -> Option<Self> {
        match config.optimizer {
            Optimizer::FullBatchGd => None,
            Optimizer::MiniBatchSgd { batch_size } => Some(Self {
                rng: stream(config.seed, Purpose::Shuffle),
                order: (0..n).collect(),
                cursor: n,
                batch_size: batch_size.min(n),
            }),
        }
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        batch
    }
}
