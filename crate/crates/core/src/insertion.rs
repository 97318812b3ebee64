//! Growing a network by one hidden layer while it trains.
//!
//! A new layer starts out as the identity map, so inserting it does not
//! change what the network computes:
//!
//! - FNN: `W = I`, `b = 0`. Since the predecessor's output is already
//!   ReLU-rectified, `relu(I x + 0) = x`.
//! - ResNet: `W_2 = 0`, so the block is `x + 0 * tanh(W_1 x + b) = x`. `W_1`
//!   is a scaled identity and `b = 0`, which keeps `tanh(W_1 x + b)` away from
//!   zero and therefore gives `W_2` a nonzero gradient.
//!
//! To decide where the layer goes, every candidate slot gets such an
//! identity layer at once (the "fully extended" network). One forward and
//! backward pass over the training data, with no parameter update, yields the
//! gradient of the loss with respect to every new layer's weights. Its scaled
//! squared Frobenius norm `||grad W||_F^2 / h^2` (for ResNets, `grad W_2`)
//! measures how much the loss would drop to first order if that layer were
//! released from its identity constraint. The negated gradient is the
//! Lagrange multiplier of that constraint.

use serde::{Deserialize, Serialize};

use crate::autograd::{backprop, GradientSet};
use crate::error::{Error, Result};
use crate::experiments::dataset::Dataset;
use crate::network::{
    FnnLayerParams, Layers, NetworkKind, NetworkSpec, ParamSet, ResidualBlockParams,
};
use crate::numerics::DenseMatrix;

/// Default scale of `W_1` in a freshly inserted residual block.
pub const DEFAULT_W1_SCALE: f64 = 0.8;

/// Where a new hidden layer can go.
///
/// For an FNN, `index = k` means "after hidden layer `k`" (`1 <= k <= L`), with
/// the new layer taking width `h_k`. For a ResNet, `index = j` means "between
/// hidden layers `j` and `j + 1`" (`1 <= j <= L - 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CandidatePosition {
    pub index: usize,
}

impl CandidatePosition {
    pub fn new(index: usize) -> Self {
        Self { index }
    }
}

/// How the chosen position is picked from the candidate merits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Largest merit.
    Li,
    /// Smallest merit.
    LiOther,
    /// A fixed position regardless of merit.
    Fixed(CandidatePosition),
}

pub fn init_fnn_identity_layer(width: usize) -> Result<FnnLayerParams> {
    if width == 0 {
        return Err(Error::InvalidArgument(
            "layer width must be positive".into(),
        ));
    }
    Ok(FnnLayerParams {
        weight: DenseMatrix::identity(width),
        bias: DenseMatrix::zeros(width, 1),
    })
}

pub fn init_resnet_identity_block(width: usize, w1_scale: f64) -> Result<ResidualBlockParams> {
    if width == 0 {
        return Err(Error::InvalidArgument(
            "block width must be positive".into(),
        ));
    }
    if !w1_scale.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "w1 scale must be finite, got {w1_scale}"
        )));
    }
    Ok(ResidualBlockParams {
        w1: DenseMatrix::identity(width).scale(w1_scale),
        w2: DenseMatrix::zeros(width, width),
        bias: DenseMatrix::zeros(width, 1),
    })
}

pub fn candidate_positions(spec: &NetworkSpec) -> Result<Vec<CandidatePosition>> {
    let hidden = spec.hidden_layers();
    let range = match spec.kind {
        NetworkKind::Fnn => 1..=hidden,
        NetworkKind::ResNet => 1..=hidden.saturating_sub(1),
    };
    if range.is_empty() {
        return Err(Error::NoCandidate(format!(
            "{:?} with widths {:?} has no slot for a new hidden layer",
            spec.kind, spec.widths
        )));
    }
    Ok(range.map(CandidatePosition::new).collect())
}

fn check_position(spec: &NetworkSpec, position: CandidatePosition) -> Result<()> {
    if candidate_positions(spec)?.contains(&position) {
        Ok(())
    } else {
        Err(Error::InvalidPosition {
            position: position.index,
            reason: format!(
                "not a candidate for {:?} with widths {:?}",
                spec.kind, spec.widths
            ),
        })
    }
}

/// Returns `base` with one identity-initialized layer at `position`.
pub fn insert_layer(
    base: &ParamSet,
    position: CandidatePosition,
    w1_scale: f64,
) -> Result<ParamSet> {
    check_position(base.spec(), position)?;
    let width = base.spec().widths[position.index];
    let layers = match base.layers().clone() {
        Layers::Fnn(mut ls) => {
            ls.insert(position.index, init_fnn_identity_layer(width)?);
            Layers::Fnn(ls)
        }
        Layers::ResNet {
            entry,
            mut blocks,
            exit,
        } => {
            blocks.insert(
                position.index - 1,
                init_resnet_identity_block(width, w1_scale)?,
            );
            Layers::ResNet {
                entry,
                blocks,
                exit,
            }
        }
    };
    ParamSet::new(layers)
}

/// Candidate position paired with the index of its new layer inside the
/// fully extended network (FNN: index into the layer list; ResNet: index into
/// the block list).
pub type ExtensionMap = Vec<(CandidatePosition, usize)>;

/// Copies `base` and places an identity layer at every candidate position.
pub fn build_fully_extended(base: &ParamSet, w1_scale: f64) -> Result<(ParamSet, ExtensionMap)> {
    let candidates = candidate_positions(base.spec())?;
    let widths = &base.spec().widths;
    let mut mapping = Vec::with_capacity(candidates.len());
    let layers = match base.layers() {
        Layers::Fnn(ls) => {
            let mut out = Vec::with_capacity(ls.len() + candidates.len());
            let (output, hidden) = ls.split_last().expect("an FNN has an output layer");
            for (k, layer) in hidden.iter().enumerate() {
                out.push(layer.clone());
                mapping.push((CandidatePosition::new(k + 1), out.len()));
                out.push(init_fnn_identity_layer(widths[k + 1])?);
            }
            out.push(output.clone());
            Layers::Fnn(out)
        }
        Layers::ResNet {
            entry,
            blocks,
            exit,
        } => {
            let mut out = Vec::with_capacity(2 * blocks.len());
            for (j, block) in blocks.iter().enumerate() {
                mapping.push((CandidatePosition::new(j + 1), out.len()));
                out.push(init_resnet_identity_block(widths[1], w1_scale)?);
                out.push(block.clone());
            }
            Layers::ResNet {
                entry: entry.clone(),
                blocks: out,
                exit: exit.clone(),
            }
        }
    };
    Ok((ParamSet::new(layers)?, mapping))
}

/// Merit and raw gradients of one candidate's new layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateMerit {
    pub position: CandidatePosition,
    pub width: usize,
    /// `||weight_grad||_F^2 / width^2`.
    pub merit: f64,
    /// FNN: gradient of `W`. ResNet: gradient of `W_2`.
    pub weight_grad: DenseMatrix,
    pub bias_grad: DenseMatrix,
    /// ResNet only: gradient of `W_1`.
    pub inner_weight_grad: Option<DenseMatrix>,
}

impl CandidateMerit {
    /// The constraint multiplier, i.e. the negated gradient of every new
    /// parameter block, in the order weight, bias, inner weight.
    pub fn multiplier(&self) -> Vec<DenseMatrix> {
        let mut out = vec![self.weight_grad.scale(-1.0), self.bias_grad.scale(-1.0)];
        if let Some(w1) = &self.inner_weight_grad {
            out.push(w1.scale(-1.0));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeritReport {
    pub strategy: Strategy,
    pub candidates: Vec<CandidateMerit>,
    pub chosen: CandidatePosition,
}

impl MeritReport {
    pub fn merits(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.merit).collect()
    }

    pub fn merit_of(&self, position: CandidatePosition) -> Option<f64> {
        self.candidates
            .iter()
            .find(|c| c.position == position)
            .map(|c| c.merit)
    }
}

fn choose(strategy: Strategy, candidates: &[CandidateMerit]) -> Result<CandidatePosition> {
    // Strict comparisons keep the smallest position on ties.
    let pick = |better: fn(f64, f64) -> bool| {
        let mut best = &candidates[0];
        for c in &candidates[1..] {
            if better(c.merit, best.merit) {
                best = c;
            }
        }
        best.position
    };
    match strategy {
        Strategy::Li => Ok(pick(|a, b| a > b)),
        Strategy::LiOther => Ok(pick(|a, b| a < b)),
        Strategy::Fixed(p) => {
            if candidates.iter().any(|c| c.position == p) {
                Ok(p)
            } else {
                Err(Error::InvalidPosition {
                    position: p.index,
                    reason: "fixed strategy names a position that is not a candidate".into(),
                })
            }
        }
    }
}

/// Builds the merit report from a gradient of the fully extended network.
pub fn merits_from_gradient(
    grads: &GradientSet,
    mapping: &ExtensionMap,
    strategy: Strategy,
) -> Result<MeritReport> {
    if mapping.is_empty() {
        return Err(Error::NoCandidate("empty extension map".into()));
    }
    let candidates = mapping
        .iter()
        .map(|&(position, slot)| {
            let (width, weight_grad, bias_grad, inner) = match grads.grads.layers() {
                Layers::Fnn(ls) => {
                    let l = ls.get(slot).ok_or_else(|| bad_slot(position, slot))?;
                    (l.weight.rows(), l.weight.clone(), l.bias.clone(), None)
                }
                Layers::ResNet { blocks, .. } => {
                    let b = blocks.get(slot).ok_or_else(|| bad_slot(position, slot))?;
                    (
                        b.w2.rows(),
                        b.w2.clone(),
                        b.bias.clone(),
                        Some(b.w1.clone()),
                    )
                }
            };
            let merit = weight_grad.frobenius_norm_sq() / (width * width) as f64;
            Ok(CandidateMerit {
                position,
                width,
                merit,
                weight_grad,
                bias_grad,
                inner_weight_grad: inner,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let chosen = choose(strategy, &candidates)?;
    Ok(MeritReport {
        strategy,
        candidates,
        chosen,
    })
}

fn bad_slot(position: CandidatePosition, slot: usize) -> Error {
    Error::InvalidPosition {
        position: position.index,
        reason: format!("extension map points at missing layer {slot}"),
    }
}

/// Merits from one full-batch forward/backward pass over `data`. `ext` is
/// only read.
pub fn compute_merits(
    ext: &ParamSet,
    mapping: &ExtensionMap,
    data: &Dataset,
    strategy: Strategy,
) -> Result<MeritReport> {
    let (_, grads) = backprop(ext, data)?;
    merits_from_gradient(&grads, mapping, strategy)
}

/// Merits from one epoch of mini-batches taken in index order. Each batch
/// gradient is weighted by its share of the data, so the accumulated
/// gradient is the full-batch gradient.
pub fn compute_merits_minibatch(
    ext: &ParamSet,
    mapping: &ExtensionMap,
    data: &Dataset,
    batch_size: usize,
    strategy: Strategy,
) -> Result<MeritReport> {
    let n = data.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if batch_size == 0 || batch_size > n {
        return Err(Error::InvalidArgument(format!(
            "batch size must be in 1..={n}, got {batch_size}"
        )));
    }
    let mut total = ext.zeros_like();
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(batch_size) {
        let (_, g) = backprop(ext, &data.subset(chunk))?;
        let weight = chunk.len() as f64 / n as f64;
        for (acc, gt) in total.tensors_mut().into_iter().zip(g.grads.tensors()) {
            for (a, v) in acc.values_mut().iter_mut().zip(gt.values()) {
                *a += weight * v;
            }
        }
    }
    let grads = GradientSet {
        grads: total,
        batch_size: n,
    };
    merits_from_gradient(&grads, mapping, strategy)
}

/// Inserts the layer `report` chose. The fully extended network is not
/// needed any more; the new layer is initialized afresh.
pub fn select_and_insert(base: &ParamSet, report: &MeritReport, w1_scale: f64) -> Result<ParamSet> {
    insert_layer(base, report.chosen, w1_scale)
}

/// Builds the fully extended network, evaluates the merits on `data`, and
/// inserts the chosen layer into `base`. With `batch_size` set, merits come
/// from a mini-batch epoch instead of a single full-batch pass.
pub fn grow(
    base: &ParamSet,
    data: &Dataset,
    strategy: Strategy,
    w1_scale: f64,
    batch_size: Option<usize>,
) -> Result<(ParamSet, MeritReport)> {
    let (ext, mapping) = build_fully_extended(base, w1_scale)?;
    let report = match batch_size {
        Some(b) => compute_merits_minibatch(&ext, &mapping, data, b, strategy)?,
        None => compute_merits(&ext, &mapping, data, strategy)?,
    };
    let grown = select_and_insert(base, &report, w1_scale)?;
    Ok((grown, report))
}
