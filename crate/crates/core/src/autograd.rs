//! Reverse-mode gradients of the mean loss, written out by hand for each
//! network family, and a central-difference oracle to check them against.

use crate::error::{Error, Result};
use crate::experiments::dataset::Dataset;
use crate::network::{
    check_dataset, forward_fnn, forward_resnet, objective, FnnLayerParams, Layers, ParamSet,
    ResidualBlockParams,
};
use crate::numerics::{
    matmul_nt, matmul_tn, relu_derivative, softmax_cross_entropy_batch, DenseMatrix,
};

/// Gradient of the mean loss with respect to every tensor of a `ParamSet`.
///
/// The gradients are stored in a `ParamSet` of identical shape, so tensor
/// `i` of `grads` is the gradient of tensor `i` of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub grads: ParamSet,
    pub batch_size: usize,
}

impl GradientSet {
    pub fn is_congruent_with(&self, params: &ParamSet) -> bool {
        self.grads.spec() == params.spec()
            && self
                .grads
                .tensors()
                .iter()
                .zip(params.tensors())
                .all(|(g, p)| g.shape() == p.shape())
    }

    pub fn flat_values(&self) -> Vec<f64> {
        self.grads.flat_values()
    }
}

/// Mean batch loss and its gradient.
pub fn backprop(params: &ParamSet, batch: &Dataset) -> Result<(f64, GradientSet)> {
    check_dataset(params, batch)?;
    let (loss, layers) = match params.layers() {
        Layers::Fnn(layers) => {
            let (logits, cache) = forward_fnn(params, batch.inputs())?;
            let (loss, delta) = softmax_cross_entropy_batch(&logits, batch.classes())?;
            (
                loss,
                backward_fnn(layers, &cache.states, &cache.pre_activations, delta)?,
            )
        }
        Layers::ResNet {
            entry,
            blocks,
            exit,
        } => {
            let (logits, cache) = forward_resnet(params, batch.inputs())?;
            let (loss, delta) = softmax_cross_entropy_batch(&logits, batch.classes())?;
            (
                loss,
                backward_resnet(
                    entry,
                    blocks,
                    exit,
                    &cache.states,
                    &cache.activations,
                    delta,
                )?,
            )
        }
    };
    Ok((
        loss,
        GradientSet {
            grads: ParamSet::new(layers)?,
            batch_size: batch.len(),
        },
    ))
}

fn backward_fnn(
    layers: &[FnnLayerParams],
    states: &[DenseMatrix],
    pre: &[DenseMatrix],
    mut delta: DenseMatrix,
) -> Result<Layers> {
    let mut grads = Vec::with_capacity(layers.len());
    for k in (0..layers.len()).rev() {
        let weight = matmul_nt(&delta, &states[k])?;
        let bias = delta.row_sums();
        if k > 0 {
            let upstream = matmul_tn(&layers[k].weight, &delta)?;
            delta = upstream.hadamard(&relu_derivative(&pre[k - 1]))?;
        }
        grads.push(FnnLayerParams { weight, bias });
    }
    grads.reverse();
    Ok(Layers::Fnn(grads))
}

fn backward_resnet(
    entry: &DenseMatrix,
    blocks: &[ResidualBlockParams],
    exit: &DenseMatrix,
    states: &[DenseMatrix],
    activations: &[DenseMatrix],
    delta: DenseMatrix,
) -> Result<Layers> {
    let depth = states.len();
    let exit_grad = matmul_nt(&delta, &states[depth - 2])?;
    // Gradient with respect to the current hidden state x^k.
    let mut dx = matmul_tn(exit, &delta)?;
    let mut block_grads = Vec::with_capacity(blocks.len());
    for (k, block) in blocks.iter().enumerate().rev() {
        let input = &states[k + 1];
        let act = &activations[k];
        let w2 = matmul_nt(&dx, act)?;
        let d_act = matmul_tn(&block.w2, &dx)?;
        let dz = d_act.hadamard(&act.map(|a| 1.0 - a * a))?;
        let w1 = matmul_nt(&dz, input)?;
        let bias = dz.row_sums();
        dx = dx.add(&matmul_tn(&block.w1, &dz)?)?;
        block_grads.push(ResidualBlockParams { w1, w2, bias });
    }
    block_grads.reverse();
    let entry_grad = matmul_nt(&dx, &states[0])?;
    debug_assert_eq!(entry_grad.shape(), entry.shape());
    Ok(Layers::ResNet {
        entry: entry_grad,
        blocks: block_grads,
        exit: exit_grad,
    })
}

/// Central differences `(f(theta + h e_j) - f(theta - h e_j)) / 2h` for every
/// scalar parameter.
pub fn finite_diff_gradient(params: &ParamSet, batch: &Dataset, step: f64) -> Result<GradientSet> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    check_dataset(params, batch)?;
    let mut probe = params.clone();
    let mut grads = params.zeros_like();
    for j in 0..params.scalar_count() {
        let orig = *probe.scalar_mut(j).unwrap();
        *probe.scalar_mut(j).unwrap() = orig + step;
        let plus = objective(&probe, batch)?;
        *probe.scalar_mut(j).unwrap() = orig - step;
        let minus = objective(&probe, batch)?;
        *probe.scalar_mut(j).unwrap() = orig;
        *grads.scalar_mut(j).unwrap() = (plus - minus) / (2.0 * step);
    }
    Ok(GradientSet {
        grads,
        batch_size: batch.len(),
    })
}
