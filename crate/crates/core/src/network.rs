//! Architecture descriptors, parameter containers, and forward propagation.
//!
//! Two families are supported:
//!
//! - `Fnn`: `x^k = relu(W^k x^{k-1} + b^k)` for every hidden layer, followed by
//!   an affine output layer `W^{L+1} x^L + b^{L+1}`.
//! - `ResNet`: a bias-free entry map `x^1 = W^1 x^0`, residual blocks
//!   `x^k = x^{k-1} + W_2^k tanh(W_1^k x^{k-1} + b^k)`, and a bias-free exit map.
//!
//! Forward passes are batched: inputs are `h_0 x B` with one sample per column.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::dataset::Dataset;
use crate::numerics::{matmul, relu, softmax_cross_entropy_batch, tanh_act, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkKind {
    Fnn,
    ResNet,
}

/// Layer widths `h_0, ..., h_{L+1}` of a network family.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub kind: NetworkKind,
    pub widths: Vec<usize>,
}

impl NetworkSpec {
    pub fn new(kind: NetworkKind, widths: Vec<usize>) -> Result<Self> {
        let spec = Self { kind, widths };
        spec.validate()?;
        Ok(spec)
    }

    pub fn fnn(widths: &[usize]) -> Result<Self> {
        Self::new(NetworkKind::Fnn, widths.to_vec())
    }

    pub fn resnet(widths: &[usize]) -> Result<Self> {
        Self::new(NetworkKind::ResNet, widths.to_vec())
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.widths;
        if w.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least input and output widths, got {w:?}"
            )));
        }
        if w.contains(&0) {
            return Err(Error::InvalidSpec(format!(
                "widths must be positive, got {w:?}"
            )));
        }
        if self.kind == NetworkKind::ResNet {
            if w.len() < 3 {
                return Err(Error::InvalidSpec(format!(
                    "a ResNet needs at least one hidden layer, got {w:?}"
                )));
            }
            let hidden = &w[1..w.len() - 1];
            if hidden.iter().any(|&h| h != hidden[0]) {
                return Err(Error::InvalidSpec(format!(
                    "ResNet hidden widths must be equal, got {w:?}"
                )));
            }
        }
        Ok(())
    }

    /// Number of hidden layers `L`.
    pub fn hidden_layers(&self) -> usize {
        self.widths.len() - 2
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        self.widths[self.widths.len() - 1]
    }
}

/// Total number of trainable scalars for `spec`.
pub fn param_count(spec: &NetworkSpec) -> usize {
    let w = &spec.widths;
    match spec.kind {
        NetworkKind::Fnn => w.windows(2).map(|p| p[1] * p[0] + p[1]).sum(),
        NetworkKind::ResNet => {
            let l = spec.hidden_layers();
            let h = w[1];
            h * w[0] + (l - 1) * (2 * h * h + h) + w[l + 1] * w[l]
        }
    }
}

/// `W` is `h_k x h_{k-1}`, `b` is `h_k x 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FnnLayerParams {
    pub weight: DenseMatrix,
    pub bias: DenseMatrix,
}

/// One residual block `x + w2 * tanh(w1 * x + bias)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlockParams {
    pub w1: DenseMatrix,
    pub w2: DenseMatrix,
    pub bias: DenseMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layers {
    /// Hidden layers in order, then the output layer.
    Fnn(Vec<FnnLayerParams>),
    ResNet {
        entry: DenseMatrix,
        blocks: Vec<ResidualBlockParams>,
        exit: DenseMatrix,
    },
}

/// The trainable parameters of a network, with their architecture.
///
/// The same container also carries gradients (see `autograd::GradientSet`),
/// so its tensors can be walked in one canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    spec: NetworkSpec,
    layers: Layers,
}

impl ParamSet {
    /// Validates shapes and derives the spec from them.
    pub fn new(layers: Layers) -> Result<Self> {
        let spec = match &layers {
            Layers::Fnn(ls) => {
                if ls.is_empty() {
                    return Err(Error::InvalidSpec("FNN needs at least one layer".into()));
                }
                let mut widths = vec![ls[0].weight.cols()];
                for (k, layer) in ls.iter().enumerate() {
                    let (rows, cols) = layer.weight.shape();
                    if cols != *widths.last().unwrap() {
                        return Err(Error::Shape(format!(
                            "layer {}: weight is {rows}x{cols}, previous width {}",
                            k + 1,
                            widths.last().unwrap()
                        )));
                    }
                    if layer.bias.shape() != (rows, 1) {
                        return Err(Error::Shape(format!(
                            "layer {}: bias is {:?}, expected ({rows}, 1)",
                            k + 1,
                            layer.bias.shape()
                        )));
                    }
                    widths.push(rows);
                }
                NetworkSpec::new(NetworkKind::Fnn, widths)?
            }
            Layers::ResNet {
                entry,
                blocks,
                exit,
            } => {
                let h = entry.rows();
                if exit.cols() != h {
                    return Err(Error::Shape(format!(
                        "exit map is {:?}, hidden width {h}",
                        exit.shape()
                    )));
                }
                for (k, b) in blocks.iter().enumerate() {
                    if b.w1.shape() != (h, h) || b.w2.shape() != (h, h) || b.bias.shape() != (h, 1)
                    {
                        return Err(Error::Shape(format!(
                            "block {k}: w1 {:?}, w2 {:?}, bias {:?}, hidden width {h}",
                            b.w1.shape(),
                            b.w2.shape(),
                            b.bias.shape()
                        )));
                    }
                }
                let mut widths = vec![entry.cols()];
                widths.extend(std::iter::repeat_n(h, blocks.len() + 1));
                widths.push(exit.rows());
                NetworkSpec::new(NetworkKind::ResNet, widths)?
            }
        };
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &Layers {
        &self.layers
    }

    pub fn into_layers(self) -> Layers {
        self.layers
    }

    /// All tensors in canonical order: FNN `W^1, b^1, W^2, b^2, ...`;
    /// ResNet `W^1, (W_1, W_2, b) per block, W^{L+1}`.
    pub fn tensors(&self) -> Vec<&DenseMatrix> {
        match &self.layers {
            Layers::Fnn(ls) => ls.iter().flat_map(|l| [&l.weight, &l.bias]).collect(),
            Layers::ResNet {
                entry,
                blocks,
                exit,
            } => {
                let mut out = vec![entry];
                for b in blocks {
                    out.extend([&b.w1, &b.w2, &b.bias]);
                }
                out.push(exit);
                out
            }
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DenseMatrix> {
        match &mut self.layers {
            Layers::Fnn(ls) => ls
                .iter_mut()
                .flat_map(|l| [&mut l.weight, &mut l.bias])
                .collect(),
            Layers::ResNet {
                entry,
                blocks,
                exit,
            } => {
                let mut out = vec![entry];
                for b in blocks {
                    out.extend([&mut b.w1, &mut b.w2, &mut b.bias]);
                }
                out.push(exit);
                out
            }
        }
    }

    /// Number of scalar entries actually stored.
    pub fn scalar_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// All scalars flattened in canonical order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.values().iter().copied())
            .collect()
    }

    /// Mutable access to scalar `index` in canonical order.
    pub fn scalar_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for t in self.tensors_mut() {
            if index < t.len() {
                return Some(&mut t.values_mut()[index]);
            }
            index -= t.len();
        }
        None
    }

    /// A parameter set of the same shape filled with zeros.
    pub fn zeros_like(&self) -> ParamSet {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.values_mut().fill(0.0);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn fnn_layers(&self) -> Option<&[FnnLayerParams]> {
        match &self.layers {
            Layers::Fnn(ls) => Some(ls),
            Layers::ResNet { .. } => None,
        }
    }

    pub fn resnet_blocks(&self) -> Option<&[ResidualBlockParams]> {
        match &self.layers {
            Layers::ResNet { blocks, .. } => Some(blocks),
            Layers::Fnn(_) => None,
        }
    }
}

/// Intermediate values of a batched forward pass, one sample per column.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `x^0, ..., x^{L+1}`.
    pub states: Vec<DenseMatrix>,
    /// FNN: `W^k x^{k-1} + b^k` for `k = 1..=L+1`.
    /// ResNet: the block pre-activations `W_1 x^{k-1} + b`.
    pub pre_activations: Vec<DenseMatrix>,
    /// ResNet only: `tanh` of each block pre-activation.
    pub activations: Vec<DenseMatrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &DenseMatrix {
        self.states.last().expect("cache always holds the input")
    }
}

fn check_input(spec: &NetworkSpec, input: &DenseMatrix) -> Result<()> {
    if input.rows() != spec.input_dim() {
        return Err(Error::Shape(format!(
            "input has {} rows, network expects {}",
            input.rows(),
            spec.input_dim()
        )));
    }
    Ok(())
}

pub fn forward_fnn(params: &ParamSet, input: &DenseMatrix) -> Result<(DenseMatrix, ForwardCache)> {
    let Layers::Fnn(layers) = &params.layers else {
        return Err(Error::InvalidArgument(
            "forward_fnn called on a ResNet".into(),
        ));
    };
    check_input(&params.spec, input)?;
    let mut states = vec![input.clone()];
    let mut pre_activations = Vec::with_capacity(layers.len());
    let last = layers.len() - 1;
    for (k, layer) in layers.iter().enumerate() {
        let z = matmul(&layer.weight, states.last().unwrap())?.add_column(&layer.bias)?;
        let x = if k == last { z.clone() } else { relu(&z) };
        pre_activations.push(z);
        states.push(x);
    }
    let output = states.last().unwrap().clone();
    Ok((
        output,
        ForwardCache {
            states,
            pre_activations,
            activations: Vec::new(),
        },
    ))
}

pub fn forward_resnet(
    params: &ParamSet,
    input: &DenseMatrix,
) -> Result<(DenseMatrix, ForwardCache)> {
    let Layers::ResNet {
        entry,
        blocks,
        exit,
    } = &params.layers
    else {
        return Err(Error::InvalidArgument(
            "forward_resnet called on an FNN".into(),
        ));
    };
    check_input(&params.spec, input)?;
    let mut states = vec![input.clone(), matmul(entry, input)?];
    let mut pre_activations = Vec::with_capacity(blocks.len());
    let mut activations = Vec::with_capacity(blocks.len());
    for block in blocks {
        let x = states.last().unwrap();
        let z = matmul(&block.w1, x)?.add_column(&block.bias)?;
        let a = tanh_act(&z);
        let next = x.add(&matmul(&block.w2, &a)?)?;
        pre_activations.push(z);
        activations.push(a);
        states.push(next);
    }
    let output = matmul(exit, states.last().unwrap())?;
    states.push(output.clone());
    Ok((
        output,
        ForwardCache {
            states,
            pre_activations,
            activations,
        },
    ))
}

/// Dispatches on the network family.
pub fn forward(params: &ParamSet, input: &DenseMatrix) -> Result<(DenseMatrix, ForwardCache)> {
    match params.spec.kind {
        NetworkKind::Fnn => forward_fnn(params, input),
        NetworkKind::ResNet => forward_resnet(params, input),
    }
}

fn check_data(spec: &NetworkSpec, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.feature_dim() != spec.input_dim() || data.num_classes() != spec.output_dim() {
        return Err(Error::Shape(format!(
            "data is {}-d with {} classes, network maps {} -> {}",
            data.feature_dim(),
            data.num_classes(),
            spec.input_dim(),
            spec.output_dim()
        )));
    }
    Ok(())
}

pub(crate) fn check_dataset(params: &ParamSet, data: &Dataset) -> Result<()> {
    check_data(&params.spec, data)
}

/// Mean softmax cross entropy of the network over `data`.
pub fn objective(params: &ParamSet, data: &Dataset) -> Result<f64> {
    check_data(&params.spec, data)?;
    let (logits, _) = forward(params, data.inputs())?;
    Ok(softmax_cross_entropy_batch(&logits, data.classes())?.0)
}

/// Index of the largest output; ties go to the lowest index.
pub fn classify(params: &ParamSet, input: &DenseMatrix) -> Result<usize> {
    if input.cols() != 1 {
        return Err(Error::Shape(format!(
            "classify expects a column vector, got {:?}",
            input.shape()
        )));
    }
    let (out, _) = forward(params, input)?;
    Ok(out.argmax_column(0))
}

/// Fraction of `data` whose predicted class differs from the label.
pub fn test_error(params: &ParamSet, data: &Dataset) -> Result<f64> {
    check_data(&params.spec, data)?;
    let (out, _) = forward(params, data.inputs())?;
    let wrong = (0..data.len())
        .filter(|&j| out.argmax_column(j) != data.classes()[j])
        .count();
    Ok(wrong as f64 / data.len() as f64)
}

/// On-disk form of a `ParamSet`.
///
/// ```json
/// {"kind": "fnn", "widths": [2, 5, 2],
///  "layers": [{"weight": [...], "bias": [...]}, {"weight": [...], "bias": [...]}]}
/// ```
///
/// For a ResNet the first entry holds only `weight` (the entry map), each
/// block holds `w1`, `w2`, `bias`, and the last entry holds only `weight`
/// (the exit map). Matrices are flattened row-major; shapes follow from
/// `widths`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kind: NetworkKind,
    pub widths: Vec<usize>,
    pub layers: Vec<CheckpointLayer>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckpointLayer {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w1: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w2: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Vec<f64>>,
}

impl From<&ParamSet> for Checkpoint {
    fn from(params: &ParamSet) -> Self {
        let flat = |m: &DenseMatrix| Some(m.values().to_vec());
        let layers = match &params.layers {
            Layers::Fnn(ls) => ls
                .iter()
                .map(|l| CheckpointLayer {
                    weight: flat(&l.weight),
                    bias: flat(&l.bias),
                    ..Default::default()
                })
                .collect(),
            Layers::ResNet {
                entry,
                blocks,
                exit,
            } => {
                let mut out = vec![CheckpointLayer {
                    weight: flat(entry),
                    ..Default::default()
                }];
                out.extend(blocks.iter().map(|b| CheckpointLayer {
                    w1: flat(&b.w1),
                    w2: flat(&b.w2),
                    bias: flat(&b.bias),
                    ..Default::default()
                }));
                out.push(CheckpointLayer {
                    weight: flat(exit),
                    ..Default::default()
                });
                out
            }
        };
        Checkpoint {
            kind: params.spec.kind,
            widths: params.spec.widths.clone(),
            layers,
        }
    }
}

impl TryFrom<Checkpoint> for ParamSet {
    type Error = Error;

    fn try_from(cp: Checkpoint) -> Result<Self> {
        let spec = NetworkSpec::new(cp.kind, cp.widths)?;
        let w = &spec.widths;
        let take = |field: Option<Vec<f64>>, name: &str, k: usize, rows: usize, cols: usize| {
            let values =
                field.ok_or_else(|| Error::Config(format!("checkpoint layer {k} lacks {name}")))?;
            DenseMatrix::from_vec(rows, cols, values)
        };
        let layers = match spec.kind {
            NetworkKind::Fnn => {
                if cp.layers.len() != w.len() - 1 {
                    return Err(Error::Config(format!(
                        "checkpoint has {} layers, widths imply {}",
                        cp.layers.len(),
                        w.len() - 1
                    )));
                }
                let ls = cp
                    .layers
                    .into_iter()
                    .enumerate()
                    .map(|(k, l)| {
                        Ok(FnnLayerParams {
                            weight: take(l.weight, "weight", k, w[k + 1], w[k])?,
                            bias: take(l.bias, "bias", k, w[k + 1], 1)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Layers::Fnn(ls)
            }
            NetworkKind::ResNet => {
                let l = spec.hidden_layers();
                if cp.layers.len() != l + 1 {
                    return Err(Error::Config(format!(
                        "checkpoint has {} layers, widths imply {}",
                        cp.layers.len(),
                        l + 1
                    )));
                }
                let h = w[1];
                let mut it = cp.layers.into_iter();
                let entry = take(it.next().unwrap().weight, "weight", 0, h, w[0])?;
                let mut blocks = Vec::with_capacity(l - 1);
                for k in 1..l {
                    let b = it.next().unwrap();
                    blocks.push(ResidualBlockParams {
                        w1: take(b.w1, "w1", k, h, h)?,
                        w2: take(b.w2, "w2", k, h, h)?,
                        bias: take(b.bias, "bias", k, h, 1)?,
                    });
                }
                let exit = take(it.next().unwrap().weight, "weight", l, w[l + 1], h)?;
                Layers::ResNet {
                    entry,
                    blocks,
                    exit,
                }
            }
        };
        ParamSet::new(layers)
    }
}

impl ParamSet {
    pub fn to_checkpoint_json(&self) -> String {
        serde_json::to_string_pretty(&Checkpoint::from(self)).expect("checkpoint serializes")
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let cp: Checkpoint = serde_json::from_str(text)?;
        ParamSet::try_from(cp)
    }
}
