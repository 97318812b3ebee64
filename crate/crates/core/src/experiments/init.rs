use rand::distributions::{Distribution, Uniform};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::network::{
    FnnLayerParams, Layers, NetworkKind, NetworkSpec, ParamSet, ResidualBlockParams,
};
use crate::numerics::DenseMatrix;
use crate::rng::{stream, Purpose};

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` entries, the usual default for
/// dense layers. Every weight and bias is drawn from the init stream of
/// `seed`, in canonical tensor order.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Result<ParamSet> {
    spec.validate()?;
    let mut rng = stream(seed, Purpose::Init);
    let w = &spec.widths;
    let layers = match spec.kind {
        NetworkKind::Fnn => Layers::Fnn(
            w.windows(2)
                .map(|p| {
                    let weight = uniform(&mut rng, p[1], p[0], p[0]);
                    let bias = uniform(&mut rng, p[1], 1, p[0]);
                    FnnLayerParams { weight, bias }
                })
                .collect(),
        ),
        NetworkKind::ResNet => {
            let l = spec.hidden_layers();
            let h = w[1];
            let entry = uniform(&mut rng, h, w[0], w[0]);
            let blocks = (1..l)
                .map(|_| ResidualBlockParams {
                    w1: uniform(&mut rng, h, h, h),
                    w2: uniform(&mut rng, h, h, h),
                    bias: uniform(&mut rng, h, 1, h),
                })
                .collect();
            let exit = uniform(&mut rng, w[l + 1], h, h);
            Layers::ResNet {
                entry,
                blocks,
                exit,
            }
        }
    };
    ParamSet::new(layers)
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> DenseMatrix {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    let values = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    DenseMatrix::from_vec(rows, cols, values).expect("positive dims")
}
