#![allow(dead_code)]

use deepen::autograd::{backprop, finite_diff_gradient};
use deepen::network::{forward, NetworkKind, NetworkSpec};
use deepen::rng::{stream, Purpose};
use deepen::{generate_spirals, init_params, Dataset, ParamSet};
use rand::Rng;

pub const FD_STEP: f64 = 1e-6;

/// Random small architecture with at most 60 parameters.
pub fn random_spec(kind: NetworkKind, seed: u64) -> NetworkSpec {
    let mut rng = stream(seed, Purpose::Shuffle);
    loop {
        let spec = match kind {
            NetworkKind::Fnn => {
                let hidden = rng.gen_range(1..=3);
                let mut w = vec![2];
                w.extend((0..hidden).map(|_| rng.gen_range(1..=5)));
                w.push(2);
                NetworkSpec::fnn(&w).unwrap()
            }
            NetworkKind::ResNet => {
                let hidden = rng.gen_range(2..=3);
                let h = rng.gen_range(2..=3);
                let mut w = vec![2];
                w.extend(std::iter::repeat(h).take(hidden));
                w.push(2);
                NetworkSpec::resnet(&w).unwrap()
            }
        };
        if deepen::param_count(&spec) <= 60 {
            return spec;
        }
    }
}

/// Sign pattern of every hidden ReLU pre-activation over the batch.
fn relu_pattern(params: &ParamSet, data: &Dataset) -> Vec<bool> {
    if params.spec().kind != NetworkKind::Fnn {
        return Vec::new();
    }
    let (_, cache) = forward(params, data.inputs()).unwrap();
    let hidden = cache.pre_activations.len() - 1;
    cache.pre_activations[..hidden]
        .iter()
        .flat_map(|z| z.values().iter().map(|&v| v > 0.0))
        .collect()
}

/// Coordinates whose central difference straddles a ReLU kink: a hidden
/// pre-activation is within the step of zero, so perturbing the coordinate
/// flips some unit on or off.
pub fn kink_coordinates(params: &ParamSet, data: &Dataset, step: f64) -> Vec<bool> {
    let base = relu_pattern(params, data);
    let mut probe = params.clone();
    (0..params.scalar_count())
        .map(|j| {
            if base.is_empty() {
                return false;
            }
            let orig = *probe.scalar_mut(j).unwrap();
            *probe.scalar_mut(j).unwrap() = orig + step;
            let plus = relu_pattern(&probe, data);
            *probe.scalar_mut(j).unwrap() = orig - step;
            let minus = relu_pattern(&probe, data);
            *probe.scalar_mut(j).unwrap() = orig;
            plus != base || minus != base
        })
        .collect()
}

pub struct GradCheck {
    /// Largest `|analytic - numeric| / |analytic|` over compared coordinates.
    pub max_rel_error: f64,
    /// Analytic value at the coordinate attaining `max_rel_error`.
    pub worst_analytic: f64,
    /// Whether every compared coordinate satisfies
    /// `|a - f| <= 1e-5 |a| + roundoff_floor`.
    pub within_roundoff: bool,
    pub roundoff_floor: f64,
    pub compared: usize,
    pub skipped_kinks: usize,
}

/// Absolute error a central difference picks up from rounding the objective:
/// a few ulps of `f`, divided by `2 * step`.
pub fn roundoff_floor(objective: f64, step: f64) -> f64 {
    16.0 * f64::EPSILON * objective.abs().max(1.0) / (2.0 * step)
}

/// Backprop against central differences on every coordinate with
/// `|analytic| > 1e-8`, skipping ReLU-kink coordinates.
pub fn grad_check(params: &ParamSet, data: &Dataset) -> GradCheck {
    let (loss, grads) = backprop(params, data).unwrap();
    let analytic = grads.flat_values();
    let numeric = finite_diff_gradient(params, data, FD_STEP)
        .unwrap()
        .flat_values();
    let kinks = kink_coordinates(params, data, FD_STEP);
    let floor = roundoff_floor(loss, FD_STEP);
    let mut out = GradCheck {
        max_rel_error: 0.0,
        worst_analytic: 0.0,
        within_roundoff: true,
        roundoff_floor: floor,
        compared: 0,
        skipped_kinks: 0,
    };
    for ((a, f), kink) in analytic.iter().zip(&numeric).zip(kinks) {
        if kink {
            out.skipped_kinks += 1;
            continue;
        }
        if a.abs() <= 1e-8 {
            continue;
        }
        out.compared += 1;
        let rel = (a - f).abs() / a.abs();
        if rel > out.max_rel_error {
            out.max_rel_error = rel;
            out.worst_analytic = *a;
        }
        if (a - f).abs() > 1e-5 * a.abs() + floor {
            out.within_roundoff = false;
        }
    }
    out
}

pub fn random_instance(kind: NetworkKind, seed: u64) -> (ParamSet, Dataset) {
    let spec = random_spec(kind, seed);
    let params = init_params(&spec, seed).unwrap();
    let data = generate_spirals(16, 0.1, 1.0, seed).unwrap();
    (params, data)
}

/// `n` inputs uniform in `[-3, 3]^2`, one per column.
pub fn random_inputs(n: usize, seed: u64) -> deepen::DenseMatrix {
    let mut rng = stream(seed, Purpose::Data);
    let values = (0..2 * n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    deepen::DenseMatrix::from_vec(2, n, values).unwrap()
}
