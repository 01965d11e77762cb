#![allow(dead_code)]

use codeinr::model::InrNetwork;
use codeinr::objectives::{inter_loss, ExtractorConfig, FeatureExtractor};
use codeinr::tensor::{Graph, NormOrder, Tensor, Var};
use codeinr::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Builds a scalar loss from the graph's leaf inputs.
pub type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

pub struct Case {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub build: Build,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, for kinked ops.
fn signed_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let t = uniform(rng, shape, 0.2, 1.0);
    let data = t.data().iter().map(|&v| if rng.random() { v } else { -v }).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Reduces any output to a scalar through fixed random weights so every
/// output element influences the loss differently.
fn weighted_sum(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let shape = g.value(out).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(uniform(&mut rng, &shape, -1.0, 1.0));
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod)?)
}

macro_rules! case {
    ($name:expr, [$($input:expr),*], |$g:ident, $x:ident| $body:expr) => {
        Case {
            name: $name,
            inputs: vec![$($input),*],
            build: Box::new(move |$g: &mut Graph<f64>, $x: &[Var]| {
                let out = $body;
                weighted_sum($g, out, 99)
            }),
        }
    };
}

/// One case per differentiable op.
pub fn op_cases(seed: u64) -> Vec<Case> {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    vec![
        case!("linear", [uniform(rng, &[4, 3], -1.0, 1.0), uniform(rng, &[3, 5], -1.0, 1.0), uniform(rng, &[5], -1.0, 1.0)],
            |g, x| g.linear(x[0], x[1], x[2])?),
        case!("sine", [uniform(rng, &[3, 4], -0.1, 0.1)], |g, x| g.sine(x[0], 30.0)?),
        case!("sigmoid", [uniform(rng, &[3, 4], -3.0, 3.0)], |g, x| g.sigmoid(x[0])?),
        case!("concat_rows", [uniform(rng, &[3, 2], -1.0, 1.0), uniform(rng, &[3, 4], -1.0, 1.0)],
            |g, x| g.concat_rows(x[0], x[1])?),
        case!("repeat_rows", [uniform(rng, &[1, 4], -1.0, 1.0)], |g, x| g.repeat_rows(x[0], 3)?),
        case!("add", [uniform(rng, &[2, 3], -1.0, 1.0), uniform(rng, &[2, 3], -1.0, 1.0)], |g, x| g.add(x[0], x[1])?),
        case!("sub", [uniform(rng, &[2, 3], -1.0, 1.0), uniform(rng, &[2, 3], -1.0, 1.0)], |g, x| g.sub(x[0], x[1])?),
        case!("mul", [uniform(rng, &[2, 3], -1.0, 1.0), uniform(rng, &[2, 3], -1.0, 1.0)], |g, x| g.mul(x[0], x[1])?),
        case!("scale", [uniform(rng, &[2, 3], -1.0, 1.0)], |g, x| g.scale(x[0], -2.5)?),
        case!("square", [uniform(rng, &[2, 3], -1.0, 1.0)], |g, x| g.square(x[0])?),
        case!("abs", [signed_away_from_zero(rng, &[2, 3])], |g, x| g.abs(x[0])?),
        case!("sum", [uniform(rng, &[2, 3], -1.0, 1.0)], |g, x| g.sum(x[0])?),
        case!("mean", [uniform(rng, &[2, 3], -1.0, 1.0)], |g, x| g.mean(x[0])?),
        {
            let target = uniform(rng, &[3, 3], 0.0, 1.0);
            case!("mse", [uniform(rng, &[3, 3], 0.0, 1.0)], |g, x| {
                let t = g.constant(target.clone());
                g.mse(x[0], t)?
            })
        },
        case!("pnorm_1", [signed_away_from_zero(rng, &[1, 6])], |g, x| g.pnorm(x[0], NormOrder::P(1.0))?),
        case!("pnorm_1.5", [signed_away_from_zero(rng, &[1, 6])], |g, x| g.pnorm(x[0], NormOrder::P(1.5))?),
        case!("pnorm_2", [uniform(rng, &[1, 6], -1.0, 1.0)], |g, x| g.pnorm(x[0], NormOrder::P(2.0))?),
        case!("pnorm_inf", [uniform(rng, &[1, 6], -1.0, 1.0)], |g, x| g.pnorm(x[0], NormOrder::Infinity)?),
        case!("conv2d", [uniform(rng, &[2, 6, 5], -1.0, 1.0), uniform(rng, &[3, 2, 3, 3], -1.0, 1.0)],
            |g, x| g.conv2d(x[0], x[1])?),
        case!("avg_pool2", [uniform(rng, &[2, 5, 4], -1.0, 1.0)], |g, x| g.avg_pool2(x[0])?),
        case!("channel_mean", [uniform(rng, &[3, 4, 4], -1.0, 1.0)], |g, x| g.channel_mean(x[0])?),
        case!("tile_chw", [uniform(rng, &[30, 3], 0.0, 1.0)], |g, x| g.tile_chw(x[0], 5, 6, 1, 2, 3)?),
        case!("concat_flat", [uniform(rng, &[3], -1.0, 1.0), uniform(rng, &[2, 2], -1.0, 1.0)],
            |g, x| g.concat_flat(&[x[0], x[1]])?),
    ]
}

/// A three-sine-layer SIREN on `[x, y, z]` with a sigmoid head, fitted to a
/// random target by MSE. Inputs: every weight and bias, then the code.
pub fn siren_case(seed: u64) -> Case {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let code_len = 4;
    let mut net = InrNetwork::<f64>::init_siren(3, 12, 2 + code_len, 3, 30.0, seed);
    // Zero biases from the initializer would leave their gradients untested
    // at a special point; use generic values.
    for layer in net.layers_mut() {
        for b in layer.bias.data_mut() {
            *b = rng.random_range(-0.1..0.1);
        }
    }
    let coords = uniform(rng, &[5, 2], 0.0, 1.0);
    let target = uniform(rng, &[5, 3], 0.0, 1.0);
    let mut inputs: Vec<Tensor<f64>> = net.layers().iter().flat_map(|l| [l.weight.clone(), l.bias.clone()]).collect();
    inputs.push(uniform(rng, &[1, code_len], -0.25, 0.25));
    let n_layers = net.layers().len();
    Case {
        name: "siren_3_layer_coded",
        inputs,
        build: Box::new(move |g, x| {
            let c = g.constant(coords.clone());
            let z = x[2 * n_layers];
            let zr = g.repeat_rows(z, 5)?;
            let mut h = g.concat_rows(c, zr)?;
            for k in 0..n_layers {
                h = g.linear(h, x[2 * k], x[2 * k + 1])?;
                if k + 1 < n_layers {
                    h = g.sine(h, 30.0)?;
                }
            }
            let out = g.sigmoid(h)?;
            let t = g.constant(target.clone());
            Ok(g.mse(out, t)?)
        }),
    }
}

/// The interpolation loss with respect to the rendered image.
pub fn extractor_case(seed: u64) -> Case {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (24, 24);
    let extractor = FeatureExtractor::new(ExtractorConfig { patch: 22, ..Default::default() }).unwrap();
    let len = extractor.feature_len(h, w).unwrap();
    let f_i: Vec<f32> = (0..len).map(|_| rng.random_range(-0.5..0.5)).collect();
    let f_j: Vec<f32> = (0..len).map(|_| rng.random_range(-0.5..0.5)).collect();
    Case {
        name: "interpolation_loss",
        inputs: vec![uniform(rng, &[h * w, 3], 0.0, 1.0)],
        build: Box::new(move |g, x| inter_loss(&extractor, g, x[0], h, w, &f_i, &f_j, 0.3)),
    }
}

fn loss_at(case: &Case, inputs: &[Tensor<f64>]) -> f64 {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = (case.build)(&mut g, &vars).unwrap();
    g.value(loss).item().unwrap()
}

pub struct CheckResult {
    pub name: &'static str,
    pub probes: usize,
    pub max_rel_err: f64,
}

/// Relative error `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients against central differences at
/// `probes` randomly chosen input coordinates (every coordinate when
/// there are fewer).
pub fn check(case: &Case, probes: usize, seed: u64) -> CheckResult {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = (case.build)(&mut g, &vars).unwrap();
    let grads = g.backward(loss).unwrap();
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.tensor(v)).collect();

    let mut slots: Vec<(usize, usize)> = case
        .inputs
        .iter()
        .enumerate()
        .flat_map(|(n, t)| (0..t.len()).map(move |k| (n, k)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if slots.len() > probes {
        slots = rand::seq::index::sample(&mut rng, slots.len(), probes)
            .into_iter()
            .map(|k| slots[k])
            .collect();
    }
    let mut worst: f64 = 0.0;
    for &(n, k) in &slots {
        let mut plus = case.inputs.clone();
        plus[n].data_mut()[k] += STEP;
        let mut minus = case.inputs.clone();
        minus[n].data_mut()[k] -= STEP;
        let numeric = (loss_at(case, &plus) - loss_at(case, &minus)) / (2.0 * STEP);
        worst = worst.max(rel_err(analytic[n].data()[k], numeric));
    }
    CheckResult {
        name: case.name,
        probes: slots.len(),
        max_rel_err: worst,
    }
}

/// Every op case plus the full network and the interpolation loss.
pub fn all_checks(seed: u64) -> Vec<CheckResult> {
    let mut cases = op_cases(seed);
    cases.push(siren_case(seed));
    cases.push(extractor_case(seed));
    cases.iter().map(|c| check(c, 40, seed + 1)).collect()
}
