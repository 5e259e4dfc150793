//! Central finite-difference verification of every analytic gradient in the
//! network and the losses, in 64-bit arithmetic.
//!
//! Each case draws random shapes and values, reduces the op output to a
//! scalar with random weights, and compares the analytic gradient of every
//! input (or a random subset for the composed network) against
//! `(f(x + h) - f(x - h)) / 2h`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::nn::{ops, Mode, Tensor, UNetConfig, UNetModel};
use crate::training::{bce_loss, dice_loss, hybrid_loss, LossConfig};
use crate::{rng, Result};

pub const FD_STEP: f64 = 1e-5;
/// Exact-zero analytic gradients are compared absolutely against this.
pub const ZERO_GRAD_ABS_TOL: f64 = 1e-8;
/// Analytic gradients below this are rounding residue of an exact zero, e.g.
/// a conv bias feeding a train-mode batch norm.
pub const ZERO_GRAD_FLOOR: f64 = 1e-12;
/// Coordinates probed per instance of the composed network.
const NETWORK_PROBES: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GradOp {
    Conv2d,
    BatchNorm,
    Relu,
    MaxPool,
    ConvTranspose,
    SigmoidHead,
    DiceLoss,
    BceLoss,
    HybridLoss,
    UNetDepth1,
}

impl GradOp {
    pub const ALL: [GradOp; 10] = [
        GradOp::Conv2d,
        GradOp::BatchNorm,
        GradOp::Relu,
        GradOp::MaxPool,
        GradOp::ConvTranspose,
        GradOp::SigmoidHead,
        GradOp::DiceLoss,
        GradOp::BceLoss,
        GradOp::HybridLoss,
        GradOp::UNetDepth1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradOp::Conv2d => "conv2d",
            GradOp::BatchNorm => "batchnorm",
            GradOp::Relu => "relu",
            GradOp::MaxPool => "maxpool",
            GradOp::ConvTranspose => "conv_transpose",
            GradOp::SigmoidHead => "sigmoid_head",
            GradOp::DiceLoss => "dice_loss",
            GradOp::BceLoss => "bce_loss",
            GradOp::HybridLoss => "hybrid_loss",
            GradOp::UNetDepth1 => "unet_depth1",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct GradStats {
    pub coordinates: usize,
    /// Over coordinates whose analytic gradient exceeds `ZERO_GRAD_FLOOR`.
    pub worst_relative_error: f64,
    /// Largest `|numeric|` where the analytic gradient is zero up to rounding.
    pub worst_zero_abs_error: f64,
}

impl GradStats {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.coordinates > 0 && self.worst_relative_error < rel_tol && self.worst_zero_abs_error <= ZERO_GRAD_ABS_TOL
    }

    fn merge(&mut self, o: GradStats) {
        self.coordinates += o.coordinates;
        self.worst_relative_error = self.worst_relative_error.max(o.worst_relative_error);
        self.worst_zero_abs_error = self.worst_zero_abs_error.max(o.worst_zero_abs_error);
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        let (rel, abs) = if analytic.abs() < ZERO_GRAD_FLOOR {
            (0.0, numeric.abs())
        } else {
            (relative_error(analytic, numeric), 0.0)
        };
        self.coordinates += 1;
        // NaN must not be swallowed by max
        self.worst_relative_error = if rel.is_nan() { f64::INFINITY } else { self.worst_relative_error.max(rel) };
        self.worst_zero_abs_error = if abs.is_nan() { f64::INFINITY } else { self.worst_zero_abs_error.max(abs) };
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub op: GradOp,
    pub instances: usize,
    pub stats: GradStats,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

type Objective = Box<dyn Fn(&[Tensor<f64>]) -> Result<f64>>;

struct Case {
    inputs: Vec<Tensor<f64>>,
    objective: Objective,
    analytic: Vec<Tensor<f64>>,
    probes: Option<usize>,
}

/// Compares `analytic[k]` with the central difference of `objective` with
/// respect to `inputs[k]`. `probes` limits the check to that many random
/// coordinates; `None` probes all of them.
pub fn check_gradients(
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    objective: impl Fn(&[Tensor<f64>]) -> Result<f64>,
    probes: Option<usize>,
    seed: u64,
) -> Result<GradStats> {
    if inputs.len() != analytic.len() || inputs.iter().zip(analytic).any(|(a, b)| a.shape() != b.shape()) {
        return Err(crate::Error::ShapeMismatch("gradient shapes differ from their inputs".into()));
    }
    let mut rng = rng::stream(seed, &[0x4644]);
    probe(inputs, analytic, &objective, probes, &mut rng)
}

/// Runs `instances` random cases of `op`; the report carries the worst error
/// over every probed coordinate.
pub fn check_op(op: GradOp, instances: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = rng::stream(seed, &[0x4644, op as u64]);
    let mut stats = GradStats::default();
    for _ in 0..instances {
        let case = build_case(op, &mut rng)?;
        stats.merge(probe(&case.inputs, &case.analytic, &case.objective, case.probes, &mut rng)?);
    }
    Ok(GradCheckReport { op, instances, stats })
}

fn probe(
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    objective: &dyn Fn(&[Tensor<f64>]) -> Result<f64>,
    probes: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<GradStats> {
    let mut coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(k, t)| (0..t.len()).map(move |i| (k, i)))
        .collect();
    if let Some(n) = probes {
        coords.shuffle(rng);
        coords.truncate(n);
    }
    let mut inputs = inputs.to_vec();
    let mut stats = GradStats::default();
    for &(k, i) in &coords {
        let orig = inputs[k].data()[i];
        inputs[k].data_mut()[i] = orig + FD_STEP;
        let plus = objective(&inputs)?;
        inputs[k].data_mut()[i] = orig - FD_STEP;
        let minus = objective(&inputs)?;
        inputs[k].data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        stats.record(analytic[k].data()[i], numeric);
    }
    Ok(stats)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.random_range(lo..hi)).collect()).expect("shape matches")
}

/// Values bounded away from zero so no probe crosses the ReLU kink.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches")
}

/// Distinct values spaced far beyond the probe step, so pooling windows never tie.
fn spaced(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let len: usize = shape.iter().product();
    let mut ranks: Vec<usize> = (0..len).collect();
    ranks.shuffle(rng);
    let data = ranks.iter().map(|&r| r as f64 * 0.01 + rng.random_range(0.0..0.001)).collect();
    Tensor::from_vec(shape, data).expect("shape matches")
}

fn dot(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn image_shape(rng: &mut ChaCha8Rng, c: usize) -> [usize; 4] {
    let n = rng.random_range(1..=2);
    let h = 2 * rng.random_range(1..=3);
    let w = 2 * rng.random_range(1..=3);
    [n, c, h, w]
}

fn build_case(op: GradOp, rng: &mut ChaCha8Rng) -> Result<Case> {
    match op {
        GradOp::Conv2d => {
            let (cin, cout) = (rng.random_range(1..=3), rng.random_range(1..=3));
            let k = if rng.random_bool(0.25) { 1 } else { 3 };
            let xs = image_shape(rng, cin);
            let x = uniform(rng, &xs, -1.0, 1.0);
            let w = uniform(rng, &[cout, cin, k, k], -1.0, 1.0);
            let b = uniform(rng, &[cout], -1.0, 1.0);
            let r = uniform(rng, &[xs[0], cout, xs[2], xs[3]], -1.0, 1.0);
            let (dx, dw, db) = ops::conv2d_backward(&x, &w, &r)?;
            Ok(Case {
                inputs: vec![x, w, b],
                objective: Box::new(move |t| Ok(dot(&ops::conv2d_forward(&t[0], &t[1], &t[2])?, &r))),
                analytic: vec![dx, dw, db],
                probes: None,
            })
        }
        GradOp::BatchNorm => {
            let c = rng.random_range(1..=3);
            let xs = image_shape(rng, c);
            let x = uniform(rng, &xs, -2.0, 2.0);
            let gamma = uniform(rng, &[c], 0.5, 1.5);
            let beta = uniform(rng, &[c], -0.5, 0.5);
            let r = uniform(rng, &xs, -1.0, 1.0);
            let forward = move |t: &[Tensor<f64>]| {
                let mut rm = Tensor::zeros(&[c]);
                let mut rv = Tensor::filled(&[c], 1.0);
                ops::batchnorm_forward(&t[0], &t[1], &t[2], &mut rm, &mut rv, true, 1e-5, 0.1)
            };
            let inputs = vec![x, gamma, beta];
            let (_, cache) = forward(&inputs)?;
            let (dx, dg, db) = ops::batchnorm_backward(&cache, &inputs[1], &r)?;
            Ok(Case {
                inputs,
                objective: Box::new(move |t| Ok(dot(&forward(t)?.0, &r))),
                analytic: vec![dx, dg, db],
                probes: None,
            })
        }
        GradOp::Relu => {
            let c = rng.random_range(1..=3);
            let xs = image_shape(rng, c);
            let x = away_from_zero(rng, &xs);
            let r = uniform(rng, &xs, -1.0, 1.0);
            let dx = ops::relu_backward(&ops::relu_forward(&x), &r);
            Ok(Case {
                inputs: vec![x],
                objective: Box::new(move |t| Ok(dot(&ops::relu_forward(&t[0]), &r))),
                analytic: vec![dx],
                probes: None,
            })
        }
        GradOp::MaxPool => {
            let c = rng.random_range(1..=3);
            let xs = image_shape(rng, c);
            let x = spaced(rng, &xs);
            let r = uniform(rng, &[xs[0], c, xs[2] / 2, xs[3] / 2], -1.0, 1.0);
            let (_, argmax) = ops::maxpool2x2_forward(&x)?;
            let dx = ops::maxpool2x2_backward(xs, &argmax, &r);
            Ok(Case {
                inputs: vec![x],
                objective: Box::new(move |t| Ok(dot(&ops::maxpool2x2_forward(&t[0])?.0, &r))),
                analytic: vec![dx],
                probes: None,
            })
        }
        GradOp::ConvTranspose => {
            let (cin, cout) = (rng.random_range(1..=3), rng.random_range(1..=3));
            let xs = image_shape(rng, cin);
            let x = uniform(rng, &xs, -1.0, 1.0);
            let w = uniform(rng, &[cin, cout, 2, 2], -1.0, 1.0);
            let b = uniform(rng, &[cout], -1.0, 1.0);
            let r = uniform(rng, &[xs[0], cout, 2 * xs[2], 2 * xs[3]], -1.0, 1.0);
            let (dx, dw, db) = ops::conv_transpose2x2_backward(&x, &w, &r)?;
            Ok(Case {
                inputs: vec![x, w, b],
                objective: Box::new(move |t| Ok(dot(&ops::conv_transpose2x2_forward(&t[0], &t[1], &t[2])?, &r))),
                analytic: vec![dx, dw, db],
                probes: None,
            })
        }
        GradOp::SigmoidHead => {
            let cin = rng.random_range(1..=4);
            let xs = image_shape(rng, cin);
            let x = uniform(rng, &xs, -1.0, 1.0);
            let w = uniform(rng, &[1, cin, 1, 1], -1.5, 1.5);
            let b = uniform(rng, &[1], -0.5, 0.5);
            let r = uniform(rng, &[xs[0], 1, xs[2], xs[3]], -1.0, 1.0);
            let y = ops::sigmoid_forward(&ops::conv2d_forward(&x, &w, &b)?);
            let dz = ops::sigmoid_backward(&y, &r);
            let (dx, dw, db) = ops::conv2d_backward(&x, &w, &dz)?;
            Ok(Case {
                inputs: vec![x, w, b],
                objective: Box::new(move |t| {
                    Ok(dot(&ops::sigmoid_forward(&ops::conv2d_forward(&t[0], &t[1], &t[2])?), &r))
                }),
                analytic: vec![dx, dw, db],
                probes: None,
            })
        }
        GradOp::DiceLoss | GradOp::BceLoss | GradOp::HybridLoss => {
            let len = rng.random_range(4..=48);
            let pred = uniform(rng, &[len], 0.05, 0.95);
            let gt_data: Vec<f64> = (0..len).map(|_| rng.random_bool(0.4) as u8 as f64).collect();
            let gt = Tensor::from_vec(&[len], gt_data)?;
            let cfg = LossConfig { lambda: rng.random_range(0.0..=1.0), ..LossConfig::default() };
            let loss = move |p: &[f64]| -> Result<(f64, Vec<f64>)> {
                let out = match op {
                    GradOp::DiceLoss => dice_loss(p, gt.data(), cfg.eps_dice)?,
                    GradOp::BceLoss => bce_loss(p, gt.data(), cfg.bce_clamp)?,
                    _ => hybrid_loss(p, gt.data(), &cfg)?,
                };
                Ok((out.value, out.grad))
            };
            let (_, grad) = loss(pred.data())?;
            Ok(Case {
                analytic: vec![Tensor::from_vec(&[len], grad)?],
                inputs: vec![pred],
                objective: Box::new(move |t| Ok(loss(t[0].data())?.0)),
                probes: None,
            })
        }
        GradOp::UNetDepth1 => {
            let cfg = UNetConfig {
                in_channels: rng.random_range(1..=2),
                out_channels: 1,
                depth: 1,
                base_channels: rng.random_range(2..=3),
                input_size: 2 * rng.random_range(2..=4),
            };
            let batch = rng.random_range(1..=2);
            unet_case(cfg, batch, rng, Some(NETWORK_PROBES))
        }
    }
}

/// Checks a whole network under the hybrid loss against random binary
/// targets: the input and every trainable parameter, or `probes` random
/// coordinates of them.
pub fn check_unet(cfg: UNetConfig, batch: usize, seed: u64, probes: Option<usize>) -> Result<GradStats> {
    let mut rng = rng::stream(seed, &[0x554E]);
    let case = unet_case(cfg, batch, &mut rng, probes)?;
    probe(&case.inputs, &case.analytic, &case.objective, case.probes, &mut rng)
}

fn unet_case(cfg: UNetConfig, n: usize, rng: &mut ChaCha8Rng, probes: Option<usize>) -> Result<Case> {
    let s = cfg.input_size;
    let mut model = UNetModel::<f64>::with_seed(cfg, rng.random())?;
    let x = uniform(rng, &[n, cfg.in_channels, s, s], 0.0, 1.0);
    let gt: Vec<f64> = (0..n * cfg.out_channels * s * s).map(|_| rng.random_bool(0.3) as u8 as f64).collect();
    let loss_cfg = LossConfig::default();
    model.set_mode(Mode::Train);
    let y = model.forward(&x)?;
    let g = hybrid_loss(y.data(), &gt, &loss_cfg)?;
    model.zero_grad();
    let dx = model.backward(&Tensor::from_vec(y.shape(), g.grad)?)?;
    let trainable: Vec<usize> =
        model.parameters().iter().enumerate().filter(|(_, p)| p.trainable).map(|(i, _)| i).collect();
    let mut inputs = vec![x];
    let mut analytic = vec![dx];
    let params = model.parameters();
    for &i in &trainable {
        inputs.push(params[i].value.clone());
        analytic.push(params[i].grad.clone());
    }
    let base = model.clone();
    Ok(Case {
        inputs,
        objective: Box::new(move |t| {
            let mut m = base.clone();
            let mut ps = m.parameters_mut();
            for (slot, &i) in trainable.iter().enumerate() {
                ps[i].value = t[slot + 1].clone();
            }
            Ok(hybrid_loss(m.forward(&t[0])?.data(), &gt, &loss_cfg)?.value)
        }),
        analytic,
        probes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_zero_gradients_are_compared_absolutely() {
        let mut w = GradStats::default();
        w.record(0.0, 5e-9);
        w.record(2.0, 1.0);
        assert_eq!(w.worst_zero_abs_error, 5e-9);
        assert!((w.worst_relative_error - 0.5).abs() < 1e-15);
        assert_eq!(w.coordinates, 2);
        w.record(1.0, f64::NAN);
        assert!(w.worst_relative_error.is_infinite());
    }

    #[test]
    fn a_wrong_gradient_is_detected() {
        let mut rng = rng::stream(1, &[0]);
        let mut case = build_case(GradOp::Conv2d, &mut rng).unwrap();
        case.analytic[1].data_mut()[0] += 0.5;
        let worst = probe(&case.inputs, &case.analytic, &case.objective, None, &mut rng).unwrap();
        assert!(worst.worst_relative_error > 1e-2);
    }
}
