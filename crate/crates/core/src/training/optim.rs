//! Adam with L2-in-gradient weight decay, the cosine learning-rate schedule,
//! and the early-stopping state machine.

use serde::{Deserialize, Serialize};

use crate::nn::{Parameter, Tensor};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("optimizer betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidConfig("optimizer.eps must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("optimizer.weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// Moment buffers for the trainable parameters, in model order.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Parameter<T>>, config: AdamConfig) -> Self {
        let (m, v) = params
            .into_iter()
            .filter(|p| p.trainable)
            .map(|p| (Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())))
            .unzip();
        Self { config, m, v, t: 0 }
    }
}

/// One Adam update of every trainable parameter in `params`.
///
/// `g ← grad + wd·θ`, bias-corrected moments, `θ ← θ − lr·m̂/(√v̂ + ε)`.
pub fn adam_step<T: Real>(params: &mut [&mut Parameter<T>], state: &mut AdamState<T>, lr: f64) -> Result<()> {
    let trainable: Vec<&mut &mut Parameter<T>> = params.iter_mut().filter(|p| p.trainable).collect();
    if trainable.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "optimizer tracks {} tensors, got {}",
            state.m.len(),
            trainable.len()
        )));
    }
    for (p, m) in trainable.iter().zip(&state.m) {
        if p.value.shape() != m.shape() || p.grad.shape() != m.shape() {
            return Err(Error::ShapeMismatch(format!("optimizer buffer shape differs for {}", p.name)));
        }
    }
    state.t += 1;
    let c = state.config;
    let b1 = T::from_f64_lossy(c.beta1);
    let b2 = T::from_f64_lossy(c.beta2);
    let one = T::one();
    let wd = T::from_f64_lossy(c.weight_decay);
    let bc1 = T::from_f64_lossy(1.0 - c.beta1.powi(state.t as i32));
    let bc2 = T::from_f64_lossy(1.0 - c.beta2.powi(state.t as i32));
    let lr = T::from_f64_lossy(lr);
    let eps = T::from_f64_lossy(c.eps);
    for ((p, m), v) in trainable.into_iter().zip(&mut state.m).zip(&mut state.v) {
        let p = &mut **p;
        let grads = p.grad.data();
        for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(grads).zip(m.data_mut()).zip(v.data_mut()) {
            let g = g + wd * *w;
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub lr0: f64,
    pub t_max: usize,
    pub eta_min: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { lr0: 1e-4, t_max: 20, eta_min: 0.0 }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_max < 1 {
            return Err(Error::InvalidConfig("schedule.t_max must be at least 1".into()));
        }
        if !(self.lr0 >= 0.0 && self.eta_min >= 0.0 && self.lr0.is_finite()) {
            return Err(Error::InvalidConfig("schedule learning rates must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// `η_min + (η₀ − η_min)·(1 + cos(π·t/T_max))/2`, stepped once per epoch.
pub fn cosine_lr(epoch: usize, cfg: &ScheduleConfig) -> Result<f64> {
    if epoch > cfg.t_max || cfg.t_max == 0 {
        return Err(Error::OutOfRange(format!("epoch {epoch} outside [0, {}]", cfg.t_max)));
    }
    let phase = std::f64::consts::PI * epoch as f64 / cfg.t_max as f64;
    Ok(cfg.eta_min + (cfg.lr0 - cfg.eta_min) * (1.0 + phase.cos()) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopState {
    pub patience: usize,
    pub best_val_loss: f64,
    pub epochs_since_improvement: usize,
}

impl EarlyStopState {
    pub fn new(patience: usize) -> Self {
        Self { patience, best_val_loss: f64::INFINITY, epochs_since_improvement: 0 }
    }

    pub fn stopped(&self) -> bool {
        self.epochs_since_improvement >= self.patience
    }
}

/// Strict improvement resets the counter; anything else increments it. Once
/// stopped the state is frozen.
pub fn early_stop_update(state: &mut EarlyStopState, val_loss: f64) -> StopDecision {
    if state.stopped() {
        return StopDecision::Stop;
    }
    if val_loss < state.best_val_loss {
        state.best_val_loss = val_loss;
        state.epochs_since_improvement = 0;
    } else {
        state.epochs_since_improvement += 1;
    }
    if state.stopped() {
        StopDecision::Stop
    } else {
        StopDecision::Continue
    }
}
