//! Soft Dice, clamped binary cross-entropy, and their convex blend.
//!
//! Dice sums run over every pixel of the batch at once. Accumulation is in
//! `f64` regardless of the element type.

use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda: f64,
    pub eps_dice: f64,
    pub bce_clamp: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 0.5, eps_dice: 1e-6, bce_clamp: 1e-7 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig("loss.lambda must lie in [0, 1]".into()));
        }
        if !(self.eps_dice > 0.0) {
            return Err(Error::InvalidConfig("loss.eps_dice must be positive".into()));
        }
        if !(self.bce_clamp > 0.0 && self.bce_clamp < 0.5) {
            return Err(Error::InvalidConfig("loss.bce_clamp must lie in (0, 0.5)".into()));
        }
        Ok(())
    }
}

/// Loss value and its gradient with respect to each prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<T> {
    pub value: f64,
    pub grad: Vec<T>,
}

fn check<T: Real>(pred: &[T], gt: &[T]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions vs {} targets", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::ShapeMismatch("loss over zero pixels".into()));
    }
    Ok(())
}

/// `1 − (2·Σ p·g + ε) / (Σ p + Σ g + ε)`.
pub fn dice_loss<T: Real>(pred: &[T], gt: &[T], eps: f64) -> Result<LossOutput<T>> {
    check(pred, gt)?;
    let (mut inter, mut sp, mut sg) = (0.0f64, 0.0f64, 0.0f64);
    for (p, g) in pred.iter().zip(gt) {
        let (p, g) = (p.to_f64().unwrap_or(f64::NAN), g.to_f64().unwrap_or(f64::NAN));
        inter += p * g;
        sp += p;
        sg += g;
    }
    let num = 2.0 * inter + eps;
    let den = sp + sg + eps;
    let grad = gt
        .iter()
        .map(|g| {
            let g = g.to_f64().unwrap_or(f64::NAN);
            T::from_f64_lossy(-(2.0 * g * den - num) / (den * den))
        })
        .collect();
    Ok(LossOutput { value: 1.0 - num / den, grad })
}

/// Mean of `−[y·ln ŷ + (1−y)·ln(1−ŷ)]` with `ŷ` clamped to `[c, 1−c]`.
/// The clamp passes no gradient outside its range.
pub fn bce_loss<T: Real>(pred: &[T], gt: &[T], clamp: f64) -> Result<LossOutput<T>> {
    check(pred, gt)?;
    let n = pred.len() as f64;
    let mut total = 0.0f64;
    let grad = pred
        .iter()
        .zip(gt)
        .map(|(p, y)| {
            let (p, y) = (p.to_f64().unwrap_or(f64::NAN), y.to_f64().unwrap_or(f64::NAN));
            let q = p.clamp(clamp, 1.0 - clamp);
            total -= y * q.ln() + (1.0 - y) * (1.0 - q).ln();
            let g = if p >= clamp && p <= 1.0 - clamp { (-y / q + (1.0 - y) / (1.0 - q)) / n } else { 0.0 };
            T::from_f64_lossy(g)
        })
        .collect();
    Ok(LossOutput { value: total / n, grad })
}

/// `λ·Dice + (1−λ)·BCE`.
pub fn hybrid_loss<T: Real>(pred: &[T], gt: &[T], cfg: &LossConfig) -> Result<LossOutput<T>> {
    let d = dice_loss(pred, gt, cfg.eps_dice)?;
    let b = bce_loss(pred, gt, cfg.bce_clamp)?;
    let (l, m) = (cfg.lambda, 1.0 - cfg.lambda);
    let grad = d
        .grad
        .iter()
        .zip(&b.grad)
        .map(|(&gd, &gb)| T::from_f64_lossy(l * gd.to_f64().unwrap_or(0.0) + m * gb.to_f64().unwrap_or(0.0)))
        .collect();
    Ok(LossOutput { value: l * d.value + m * b.value, grad })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dice_examples() {
        let ones = [1.0f64; 4];
        assert_eq!(dice_loss(&ones, &ones, 1e-6).unwrap().value, 0.0);
        let miss = dice_loss(&[0.0f64; 4], &ones, 1e-6).unwrap().value;
        assert!((miss - (1.0 - 1e-6 / (4.0 + 1e-6))).abs() <= 1e-12);
        let half = dice_loss(&[0.5f64; 4], &ones, 1e-6).unwrap().value;
        assert!((half - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn bce_examples() {
        let v = bce_loss(&[0.5f64], &[1.0], 1e-7).unwrap().value;
        assert!((v - std::f64::consts::LN_2).abs() <= 1e-12);
        let v = bce_loss(&[0.9f64, 0.1], &[1.0, 0.0], 1e-7).unwrap().value;
        assert!((v - (-(0.9f64.ln()))).abs() <= 1e-12);
        let v = bce_loss(&[1.0f64], &[1.0], 1e-7).unwrap().value;
        assert!(v.is_finite() && (v - 1e-7).abs() < 1e-12);
    }

    #[test]
    fn hybrid_endpoints_and_blend() {
        let p = [0.5f64; 4];
        let g = [1.0f64; 4];
        let d = dice_loss(&p, &g, 1e-6).unwrap().value;
        let b = bce_loss(&p, &g, 1e-7).unwrap().value;
        let at = |lambda| hybrid_loss(&p, &g, &LossConfig { lambda, ..Default::default() }).unwrap().value;
        assert_eq!(at(1.0), d);
        assert_eq!(at(0.0), b);
        assert!((at(0.5) - 0.5 * (1.0 / 3.0 + std::f64::consts::LN_2)).abs() < 1e-6);
        assert!((at(0.5) - 0.513240).abs() < 5e-7);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(dice_loss(&[0.5f64; 3], &[1.0; 4], 1e-6).is_err());
        assert!(bce_loss(&[0.5f64; 3], &[1.0; 4], 1e-7).is_err());
    }

    #[test]
    fn invalid_config_is_rejected() {
        assert!(LossConfig { lambda: 1.5, ..Default::default() }.validate().is_err());
        assert!(LossConfig { eps_dice: 0.0, ..Default::default() }.validate().is_err());
    }
}
