//! Confusion counts, overlap metrics, Cohen's kappa and Mean±SD.

use serde::{Deserialize, Serialize};

use crate::volume::MaskVolume;
use crate::{Error, Real, Result};

pub const THRESHOLD: f64 = 0.5;

/// Positive iff `p ≥ threshold`.
pub fn binarize<T: Real>(prob: &[T], threshold: f64) -> Vec<u8> {
    prob.iter().map(|p| (p.to_f64().unwrap_or(f64::NAN) >= threshold) as u8).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn from_masks(pred: &[u8], gt: &[u8]) -> Result<Self> {
        if pred.len() != gt.len() {
            return Err(Error::ShapeMismatch(format!("{} predicted vs {} reference voxels", pred.len(), gt.len())));
        }
        let mut c = Self::default();
        for (&p, &g) in pred.iter().zip(gt) {
            match (p != 0, g != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `2TP/(2TP+FP+FN)`; 1 when both masks are empty.
    pub fn dsc(&self) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / den as f64
        }
    }

    /// `TP/(TP+FP+FN)`; 1 when both masks are empty.
    pub fn iou(&self) -> f64 {
        let den = self.tp + self.fp + self.fn_;
        if den == 0 {
            1.0
        } else {
            self.tp as f64 / den as f64
        }
    }

    /// `TP/(TP+FN)`; 1 when the reference is empty.
    pub fn sensitivity(&self) -> f64 {
        let den = self.tp + self.fn_;
        if den == 0 {
            1.0
        } else {
            self.tp as f64 / den as f64
        }
    }

    /// `TN/(TN+FP)`; 1 when the reference covers everything.
    pub fn specificity(&self) -> f64 {
        let den = self.tn + self.fp;
        if den == 0 {
            1.0
        } else {
            self.tn as f64 / den as f64
        }
    }
}

pub fn confusion(pred: &MaskVolume, gt: &MaskVolume) -> Result<ConfusionCounts> {
    if pred.geometry() != gt.geometry() {
        return Err(Error::GeometryMismatch("prediction and reference grids differ".into()));
    }
    ConfusionCounts::from_masks(pred.voxels(), gt.voxels())
}

/// Voxel-wise Cohen's kappa between two binary masks.
pub fn cohen_kappa(a: &[u8], b: &[u8]) -> Result<f64> {
    let c = ConfusionCounts::from_masks(a, b)?;
    let n = c.total();
    if n == 0 {
        return Err(Error::ShapeMismatch("kappa over zero voxels".into()));
    }
    let n = n as f64;
    let p_o = (c.tp + c.tn) as f64 / n;
    let pa = (c.tp + c.fp) as f64 / n;
    let pb = (c.tp + c.fn_) as f64 / n;
    let p_e = pa * pb + (1.0 - pa) * (1.0 - pb);
    if p_e == 1.0 {
        return Ok(1.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation (`n − 1`), 0 for a single patient.
    pub sd: f64,
    pub n: usize,
}

pub fn mean_sd(metric: &str, values: &[f64]) -> Result<CohortSummary> {
    if values.is_empty() {
        return Err(Error::EmptyDataset(format!("no values for {metric}")));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n == 1 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Ok(CohortSummary { metric: metric.to_string(), mean, sd, n })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binarize_uses_greater_or_equal() {
        assert_eq!(binarize(&[0.5f64; 3], THRESHOLD), vec![1, 1, 1]);
        assert_eq!(binarize(&[0.49f64; 3], THRESHOLD), vec![0, 0, 0]);
        assert_eq!(binarize(&[0.2f32, 0.8], THRESHOLD), vec![0, 1]);
    }

    #[test]
    fn confusion_examples() {
        let c = ConfusionCounts::from_masks(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, fp: 1, fn_: 1, tn: 1 });
        let g = [1, 0, 1, 1, 0];
        let same = ConfusionCounts::from_masks(&g, &g).unwrap();
        assert_eq!((same.fp, same.fn_), (0, 0));
        let inv: Vec<u8> = g.iter().map(|v| 1 - v).collect();
        let opp = ConfusionCounts::from_masks(&inv, &g).unwrap();
        assert_eq!((opp.tp, opp.tn), (0, 0));
        assert!(ConfusionCounts::from_masks(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn metric_examples() {
        let c = ConfusionCounts { tp: 2, fp: 1, fn_: 1, tn: 0 };
        assert!((c.dsc() - 4.0 / 6.0).abs() <= 1e-15);
        assert_eq!(c.iou(), 0.5);
        assert!((c.sensitivity() - 2.0 / 3.0).abs() <= 1e-15);
        let perfect = ConfusionCounts { tp: 5, fp: 0, fn_: 0, tn: 3 };
        assert_eq!([perfect.dsc(), perfect.iou(), perfect.sensitivity(), perfect.specificity()], [1.0; 4]);
        let empty = ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 9 };
        assert_eq!([empty.dsc(), empty.iou(), empty.sensitivity(), empty.specificity()], [1.0; 4]);
        let one_sided = ConfusionCounts { tp: 0, fp: 2, fn_: 0, tn: 7 };
        assert_eq!((one_sided.dsc(), one_sided.iou()), (0.0, 0.0));
        let full = ConfusionCounts { tp: 4, fp: 0, fn_: 0, tn: 0 };
        assert_eq!(full.specificity(), 1.0);
    }

    #[test]
    fn kappa_examples() {
        assert_eq!(cohen_kappa(&[1, 0, 1, 0], &[1, 0, 1, 0]).unwrap(), 1.0);
        assert_eq!(cohen_kappa(&[1, 1, 0, 0], &[0, 0, 1, 1]).unwrap(), -1.0);
        assert!((cohen_kappa(&[1, 0, 0, 0], &[1, 1, 0, 0]).unwrap() - 0.5).abs() <= 1e-15);
        assert_eq!(cohen_kappa(&[0, 0, 0], &[0, 0, 0]).unwrap(), 1.0);
    }

    #[test]
    fn mean_sd_examples() {
        let s = mean_sd("dsc", &[0.8, 0.8]).unwrap();
        assert_eq!((s.mean, s.sd, s.n), (0.8, 0.0, 2));
        let s = mean_sd("dsc", &[0.6, 1.0]).unwrap();
        assert!((s.mean - 0.8).abs() <= 1e-15);
        assert!((s.sd - 0.08f64.sqrt()).abs() <= 1e-15);
        assert!((s.sd - 0.282843).abs() < 1e-6);
        assert_eq!(mean_sd("dsc", &[0.5]).unwrap().sd, 0.0);
        assert!(mean_sd("dsc", &[]).is_err());
    }
}
