//! Slice-wise prediction, 3D reconstruction and patient-level scoring.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{binarize, confusion, mean_sd, CohortSummary, THRESHOLD};
use crate::dataset::{InputChannels, MaskSource, SliceSample};
use crate::format::fmt6;
use crate::nn::UNetModel;
use crate::preprocess::{prepare_study, resize, resize_nearest, slice_axial};
use crate::training::{batch_tensors, SliceConfig};
use crate::volume::{Geometry, LabelSource, MaskVolume, Study};
use crate::{Error, Real, Result};

/// Anything that maps model-sized slices to per-pixel probabilities.
///
/// Inputs carry `patient_id` and `z`; their `mask` field is not meaningful.
pub trait Segmenter: Sync {
    fn predict(&self, batch: &[&SliceSample]) -> Result<Vec<Vec<f64>>>;
}

/// A trained network together with the channels it reads.
pub struct ModelSegmenter<'a, T> {
    pub model: &'a UNetModel<T>,
    pub channels: InputChannels,
}

impl<T: Real> Segmenter for ModelSegmenter<'_, T> {
    fn predict(&self, batch: &[&SliceSample]) -> Result<Vec<Vec<f64>>> {
        let (x, _) = batch_tensors::<T>(batch, self.channels)?;
        let y = self.model.infer(&x)?;
        let plane = y.len() / batch.len();
        Ok(y.data().chunks(plane).map(|c| c.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()).collect())
    }
}

/// One binary axial prediction at native in-plane resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SlicePrediction {
    pub z: usize,
    pub mask: Vec<u8>,
}

/// Stacks per-z masks into a volume on `reference`. Absent planes are empty.
pub fn reconstruct_3d(slices: &[SlicePrediction], reference: &Geometry) -> Result<MaskVolume> {
    let [nz, _, _] = reference.dims;
    let plane = reference.plane_len();
    let mut out = MaskVolume::zeros(*reference, LabelSource::Pred)?;
    let mut seen = vec![false; nz];
    for s in slices {
        if s.z >= nz {
            return Err(Error::ShapeMismatch(format!("slice z={} outside {nz} planes", s.z)));
        }
        if std::mem::replace(&mut seen[s.z], true) {
            return Err(Error::ShapeMismatch(format!("duplicate slice z={}", s.z)));
        }
        if s.mask.len() != plane {
            return Err(Error::ShapeMismatch(format!(
                "slice z={} holds {} pixels, plane needs {plane}",
                s.z,
                s.mask.len()
            )));
        }
        if let Some(i) = s.mask.iter().position(|&m| m > 1) {
            return Err(Error::NonBinaryMask { index: s.z * plane + i, value: s.mask[i] });
        }
        out.voxels_mut()[s.z * plane..(s.z + 1) * plane].copy_from_slice(&s.mask);
    }
    Ok(out)
}

/// Predicts every axial slice of `study` and reconstructs the binary volume
/// on the study grid.
pub fn predict_volume(segmenter: &dyn Segmenter, study: &Study, prep: &SliceConfig, batch_size: usize) -> Result<MaskVolume> {
    let prepared = prepare_study(study, &prep.window);
    let native = slice_axial(&prepared, MaskSource::Union)?;
    let [_, ny, nx] = study.geometry().dims;
    let sized: Vec<SliceSample> = native.iter().map(|s| resize(s, prep.size, prep.size)).collect::<Result<_>>()?;
    let refs: Vec<&SliceSample> = sized.iter().collect();
    let mut preds = Vec::with_capacity(refs.len());
    for chunk in refs.chunks(batch_size.max(1)) {
        let probs = segmenter.predict(chunk)?;
        if probs.len() != chunk.len() {
            return Err(Error::ShapeMismatch("segmenter returned the wrong batch size".into()));
        }
        for (s, p) in chunk.iter().zip(probs) {
            if p.len() != prep.size * prep.size {
                return Err(Error::ShapeMismatch("segmenter returned the wrong map size".into()));
            }
            let mask = resize_nearest(&binarize(&p, THRESHOLD), prep.size, prep.size, ny, nx);
            preds.push(SlicePrediction { z: s.z, mask });
        }
    }
    reconstruct_3d(&preds, study.geometry())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientMetrics {
    pub patient_id: String,
    pub dsc: f64,
    pub iou: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub predicted_voxels: u64,
    pub reference_voxels: u64,
}

impl PatientMetrics {
    pub fn score(patient_id: &str, pred: &MaskVolume, gt: &MaskVolume) -> Result<Self> {
        let c = confusion(pred, gt)?;
        Ok(Self {
            patient_id: patient_id.to_string(),
            dsc: c.dsc(),
            iou: c.iou(),
            sensitivity: c.sensitivity(),
            specificity: c.specificity(),
            predicted_voxels: c.tp + c.fp,
            reference_voxels: c.tp + c.fn_,
        })
    }
}

pub const METRIC_NAMES: [&str; 4] = ["dsc", "iou", "sensitivity", "specificity"];

/// Mean±SD of each metric, aggregated from the six-significant-digit values
/// that the per-patient report prints, so the summary re-derives exactly
/// from the emitted rows.
pub fn summarize(rows: &[PatientMetrics]) -> Result<Vec<CohortSummary>> {
    let reported = |f: fn(&PatientMetrics) -> f64| -> Vec<f64> {
        rows.iter().map(|r| fmt6(f(r)).parse().expect("formatted float parses")).collect()
    };
    let columns: [fn(&PatientMetrics) -> f64; 4] = [|r| r.dsc, |r| r.iou, |r| r.sensitivity, |r| r.specificity];
    METRIC_NAMES.iter().zip(columns).map(|(name, f)| mean_sd(name, &reported(f))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientEval {
    pub patients: Vec<PatientMetrics>,
    pub summary: Vec<CohortSummary>,
}

impl PatientEval {
    pub fn from_rows(mut patients: Vec<PatientMetrics>) -> Result<Self> {
        if patients.is_empty() {
            return Err(Error::EmptyDataset("no test patients".into()));
        }
        patients.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
        let summary = summarize(&patients)?;
        Ok(Self { patients, summary })
    }

    pub fn metric(&self, name: &str) -> Option<&CohortSummary> {
        self.summary.iter().find(|s| s.metric == name)
    }

    pub fn mean_dsc(&self) -> f64 {
        self.metric("dsc").map_or(f64::NAN, |s| s.mean)
    }
}

fn gt_label(source: MaskSource) -> Result<LabelSource> {
    match source {
        MaskSource::A => Ok(LabelSource::A),
        MaskSource::B => Ok(LabelSource::B),
        MaskSource::Union => Err(Error::InvalidConfig("evaluation needs label A or B".into())),
    }
}

/// Scores precomputed predictions against one annotation set.
pub fn score_predictions(studies: &[&Study], predictions: &[MaskVolume], gt: MaskSource) -> Result<PatientEval> {
    if studies.len() != predictions.len() {
        return Err(Error::ShapeMismatch("one prediction per study required".into()));
    }
    let label = gt_label(gt)?;
    let rows = studies
        .iter()
        .zip(predictions)
        .map(|(s, p)| PatientMetrics::score(&s.patient_id, p, s.label(label)))
        .collect::<Result<Vec<_>>>()?;
    PatientEval::from_rows(rows)
}

/// Predicts every test study, then scores against the selected annotation.
pub fn patient_level_eval(
    segmenter: &dyn Segmenter,
    studies: &[&Study],
    gt: MaskSource,
    prep: &SliceConfig,
    batch_size: usize,
) -> Result<PatientEval> {
    if studies.is_empty() {
        return Err(Error::EmptyDataset("no test patients".into()));
    }
    let preds = predict_all(segmenter, studies, prep, batch_size)?;
    score_predictions(studies, &preds, gt)
}

pub fn predict_all(segmenter: &dyn Segmenter, studies: &[&Study], prep: &SliceConfig, batch_size: usize) -> Result<Vec<MaskVolume>> {
    studies.par_iter().map(|s| predict_volume(segmenter, s, prep, batch_size)).collect()
}

/// Rows: model A, model B. Columns: reference A, reference B.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossEvalMatrix {
    pub cells: [[PatientEval; 2]; 2],
}

impl CrossEvalMatrix {
    pub fn dsc(&self, model: usize, gt: usize) -> &CohortSummary {
        self.cells[model][gt].metric("dsc").expect("dsc is always summarized")
    }
}

#[derive(Debug, Clone)]
pub struct CrossEvalOutcome {
    pub matrix: CrossEvalMatrix,
    pub predictions_a: Vec<MaskVolume>,
    pub predictions_b: Vec<MaskVolume>,
}

/// Each model predicts once; both predictions are scored against both
/// annotation sets on the same patients.
pub fn cross_eval(
    model_a: &dyn Segmenter,
    model_b: &dyn Segmenter,
    studies: &[&Study],
    prep: &SliceConfig,
    batch_size: usize,
) -> Result<CrossEvalOutcome> {
    if studies.is_empty() {
        return Err(Error::EmptyDataset("no test patients".into()));
    }
    let predictions_a = predict_all(model_a, studies, prep, batch_size)?;
    let predictions_b = predict_all(model_b, studies, prep, batch_size)?;
    let row = |p: &[MaskVolume]| -> Result<[PatientEval; 2]> {
        Ok([score_predictions(studies, p, MaskSource::A)?, score_predictions(studies, p, MaskSource::B)?])
    };
    let matrix = CrossEvalMatrix { cells: [row(&predictions_a)?, row(&predictions_b)?] };
    Ok(CrossEvalOutcome { matrix, predictions_a, predictions_b })
}
