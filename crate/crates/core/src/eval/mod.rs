//! Patient-level 3D evaluation.
//!
//! Every axial slice of a test study is predicted, binarized at 0.5
//! (ties positive), resized back to the native grid and restacked before any
//! metric is computed. Degenerate denominators resolve to 1 (both masks
//! empty, empty reference, no negatives) or 0 (exactly one mask empty).

mod metrics;
mod pipeline;
mod report;

pub use metrics::{binarize, cohen_kappa, confusion, mean_sd, CohortSummary, ConfusionCounts, THRESHOLD};
pub use pipeline::{
    cross_eval, patient_level_eval, predict_all, predict_volume, reconstruct_3d, score_predictions, summarize,
    CrossEvalMatrix, CrossEvalOutcome, ModelSegmenter, PatientEval, PatientMetrics, Segmenter, SlicePrediction,
    METRIC_NAMES,
};
pub use report::{kappa_csv, matrix_csv, patient_csv, summary_csv, KappaRow, GT_LABELS, MODEL_LABELS};
