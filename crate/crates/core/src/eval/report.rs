//! Comma-separated report writers. LF line endings, six significant digits.

use super::metrics::CohortSummary;
use super::pipeline::{CrossEvalMatrix, PatientEval};
use crate::format::fmt6;

pub const MODEL_LABELS: [&str; 2] = ["ModelA", "ModelB"];
pub const GT_LABELS: [&str; 2] = ["GT_A", "GT_B"];

fn pm(s: &CohortSummary) -> String {
    format!("{}±{}", fmt6(s.mean), fmt6(s.sd))
}

/// Per-patient rows followed by one `mean±sd` row.
pub fn patient_csv(eval: &PatientEval) -> String {
    let mut out = String::from("patient_id,dsc,iou,sensitivity,specificity,predicted_voxels,reference_voxels\n");
    for r in &eval.patients {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.patient_id,
            fmt6(r.dsc),
            fmt6(r.iou),
            fmt6(r.sensitivity),
            fmt6(r.specificity),
            r.predicted_voxels,
            r.reference_voxels
        ));
    }
    let cells: Vec<String> = eval.summary.iter().map(pm).collect();
    out.push_str(&format!("mean±sd,{},,\n", cells.join(",")));
    out
}

/// `model,gt,metric,mean,sd,n` for every cell of the matrix.
pub fn summary_csv(matrix: &CrossEvalMatrix) -> String {
    let mut out = String::from("model,gt,metric,mean,sd,n\n");
    for (m, row) in matrix.cells.iter().enumerate() {
        for (g, cell) in row.iter().enumerate() {
            for s in &cell.summary {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    MODEL_LABELS[m],
                    GT_LABELS[g],
                    s.metric,
                    fmt6(s.mean),
                    fmt6(s.sd),
                    s.n
                ));
            }
        }
    }
    out
}

/// The 2×2 DSC grid, each cell `mean±sd`.
pub fn matrix_csv(matrix: &CrossEvalMatrix) -> String {
    let mut out = format!("model,{},{}\n", GT_LABELS[0], GT_LABELS[1]);
    for (m, label) in MODEL_LABELS.iter().enumerate() {
        out.push_str(&format!("{label},{},{}\n", pm(matrix.dsc(m, 0)), pm(matrix.dsc(m, 1))));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct KappaRow {
    pub patient_id: String,
    /// Label A against label B.
    pub labels: f64,
    /// Model A prediction against model B prediction.
    pub models: f64,
}

pub fn kappa_csv(rows: &[KappaRow]) -> String {
    let mut out = String::from("patient_id,kappa_label_a_vs_b,kappa_model_a_vs_b\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.patient_id, fmt6(r.labels), fmt6(r.models)));
    }
    out
}
