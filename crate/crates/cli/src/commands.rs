//! The four verbs. Each reads `--config`, works under `--out`, and writes
//! every artifact via temp-file-then-rename.

use std::path::{Path, PathBuf};

use dualseg_core::dataset::{patient_split, SplitAssignment};
use dualseg_core::eval::{
    cohen_kappa, cross_eval, kappa_csv, matrix_csv, patient_csv, summary_csv, CrossEvalOutcome, KappaRow,
    ModelSegmenter, GT_LABELS, MODEL_LABELS,
};
use dualseg_core::nn::{load_checkpoint, save_checkpoint};
use dualseg_core::phantom::generate_cohort;
use dualseg_core::preprocess::prepare_study;
use dualseg_core::training::{train_dual, DualOutcome};
use dualseg_core::volume::{atomic_write, read_mask, write_mask, Study};
use dualseg_core::{Error, Real};

use crate::config::{ExperimentConfig, OverlayBase};
use crate::error::{CliError, CliResult};
use crate::manifest::{load_cohort, write_cohort, CohortManifest};
use crate::overlay::{encode_ppm, render_overlay};

pub const MODEL_A_FILE: &str = "model_A.ckpt";
pub const MODEL_B_FILE: &str = "model_B.ckpt";
pub const REPORT_A_FILE: &str = "report_A.csv";
pub const REPORT_B_FILE: &str = "report_B.csv";
pub const SPLIT_FILE: &str = "split.toml";

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Core(Error::Io { path: dir.to_path_buf(), source: e }))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    Ok(atomic_write(path, text.as_bytes())?)
}

pub fn cmd_phantom(cfg: &ExperimentConfig, out: &Path) -> CliResult<CohortManifest> {
    create_dir(out)?;
    let studies = generate_cohort(&cfg.phantom)?;
    write_cohort(&studies, out)
}

fn read_split(out: &Path, ids: &[String]) -> CliResult<SplitAssignment> {
    let path = out.join(SPLIT_FILE);
    let text = std::fs::read_to_string(&path).map_err(|_| CliError::MissingInput(path.clone()))?;
    let split: SplitAssignment =
        toml::from_str(&text).map_err(|e| CliError::ManifestParse { path: path.clone(), message: e.to_string() })?;
    split.validate(ids)?;
    Ok(split)
}

pub fn cmd_train<T: Real>(cfg: &ExperimentConfig, out: &Path) -> CliResult<DualOutcome<T>> {
    let (manifest, studies) = load_cohort(out)?;
    let split = patient_split(&manifest.ids(), cfg.split.ratios, cfg.split.seed)?;
    write_text(&out.join(SPLIT_FILE), &toml::to_string(&split).expect("split serializes"))?;
    let outcome = train_dual::<T>(&studies, &split, &cfg.preprocess, &cfg.unet(), &cfg.train, &cfg.train_seeds())?;
    save_checkpoint(&outcome.model_a, &out.join(MODEL_A_FILE))?;
    save_checkpoint(&outcome.model_b, &out.join(MODEL_B_FILE))?;
    write_text(&out.join(REPORT_A_FILE), &outcome.report_a.to_csv())?;
    write_text(&out.join(REPORT_B_FILE), &outcome.report_b.to_csv())?;
    Ok(outcome)
}

fn test_studies<'a>(studies: &'a [Study], split: &SplitAssignment) -> Vec<&'a Study> {
    let mut picked: Vec<&Study> = studies.iter().filter(|s| split.test.contains(&s.patient_id)).collect();
    picked.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    picked
}

pub fn prediction_path(out: &Path, patient_id: &str, model: char) -> PathBuf {
    out.join("predictions").join(format!("{patient_id}_pred_{model}.volhdr"))
}

pub fn cmd_eval<T: Real>(cfg: &ExperimentConfig, out: &Path) -> CliResult<CrossEvalOutcome> {
    let (manifest, studies) = load_cohort(out)?;
    let split = read_split(out, &manifest.ids())?;
    let unet = cfg.unet();
    let model_a = load_checkpoint::<T>(&out.join(MODEL_A_FILE), &unet)?;
    let model_b = load_checkpoint::<T>(&out.join(MODEL_B_FILE), &unet)?;
    let test = test_studies(&studies, &split);
    let seg_a = ModelSegmenter { model: &model_a, channels: cfg.train.channels };
    let seg_b = ModelSegmenter { model: &model_b, channels: cfg.train.channels };
    let outcome = cross_eval(&seg_a, &seg_b, &test, &cfg.preprocess, cfg.eval.batch_size)?;

    let eval_dir = out.join("eval");
    create_dir(&eval_dir)?;
    for (m, row) in outcome.matrix.cells.iter().enumerate() {
        for (g, cell) in row.iter().enumerate() {
            let name = format!("patients_{}_{}.csv", MODEL_LABELS[m], GT_LABELS[g]);
            write_text(&eval_dir.join(name), &patient_csv(cell))?;
        }
    }
    write_text(&eval_dir.join("summary.csv"), &summary_csv(&outcome.matrix))?;
    write_text(&eval_dir.join("matrix.csv"), &matrix_csv(&outcome.matrix))?;

    let mut kappas = Vec::with_capacity(test.len());
    create_dir(&out.join("predictions"))?;
    for ((s, pa), pb) in test.iter().zip(&outcome.predictions_a).zip(&outcome.predictions_b) {
        kappas.push(KappaRow {
            patient_id: s.patient_id.clone(),
            labels: cohen_kappa(s.label_a.voxels(), s.label_b.voxels())?,
            models: cohen_kappa(pa.voxels(), pb.voxels())?,
        });
        write_mask(pa, &prediction_path(out, &s.patient_id, 'A'))?;
        write_mask(pb, &prediction_path(out, &s.patient_id, 'B'))?;
    }
    write_text(&eval_dir.join("kappa.csv"), &kappa_csv(&kappas))?;
    Ok(outcome)
}

/// Per-invocation overrides of the `[overlay]` section.
#[derive(Debug, Clone, Default)]
pub struct OverlayRequest {
    pub patient_id: Option<String>,
    pub z: Option<usize>,
}

pub fn cmd_overlay(cfg: &ExperimentConfig, out: &Path, req: &OverlayRequest) -> CliResult<PathBuf> {
    let (manifest, studies) = load_cohort(out)?;
    let split = read_split(out, &manifest.ids())?;
    let patient_id = match req.patient_id.clone().or_else(|| cfg.overlay.patient_id.clone()) {
        Some(id) => id,
        None => test_studies(&studies, &split)
            .first()
            .map(|s| s.patient_id.clone())
            .ok_or_else(|| Error::EmptyDataset("no test patients".into()))?,
    };
    let study = studies
        .iter()
        .find(|s| s.patient_id == patient_id)
        .ok_or_else(|| Error::InvalidConfig(format!("overlay.patient_id {patient_id} is not in the cohort")))?;
    let pred_a = read_mask(&prediction_path(out, &patient_id, 'A'))?;
    let pred_b = read_mask(&prediction_path(out, &patient_id, 'B'))?;
    let [nz, ny, nx] = study.geometry().dims;
    if pred_a.geometry() != study.geometry() || pred_b.geometry() != study.geometry() {
        return Err(Error::GeometryMismatch(format!("predictions for {patient_id} do not match the study grid")).into());
    }
    let z = match req.z.or(cfg.overlay.z) {
        Some(z) if z < nz => z,
        Some(z) => return Err(Error::InvalidConfig(format!("overlay.z {z} is outside 0..{nz}")).into()),
        None => (0..nz).max_by_key(|&z| (study.label_a.plane(z).iter().filter(|&&v| v != 0).count(), usize::MAX - z)).unwrap_or(0),
    };
    let prepared = prepare_study(study, &cfg.preprocess.window);
    let base = match cfg.overlay.base {
        OverlayBase::Ct => prepared.ct.plane(z),
        OverlayBase::Pet => prepared.pet.plane(z),
    };
    let pixels = render_overlay(base, pred_a.plane(z), pred_b.plane(z), ny, nx);
    let dir = out.join("overlay");
    create_dir(&dir)?;
    let path = dir.join(format!("{patient_id}_z{z:03}.ppm"));
    write_text(&path, &encode_ppm(&pixels, ny, nx))?;
    Ok(path)
}
