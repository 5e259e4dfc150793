//! Cohort manifest: which volume files make up each patient.

use std::path::{Path, PathBuf};

use dualseg_core::volume::{read_mask, read_volume, write_mask, write_volume, LabelSource, Study};
use dualseg_core::Error;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub patient_id: String,
    /// Paths are relative to the manifest's directory.
    pub ct: PathBuf,
    pub pet: PathBuf,
    pub label_a: PathBuf,
    pub label_b: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortManifest {
    pub format_version: u32,
    pub patients: Vec<ManifestEntry>,
}

impl CohortManifest {
    pub fn ids(&self) -> Vec<String> {
        self.patients.iter().map(|p| p.patient_id.clone()).collect()
    }
}

pub fn manifest_path(out: &Path) -> PathBuf {
    out.join("manifest.toml")
}

/// Writes four volumes per patient under `out/cohort/` and the manifest at
/// `out/manifest.toml`.
pub fn write_cohort(studies: &[Study], out: &Path) -> CliResult<CohortManifest> {
    let dir = out.join("cohort");
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    let mut patients = Vec::with_capacity(studies.len());
    for s in studies {
        let rel = |suffix: &str| PathBuf::from("cohort").join(format!("{}_{suffix}.volhdr", s.patient_id));
        let entry = ManifestEntry {
            patient_id: s.patient_id.clone(),
            ct: rel("ct"),
            pet: rel("pet"),
            label_a: rel("label_a"),
            label_b: rel("label_b"),
        };
        write_volume(&s.ct, &out.join(&entry.ct))?;
        write_volume(&s.pet, &out.join(&entry.pet))?;
        write_mask(&s.label_a, &out.join(&entry.label_a))?;
        write_mask(&s.label_b, &out.join(&entry.label_b))?;
        patients.push(entry);
    }
    let manifest = CohortManifest { format_version: MANIFEST_VERSION, patients };
    let text = toml::to_string(&manifest).expect("manifest serializes");
    dualseg_core::volume::atomic_write(&manifest_path(out), text.as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(out: &Path) -> CliResult<CohortManifest> {
    let path = manifest_path(out);
    let text = std::fs::read_to_string(&path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingInput(path.clone())
        } else {
            CliError::Core(Error::Io { path: path.clone(), source: e })
        }
    })?;
    let manifest: CohortManifest =
        toml::from_str(&text).map_err(|e| CliError::ManifestParse { path: path.clone(), message: e.to_string() })?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(CliError::ManifestParse {
            path,
            message: format!("unsupported format_version {}", manifest.format_version),
        });
    }
    Ok(manifest)
}

pub fn load_study(out: &Path, entry: &ManifestEntry) -> CliResult<Study> {
    let label = |p: &Path, source: LabelSource| -> CliResult<_> { Ok(read_mask(&out.join(p))?.with_label_source(source)) };
    Ok(Study::new(
        entry.patient_id.clone(),
        read_volume(&out.join(&entry.ct))?,
        read_volume(&out.join(&entry.pet))?,
        label(&entry.label_a, LabelSource::A)?,
        label(&entry.label_b, LabelSource::B)?,
    )?)
}

pub fn load_cohort(out: &Path) -> CliResult<(CohortManifest, Vec<Study>)> {
    let manifest = read_manifest(out)?;
    let studies = manifest.patients.iter().map(|e| load_study(out, e)).collect::<CliResult<Vec<_>>>()?;
    Ok((manifest, studies))
}
