//! `<name>.volhdr` (UTF-8 JSON header) + `<name>.volraw` (little-endian,
//! Z-major payload).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Geometry, LabelSource, MaskVolume, Modality, Volume};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DType {
    #[serde(rename = "f32le")]
    F32Le,
    #[serde(rename = "u8")]
    U8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeaderModality {
    #[serde(rename = "CT")]
    Ct,
    #[serde(rename = "PET")]
    Pet,
    #[serde(rename = "MASK")]
    Mask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub format_version: u32,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub dtype: DType,
    pub modality: HeaderModality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_source: Option<LabelSource>,
}

impl VolumeHeader {
    fn geometry(&self) -> Geometry {
        Geometry { dims: self.dims, spacing: self.spacing_mm, origin: self.origin_mm }
    }
}

fn paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("volhdr"), path.with_extension("volraw"))
}

/// Writes `bytes` to a sibling temp file then renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn header_json(h: &VolumeHeader) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(h).expect("header serializes");
    s.push('\n');
    s.into_bytes()
}

pub fn write_volume(v: &Volume, path: &Path) -> Result<()> {
    v.geometry().validate()?;
    let g = v.geometry();
    let header = VolumeHeader {
        format_version: FORMAT_VERSION,
        dims: g.dims,
        spacing_mm: g.spacing,
        origin_mm: g.origin,
        dtype: DType::F32Le,
        modality: match v.modality() {
            Modality::Ct => HeaderModality::Ct,
            Modality::Pet => HeaderModality::Pet,
        },
        label_source: None,
    };
    let mut raw = Vec::with_capacity(v.voxels().len() * 4);
    for x in v.voxels() {
        raw.extend_from_slice(&x.to_le_bytes());
    }
    let (hdr, dat) = paths(path);
    atomic_write(&dat, &raw)?;
    atomic_write(&hdr, &header_json(&header))
}

pub fn write_mask(m: &MaskVolume, path: &Path) -> Result<()> {
    m.geometry().validate()?;
    m.check_binary()?;
    let g = m.geometry();
    let header = VolumeHeader {
        format_version: FORMAT_VERSION,
        dims: g.dims,
        spacing_mm: g.spacing,
        origin_mm: g.origin,
        dtype: DType::U8,
        modality: HeaderModality::Mask,
        label_source: Some(m.label_source()),
    };
    let (hdr, dat) = paths(path);
    atomic_write(&dat, m.voxels())?;
    atomic_write(&hdr, &header_json(&header))
}

fn read_parts(path: &Path) -> Result<(VolumeHeader, Vec<u8>)> {
    let (hdr, dat) = paths(path);
    let text = fs::read_to_string(&hdr).map_err(|e| Error::io(&hdr, e))?;
    let header: VolumeHeader = serde_json::from_str(&text)
        .map_err(|e| Error::MalformedHeader { path: hdr.clone(), reason: e.to_string() })?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::MalformedHeader {
            path: hdr,
            reason: format!("unsupported format_version {}", header.format_version),
        });
    }
    header.geometry().validate()?;
    let raw = fs::read(&dat).map_err(|e| Error::io(&dat, e))?;
    let width = match header.dtype {
        DType::F32Le => 4,
        DType::U8 => 1,
    };
    let expected = header.geometry().len() * width;
    if raw.len() != expected {
        return Err(Error::PayloadLength { expected, found: raw.len() });
    }
    Ok((header, raw))
}

/// Reads a scalar (CT or PET) volume.
pub fn read_volume(path: &Path) -> Result<Volume> {
    let (header, raw) = read_parts(path)?;
    let modality = match (header.dtype, header.modality) {
        (DType::F32Le, HeaderModality::Ct) => Modality::Ct,
        (DType::F32Le, HeaderModality::Pet) => Modality::Pet,
        (dtype, modality) => {
            return Err(Error::MalformedHeader {
                path: path.with_extension("volhdr"),
                reason: format!("expected scalar volume, found {dtype:?}/{modality:?}"),
            })
        }
    };
    let voxels = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Volume::new(header.geometry(), modality, voxels)
}

pub fn read_mask(path: &Path) -> Result<MaskVolume> {
    let (header, raw) = read_parts(path)?;
    if header.dtype != DType::U8 || header.modality != HeaderModality::Mask {
        return Err(Error::MalformedHeader {
            path: path.with_extension("volhdr"),
            reason: "expected u8 MASK volume".into(),
        });
    }
    let source = header.label_source.ok_or_else(|| Error::MalformedHeader {
        path: path.with_extension("volhdr"),
        reason: "mask without label_source".into(),
    })?;
    MaskVolume::new(header.geometry(), source, raw)
}
