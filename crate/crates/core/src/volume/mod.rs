//! 3D voxel grids with physical geometry.
//!
//! Axis order is always `(z, y, x)` and voxels are stored Z-major, then Y,
//! then X. The physical position of voxel `(k, j, i)` is
//! `origin + (k, j, i) * spacing`, in millimetres.

mod io;
mod register;
mod resample;

use serde::{Deserialize, Serialize};

pub use io::{atomic_write, read_mask, read_volume, write_mask, write_volume, VolumeHeader};
pub use register::{estimate_translation, ncc_at_offset};
pub use resample::{resample_mask, resample_to_reference, resample_volume, Interp};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let g = Self { dims, spacing, origin };
        g.validate()?;
        Ok(g)
    }

    /// Unit spacing, zero origin.
    pub fn unit(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, [1.0; 3], [0.0; 3])
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidGeometry(format!("empty dims {:?}", self.dims)));
        }
        if self.spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidGeometry(format!(
                "spacing must be positive, got {:?}",
                self.spacing
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGeometry(format!("non-finite origin {:?}", self.origin)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane_len(&self) -> usize {
        self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    pub fn physical(&self, idx: [f64; 3]) -> [f64; 3] {
        [
            self.origin[0] + idx[0] * self.spacing[0],
            self.origin[1] + idx[1] * self.spacing[1],
            self.origin[2] + idx[2] * self.spacing[2],
        ]
    }

    pub fn continuous_index(&self, p: [f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.origin[0]) / self.spacing[0],
            (p[1] - self.origin[1]) / self.spacing[1],
            (p[2] - self.origin[2]) / self.spacing[2],
        ]
    }

    /// Physical centre of the grid.
    pub fn center(&self) -> [f64; 3] {
        self.physical([
            (self.dims[0] - 1) as f64 / 2.0,
            (self.dims[1] - 1) as f64 / 2.0,
            (self.dims[2] - 1) as f64 / 2.0,
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "CT")]
    Ct,
    #[serde(rename = "PET")]
    Pet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LabelSource {
    A,
    B,
    #[serde(rename = "PRED")]
    Pred,
}

impl std::fmt::Display for LabelSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LabelSource::A => "A",
            LabelSource::B => "B",
            LabelSource::Pred => "PRED",
        })
    }
}

/// Scalar volume (CT in HU or PET uptake).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    geometry: Geometry,
    modality: Modality,
    voxels: Vec<f32>,
}

impl Volume {
    pub fn new(geometry: Geometry, modality: Modality, voxels: Vec<f32>) -> Result<Self> {
        geometry.validate()?;
        if voxels.len() != geometry.len() {
            return Err(Error::PayloadLength {
                expected: geometry.len() * 4,
                found: voxels.len() * 4,
            });
        }
        if let Some(i) = voxels.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteVoxel(i));
        }
        Ok(Self { geometry, modality, voxels })
    }

    pub fn filled(geometry: Geometry, modality: Modality, value: f32) -> Result<Self> {
        Self::new(geometry, modality, vec![value; geometry.len()])
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    /// Mutable access for in-place generation; callers keep values finite.
    pub fn voxels_mut(&mut self) -> &mut [f32] {
        &mut self.voxels
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.voxels[self.geometry.index(z, y, x)]
    }

    pub fn plane(&self, z: usize) -> &[f32] {
        let n = self.geometry.plane_len();
        &self.voxels[z * n..(z + 1) * n]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Volume> {
        Volume::new(self.geometry, self.modality, self.voxels.iter().map(|&v| f(v)).collect())
    }
}

/// Binary volume, one byte per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskVolume {
    geometry: Geometry,
    label_source: LabelSource,
    voxels: Vec<u8>,
}

impl MaskVolume {
    pub fn new(geometry: Geometry, label_source: LabelSource, voxels: Vec<u8>) -> Result<Self> {
        geometry.validate()?;
        if voxels.len() != geometry.len() {
            return Err(Error::PayloadLength { expected: geometry.len(), found: voxels.len() });
        }
        check_binary(&voxels)?;
        Ok(Self { geometry, label_source, voxels })
    }

    pub fn zeros(geometry: Geometry, label_source: LabelSource) -> Result<Self> {
        Self::new(geometry, label_source, vec![0; geometry.len()])
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn label_source(&self) -> LabelSource {
        self.label_source
    }

    pub fn with_label_source(mut self, source: LabelSource) -> Self {
        self.label_source = source;
        self
    }

    pub fn voxels(&self) -> &[u8] {
        &self.voxels
    }

    /// Raw mutable buffer. Writers re-check binarity before persisting.
    pub fn voxels_mut(&mut self) -> &mut [u8] {
        &mut self.voxels
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> u8 {
        self.voxels[self.geometry.index(z, y, x)]
    }

    pub fn plane(&self, z: usize) -> &[u8] {
        let n = self.geometry.plane_len();
        &self.voxels[z * n..(z + 1) * n]
    }

    pub fn count(&self) -> usize {
        self.voxels.iter().filter(|&&v| v != 0).count()
    }

    pub fn check_binary(&self) -> Result<()> {
        check_binary(&self.voxels)
    }
}

fn check_binary(voxels: &[u8]) -> Result<()> {
    match voxels.iter().position(|&v| v > 1) {
        Some(index) => Err(Error::NonBinaryMask { index, value: voxels[index] }),
        None => Ok(()),
    }
}

/// Translation in millimetres plus a rotation about the Z axis.
///
/// Applied to a point `p` of the reference grid as
/// `R(θ)·(p − c) + c + translation`, where `c` is the reference grid centre
/// and `R(θ)` rotates the `(y, x)` plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidTransform {
    pub translation: [f64; 3],
    pub axial_rotation_deg: f64,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn translation(translation: [f64; 3]) -> Self {
        Self { translation, axial_rotation_deg: 0.0 }
    }

    pub fn is_identity(&self) -> bool {
        self.translation == [0.0; 3] && self.axial_rotation_deg == 0.0
    }

    pub fn inverse(&self) -> Self {
        let theta = (-self.axial_rotation_deg).to_radians();
        let (s, c) = theta.sin_cos();
        let [tz, ty, tx] = self.translation;
        // p = R⁻¹(q − c − t) + c
        Self {
            translation: [-tz, -(c * ty - s * tx), -(s * ty + c * tx)],
            axial_rotation_deg: -self.axial_rotation_deg,
        }
    }

    /// `self` applied after `first`, for transforms sharing a rotation centre.
    pub fn compose(&self, first: &RigidTransform) -> Self {
        let theta = self.axial_rotation_deg.to_radians();
        let (s, c) = theta.sin_cos();
        let [fz, fy, fx] = first.translation;
        Self {
            translation: [
                fz + self.translation[0],
                c * fy - s * fx + self.translation[1],
                s * fy + c * fx + self.translation[2],
            ],
            axial_rotation_deg: self.axial_rotation_deg + first.axial_rotation_deg,
        }
    }

    pub fn apply(&self, p: [f64; 3], center: [f64; 3]) -> [f64; 3] {
        let [tz, ty, tx] = self.translation;
        if self.axial_rotation_deg == 0.0 {
            return [p[0] + tz, p[1] + ty, p[2] + tx];
        }
        let (s, c) = self.axial_rotation_deg.to_radians().sin_cos();
        let dy = p[1] - center[1];
        let dx = p[2] - center[2];
        [p[0] + tz, c * dy - s * dx + center[1] + ty, s * dy + c * dx + center[2] + tx]
    }
}

/// One patient: co-registered CT and PET plus the two annotation sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub patient_id: String,
    pub ct: Volume,
    pub pet: Volume,
    pub label_a: MaskVolume,
    pub label_b: MaskVolume,
}

impl Study {
    pub fn new(
        patient_id: impl Into<String>,
        ct: Volume,
        pet: Volume,
        label_a: MaskVolume,
        label_b: MaskVolume,
    ) -> Result<Self> {
        let study = Self { patient_id: patient_id.into(), ct, pet, label_a, label_b };
        study.validate()?;
        Ok(study)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patient_id.is_empty() {
            return Err(Error::InvalidConfig("empty patient id".into()));
        }
        let g = self.ct.geometry();
        for (name, other) in [
            ("pet", self.pet.geometry()),
            ("label_a", self.label_a.geometry()),
            ("label_b", self.label_b.geometry()),
        ] {
            if other != g {
                return Err(Error::GeometryMismatch(format!(
                    "{}: {name} geometry {:?} differs from ct {:?}",
                    self.patient_id, other, g
                )));
            }
        }
        if self.ct.modality() != Modality::Ct || self.pet.modality() != Modality::Pet {
            return Err(Error::GeometryMismatch(format!(
                "{}: modality tags out of place",
                self.patient_id
            )));
        }
        Ok(())
    }

    pub fn geometry(&self) -> &Geometry {
        self.ct.geometry()
    }

    pub fn label(&self, source: LabelSource) -> &MaskVolume {
        match source {
            LabelSource::A => &self.label_a,
            LabelSource::B | LabelSource::Pred => &self.label_b,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_rejects_bad_fields() {
        assert!(Geometry::new([0, 2, 2], [1.0; 3], [0.0; 3]).is_err());
        assert!(matches!(
            Geometry::new([2, 2, 2], [0.0, 1.0, 1.0], [0.0; 3]),
            Err(Error::InvalidGeometry(_))
        ));
        assert!(Geometry::new([1, 1, 1], [1.0; 3], [f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn volume_rejects_non_finite() {
        let g = Geometry::unit([1, 1, 2]).unwrap();
        assert!(matches!(
            Volume::new(g, Modality::Ct, vec![0.0, f32::INFINITY]),
            Err(Error::NonFiniteVoxel(1))
        ));
    }

    #[test]
    fn mask_rejects_non_binary() {
        let g = Geometry::unit([1, 1, 2]).unwrap();
        assert!(MaskVolume::new(g, LabelSource::A, vec![0, 2]).is_err());
    }

    #[test]
    fn transform_inverse_and_identity_composition() {
        let t = RigidTransform { translation: [1.0, -2.0, 3.5], axial_rotation_deg: 12.0 };
        let c = [4.0, 5.0, 6.0];
        let p = [1.0, 2.0, 3.0];
        let q = t.apply(p, c);
        let back = t.inverse().apply(q, c);
        for a in 0..3 {
            assert!((back[a] - p[a]).abs() < 1e-12);
        }
        assert_eq!(t.compose(&RigidTransform::identity()), t);
        assert_eq!(RigidTransform::identity().compose(&t), t);
        let round = t.inverse().compose(&t);
        assert!(round.translation.iter().all(|v| v.abs() < 1e-12));
        assert!(round.axial_rotation_deg.abs() < 1e-12);
    }

    #[test]
    fn study_requires_shared_geometry() {
        let g = Geometry::unit([2, 2, 2]).unwrap();
        let g2 = Geometry::unit([2, 2, 3]).unwrap();
        let ct = Volume::filled(g, Modality::Ct, 0.0).unwrap();
        let pet = Volume::filled(g2, Modality::Pet, 0.0).unwrap();
        let a = MaskVolume::zeros(g, LabelSource::A).unwrap();
        let b = MaskVolume::zeros(g, LabelSource::B).unwrap();
        assert!(matches!(Study::new("P000", ct, pet, a, b), Err(Error::GeometryMismatch(_))));
    }
}
