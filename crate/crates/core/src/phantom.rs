//! Deterministic synthetic PET/CT cohorts with two annotation sets.
//!
//! Each patient has a tubular cortical bone running along Z inside a soft
//! tissue body. Lesions sit on the cortex: their core is carved out of the
//! CT (bone destruction) and they carry a Gaussian PET hotspot. Label B marks
//! the core only. Label A marks the halo region where PET uptake exceeds a
//! fraction of the lesion peak, plus the core, so `B ⊆ A` always holds.
//!
//! Two kinds of distractors keep either modality from solving the task
//! alone: PET hotspots in soft tissue with no bone destruction, and small
//! benign CT defects in the cortex with no uptake.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::volume::{
    resample_to_reference, Geometry, Interp, LabelSource, MaskVolume, Modality, RigidTransform,
    Study, Volume,
};
use crate::{Error, Result};

pub const AIR_HU: f32 = -1000.0;
pub const SOFT_TISSUE_HU: f32 = 40.0;
pub const MARROW_HU: f32 = 20.0;
pub const BONE_HU: f32 = 1200.0;
pub const METAL_HU: f32 = 3000.0;
pub const CT_MIN_HU: f32 = -1000.0;
pub const CT_MAX_HU: f32 = 3100.0;
pub const PET_BASELINE: f32 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub n_patients: usize,
    /// `(Z, Y, X)`.
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub seed: u64,
    /// Inclusive range.
    pub lesions_per_patient: [usize; 2],
    pub implant_probability: f64,
    /// Maximum absolute integer PET shift per axis, in voxels.
    pub pet_misalignment_vox: [u32; 3],
    pub noise_sd_hu: f64,
    pub pet_noise_sd: f64,
    pub core_radius_vox: [f64; 2],
    /// Drawn independently of the core radius, so uptake extent says nothing
    /// about the size of the bone destruction.
    pub halo_radius_vox: [f64; 2],
    /// Maximum in-plane offset of the bone axis from the body centre.
    pub bone_offset_vox: f64,
    pub pet_peak: [f64; 2],
    pub destruction_hu: f64,
    /// Label A keeps halo voxels whose uptake exceeds this fraction of the peak.
    pub label_a_uptake_fraction: f64,
    /// Hotspot Gaussian sigma as a fraction of the halo radius.
    pub hotspot_sigma_ratio: f64,
    pub false_hotspots_per_patient: usize,
    pub ct_decoys_per_patient: usize,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            n_patients: 20,
            dims: [32, 64, 64],
            spacing_mm: [2.0, 1.0, 1.0],
            seed: 2024,
            lesions_per_patient: [1, 2],
            implant_probability: 0.3,
            pet_misalignment_vox: [3, 3, 3],
            noise_sd_hu: 30.0,
            pet_noise_sd: 0.05,
            core_radius_vox: [3.0, 4.5],
            halo_radius_vox: [8.0, 11.0],
            bone_offset_vox: 4.0,
            pet_peak: [6.0, 10.0],
            destruction_hu: 300.0,
            label_a_uptake_fraction: 0.4,
            hotspot_sigma_ratio: 0.6,
            false_hotspots_per_patient: 1,
            ct_decoys_per_patient: 1,
        }
    }
}

fn check_range(name: &str, r: [f64; 2], positive: bool) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite()) || r[0] > r[1] || (positive && r[0] <= 0.0) {
        return Err(Error::InvalidConfig(format!("{name}: invalid range {r:?}")));
    }
    Ok(())
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients < 1 {
            return Err(Error::InvalidConfig("n_patients must be at least 1".into()));
        }
        Geometry::new(self.dims, self.spacing_mm, [0.0; 3])
            .map_err(|e| Error::InvalidConfig(format!("dims/spacing_mm: {e}")))?;
        if self.dims[1] < 24 || self.dims[2] < 24 {
            return Err(Error::InvalidConfig("dims: in-plane size must be at least 24".into()));
        }
        if self.lesions_per_patient[0] > self.lesions_per_patient[1] {
            return Err(Error::InvalidConfig("lesions_per_patient: min exceeds max".into()));
        }
        if !(0.0..=1.0).contains(&self.implant_probability) {
            return Err(Error::InvalidConfig("implant_probability must lie in [0, 1]".into()));
        }
        if self.pet_misalignment_vox.iter().any(|&m| m > 4) {
            return Err(Error::InvalidConfig("pet_misalignment_vox must be within ±4".into()));
        }
        if !(self.noise_sd_hu >= 0.0 && self.pet_noise_sd >= 0.0) {
            return Err(Error::InvalidConfig("noise levels must be non-negative".into()));
        }
        check_range("core_radius_vox", self.core_radius_vox, true)?;
        check_range("pet_peak", self.pet_peak, true)?;
        check_range("halo_radius_vox", self.halo_radius_vox, true)?;
        if self.halo_radius_vox[0] <= self.core_radius_vox[1] {
            return Err(Error::InvalidConfig("halo_radius_vox must exceed every core radius".into()));
        }
        if !(self.bone_offset_vox >= 0.0 && self.bone_offset_vox.is_finite()) {
            return Err(Error::InvalidConfig("bone_offset_vox must be non-negative".into()));
        }
        if !(self.label_a_uptake_fraction > 0.0 && self.label_a_uptake_fraction < 1.0) {
            return Err(Error::InvalidConfig("label_a_uptake_fraction must lie in (0, 1)".into()));
        }
        if !(self.hotspot_sigma_ratio > 0.0) {
            return Err(Error::InvalidConfig("hotspot_sigma_ratio must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionSpec {
    /// Voxel coordinates `(z, y, x)`.
    pub center: [f64; 3],
    pub core_radius_vox: f64,
    pub halo_radius_vox: f64,
    pub pet_peak: f64,
    pub destruction_hu: f64,
}

impl LesionSpec {
    pub fn validate(&self, dims: [usize; 3]) -> Result<()> {
        if !(self.core_radius_vox > 0.0 && self.halo_radius_vox > self.core_radius_vox) {
            return Err(Error::Generation("halo radius must exceed core radius".into()));
        }
        if !(self.pet_peak > 0.0) {
            return Err(Error::Generation("pet_peak must be positive".into()));
        }
        for a in 0..3 {
            if self.center[a] < 0.0 || self.center[a] > (dims[a] - 1) as f64 {
                return Err(Error::Generation(format!("lesion centre {:?} outside volume", self.center)));
            }
        }
        Ok(())
    }
}

/// A generated patient plus the ground truth needed to test alignment and
/// the modal-complementarity properties.
#[derive(Debug, Clone)]
pub struct GeneratedPatient {
    /// Study with the PET realigned onto the CT grid.
    pub study: Study,
    /// Shift that was applied to the PET before realignment.
    pub injected: RigidTransform,
    /// The misaligned PET, `resample(true_pet, injected)`.
    pub shifted_pet: Volume,
    pub lesions: Vec<LesionSpec>,
    /// Centres of PET hotspots placed outside bone with no lesion.
    pub false_hotspots: Vec<[f64; 3]>,
    /// Centres of cortical CT defects with no uptake.
    pub ct_decoys: Vec<[f64; 3]>,
    /// Tube axis `(y, x)` and radii `(inner, outer)` in voxels.
    pub bone_axis: [f64; 2],
    pub bone_radii: [f64; 2],
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// Inclusive integer index range covering `[c − r, c + r]`, clipped to `[0, n)`.
fn span(c: f64, r: f64, n: usize) -> std::ops::Range<usize> {
    let lo = (c - r).floor().max(0.0) as usize;
    let hi = ((c + r).ceil() as i64 + 1).clamp(0, n as i64) as usize;
    lo..hi.max(lo)
}

struct Anatomy {
    geometry: Geometry,
    axis: [f64; 2],
    inner: f64,
    outer: f64,
    body: [f64; 2],
    body_center: [f64; 2],
}

impl Anatomy {
    fn radial(&self, y: f64, x: f64) -> f64 {
        ((y - self.axis[0]).powi(2) + (x - self.axis[1]).powi(2)).sqrt()
    }

    fn in_body(&self, y: f64, x: f64) -> bool {
        let dy = (y - self.body_center[0]) / self.body[0];
        let dx = (x - self.body_center[1]) / self.body[1];
        dy * dy + dx * dx <= 1.0
    }

    /// Signed margin to the body boundary, in voxels (approximate).
    fn body_margin(&self, y: f64, x: f64) -> f64 {
        let dy = (y - self.body_center[0]) / self.body[0];
        let dx = (x - self.body_center[1]) / self.body[1];
        (1.0 - (dy * dy + dx * dx).sqrt()) * self.body[0].min(self.body[1])
    }
}

/// Generates one patient from its own seed.
pub fn generate_patient(seed: u64, config: &PhantomConfig, index: usize) -> Result<GeneratedPatient> {
    config.validate()?;
    if index >= config.n_patients {
        return Err(Error::OutOfRange(format!(
            "patient index {index} >= n_patients {}",
            config.n_patients
        )));
    }
    let mut rng = rng::stream(seed, &[0x5048_414E]);
    let geometry = Geometry::new(config.dims, config.spacing_mm, [0.0; 3])?;
    let [nz, ny, nx] = config.dims;
    let plane = ny.min(nx) as f64;

    let center = [(ny - 1) as f64 / 2.0, (nx - 1) as f64 / 2.0];
    let anatomy = Anatomy {
        geometry,
        axis: [
            center[0] + rng.random_range(-1.0..=1.0) * config.bone_offset_vox,
            center[1] + rng.random_range(-1.0..=1.0) * config.bone_offset_vox,
        ],
        outer: 0.22 * plane,
        inner: 0.13 * plane,
        body: [0.42 * ny as f64, 0.44 * nx as f64],
        body_center: center,
    };

    let n_lesions = rng.random_range(config.lesions_per_patient[0]..=config.lesions_per_patient[1]);
    let shift: [i64; 3] = std::array::from_fn(|a| {
        let m = config.pet_misalignment_vox[a] as i64;
        if m == 0 {
            0
        } else {
            rng.random_range(-m..=m)
        }
    });

    let mut lesions = Vec::with_capacity(n_lesions);
    for _ in 0..n_lesions {
        lesions.push(place_lesion(&mut rng, config, &anatomy)?);
    }

    let z_window = if lesions.is_empty() {
        (0.0, (nz - 1) as f64)
    } else {
        let lo = lesions.iter().map(|l| l.center[0]).fold(f64::INFINITY, f64::min);
        let hi = lesions.iter().map(|l| l.center[0]).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };

    let max_peak = lesions.iter().map(|l| l.pet_peak).fold(0.0, f64::max);
    let min_peak = lesions.iter().map(|l| l.pet_peak).fold(f64::INFINITY, f64::min);
    let mut false_hotspots = Vec::new();
    let mut false_specs = Vec::new();
    for _ in 0..config.false_hotspots_per_patient {
        if let Some(h) = place_false_hotspot(&mut rng, config, &anatomy, &lesions, z_window) {
            let peak_ref = if lesions.is_empty() { config.pet_peak[0] } else { min_peak.min(max_peak) };
            let peak = peak_ref * rng.random_range(0.6..0.9);
            let halo = uniform(&mut rng, config.halo_radius_vox);
            false_specs.push((h, peak, halo * config.hotspot_sigma_ratio));
            false_hotspots.push(h);
        }
    }

    let mut ct_decoys = Vec::new();
    let mut decoy_specs = Vec::new();
    for _ in 0..config.ct_decoys_per_patient {
        let r = rng.random_range(config.core_radius_vox[0]..=config.core_radius_vox[1]);
        if let Some(c) = place_decoy(&mut rng, &anatomy, &lesions, r, z_window) {
            decoy_specs.push((c, r));
            ct_decoys.push(c);
        }
    }

    let implant = if rng.random_bool(config.implant_probability) {
        place_implant(&mut rng, &anatomy, &lesions, nz)
    } else {
        None
    };

    // CT
    let noise = Normal::new(0.0, config.noise_sd_hu.max(0.0)).expect("valid sd");
    let pet_noise = Normal::new(0.0, config.pet_noise_sd.max(0.0)).expect("valid sd");
    let mut ct = vec![AIR_HU; geometry.len()];
    let mut uptake = vec![0.0f64; geometry.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let (yf, xf) = (y as f64, x as f64);
                let i = geometry.index(z, y, x);
                if !anatomy.in_body(yf, xf) {
                    continue;
                }
                let r = anatomy.radial(yf, xf);
                ct[i] = if r <= anatomy.inner {
                    MARROW_HU
                } else if r <= anatomy.outer {
                    BONE_HU
                } else {
                    SOFT_TISSUE_HU
                };
                uptake[i] = PET_BASELINE as f64;
            }
        }
    }
    for &(c, r) in &decoy_specs {
        carve(&mut ct, &geometry, c, r, config.destruction_hu as f32, &anatomy);
    }
    for l in &lesions {
        carve(&mut ct, &geometry, l.center, l.core_radius_vox, l.destruction_hu as f32, &anatomy);
    }
    if let Some((axis, radius, zr)) = implant {
        for z in zr.clone() {
            for y in span(axis[0], radius, ny) {
                for x in span(axis[1], radius, nx) {
                    if (y as f64 - axis[0]).powi(2) + (x as f64 - axis[1]).powi(2) <= radius * radius {
                        ct[geometry.index(z, y, x)] = METAL_HU;
                    }
                }
            }
        }
    }
    for v in ct.iter_mut() {
        if *v != AIR_HU && config.noise_sd_hu > 0.0 {
            *v += noise.sample(&mut rng) as f32;
        }
        *v = v.clamp(CT_MIN_HU, CT_MAX_HU);
    }

    // PET uptake field (noise-free) and labels
    let hotspots: Vec<([f64; 3], f64, f64)> = lesions
        .iter()
        .map(|l| (l.center, l.pet_peak, l.halo_radius_vox * config.hotspot_sigma_ratio))
        .chain(false_specs.iter().copied())
        .collect();
    for &(c, peak, sigma) in &hotspots {
        let reach = 4.0 * sigma;
        for z in span(c[0], reach, nz) {
            for y in span(c[1], reach, ny) {
                for x in span(c[2], reach, nx) {
                    let d2 = dist2([z as f64, y as f64, x as f64], c);
                    let i = geometry.index(z, y, x);
                    if anatomy.in_body(y as f64, x as f64) {
                        uptake[i] += peak * (-d2 / (2.0 * sigma * sigma)).exp();
                    }
                }
            }
        }
    }

    let mut label_a = vec![0u8; geometry.len()];
    let mut label_b = vec![0u8; geometry.len()];
    for l in &lesions {
        let thr = config.label_a_uptake_fraction * l.pet_peak;
        for z in span(l.center[0], l.halo_radius_vox, nz) {
            for y in span(l.center[1], l.halo_radius_vox, ny) {
                for x in span(l.center[2], l.halo_radius_vox, nx) {
                    let d2 = dist2([z as f64, y as f64, x as f64], l.center);
                    let i = geometry.index(z, y, x);
                    if d2 <= l.core_radius_vox * l.core_radius_vox {
                        label_b[i] = 1;
                        label_a[i] = 1;
                    } else if d2 <= l.halo_radius_vox * l.halo_radius_vox && uptake[i] > thr {
                        label_a[i] = 1;
                    }
                }
            }
        }
    }

    let mut pet = vec![0.0f32; geometry.len()];
    for (i, p) in pet.iter_mut().enumerate() {
        if uptake[i] > 0.0 {
            let v = uptake[i] + if config.pet_noise_sd > 0.0 { pet_noise.sample(&mut rng) } else { 0.0 };
            *p = v.max(0.0) as f32;
        }
    }

    let ct = Volume::new(geometry, Modality::Ct, ct)?;
    let true_pet = Volume::new(geometry, Modality::Pet, pet)?;
    let injected = RigidTransform::translation([
        shift[0] as f64 * config.spacing_mm[0],
        shift[1] as f64 * config.spacing_mm[1],
        shift[2] as f64 * config.spacing_mm[2],
    ]);
    let shifted_pet = resample_to_reference(&true_pet, &geometry, &injected, Interp::Trilinear)?;
    let realigned = resample_to_reference(&shifted_pet, &geometry, &injected.inverse(), Interp::Trilinear)?;

    let study = Study::new(
        format!("P{index:03}"),
        ct,
        realigned,
        MaskVolume::new(geometry, LabelSource::A, label_a)?,
        MaskVolume::new(geometry, LabelSource::B, label_b)?,
    )?;
    Ok(GeneratedPatient {
        study,
        injected,
        shifted_pet,
        lesions,
        false_hotspots,
        ct_decoys,
        bone_axis: anatomy.axis,
        bone_radii: [anatomy.inner, anatomy.outer],
    })
}

fn carve(ct: &mut [f32], g: &Geometry, c: [f64; 3], r: f64, hu: f32, anatomy: &Anatomy) {
    let [nz, ny, nx] = g.dims;
    for z in span(c[0], r, nz) {
        for y in span(c[1], r, ny) {
            for x in span(c[2], r, nx) {
                if dist2([z as f64, y as f64, x as f64], c) <= r * r
                    && anatomy.in_body(y as f64, x as f64)
                {
                    ct[g.index(z, y, x)] = hu;
                }
            }
        }
    }
}

const PLACEMENT_ATTEMPTS: usize = 64;

fn place_lesion(rng: &mut ChaCha8Rng, config: &PhantomConfig, anatomy: &Anatomy) -> Result<LesionSpec> {
    let [nz, ny, nx] = anatomy.geometry.dims;
    let core = uniform(rng, config.core_radius_vox);
    let halo = uniform(rng, config.halo_radius_vox);
    let mz = config.pet_misalignment_vox[0] as f64;
    let lo = halo + mz;
    let hi = (nz - 1) as f64 - halo - mz;
    let ring = 0.5 * (anatomy.inner + anatomy.outer);
    for _ in 0..PLACEMENT_ATTEMPTS {
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let y = anatomy.axis[0] + ring * theta.sin();
        let x = anatomy.axis[1] + ring * theta.cos();
        // clamp z so the halo fits; fall back to the middle slab on short volumes
        let z = if lo <= hi { rng.random_range(lo..=hi) } else { (nz - 1) as f64 / 2.0 };
        let fits_z = z - core >= 0.0 && z + core <= (nz - 1) as f64;
        let fits_plane = y - halo >= 0.0
            && x - halo >= 0.0
            && y + halo <= (ny - 1) as f64
            && x + halo <= (nx - 1) as f64;
        if fits_z && fits_plane {
            let spec = LesionSpec {
                center: [z, y, x],
                core_radius_vox: core,
                halo_radius_vox: halo,
                pet_peak: uniform(rng, config.pet_peak),
                destruction_hu: config.destruction_hu,
            };
            spec.validate(anatomy.geometry.dims)?;
            return Ok(spec);
        }
    }
    Err(Error::Generation(format!(
        "lesion with halo radius {halo:.2} does not fit in volume {:?}",
        anatomy.geometry.dims
    )))
}

fn place_false_hotspot(
    rng: &mut ChaCha8Rng,
    config: &PhantomConfig,
    anatomy: &Anatomy,
    lesions: &[LesionSpec],
    z_window: (f64, f64),
) -> Option<[f64; 3]> {
    let [_, ny, nx] = anatomy.geometry.dims;
    let clearance = config.halo_radius_vox[1];
    for _ in 0..PLACEMENT_ATTEMPTS {
        let y = rng.random_range(0.0..(ny - 1) as f64);
        let x = rng.random_range(0.0..(nx - 1) as f64);
        let z = if z_window.0 < z_window.1 { rng.random_range(z_window.0..=z_window.1) } else { z_window.0 };
        let c = [z, y, x];
        let outside_bone = anatomy.radial(y, x) >= anatomy.outer + 3.0;
        let inside_body = anatomy.body_margin(y, x) >= 3.0;
        let clear = lesions
            .iter()
            .all(|l| dist2(c, l.center).sqrt() >= l.halo_radius_vox + clearance + 2.0);
        if outside_bone && inside_body && clear {
            return Some(c);
        }
    }
    None
}

fn place_decoy(
    rng: &mut ChaCha8Rng,
    anatomy: &Anatomy,
    lesions: &[LesionSpec],
    radius: f64,
    z_window: (f64, f64),
) -> Option<[f64; 3]> {
    let nz = anatomy.geometry.dims[0];
    let ring = 0.5 * (anatomy.inner + anatomy.outer);
    for _ in 0..PLACEMENT_ATTEMPTS {
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let z = if z_window.0 < z_window.1 { rng.random_range(z_window.0..=z_window.1) } else { z_window.0 };
        let c = [
            z.clamp(radius, (nz - 1) as f64 - radius).max(0.0),
            anatomy.axis[0] + ring * theta.sin(),
            anatomy.axis[1] + ring * theta.cos(),
        ];
        if lesions.iter().all(|l| dist2(c, l.center).sqrt() >= l.halo_radius_vox * 1.5 + radius + 2.0) {
            return Some(c);
        }
    }
    None
}

type Implant = ([f64; 2], f64, std::ops::Range<usize>);

fn place_implant(
    rng: &mut ChaCha8Rng,
    anatomy: &Anatomy,
    lesions: &[LesionSpec],
    nz: usize,
) -> Option<Implant> {
    let radius = 1.5;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let r = rng.random_range(0.0..(anatomy.inner - radius - 1.0).max(0.5));
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let axis = [anatomy.axis[0] + r * theta.sin(), anatomy.axis[1] + r * theta.cos()];
        let len = rng.random_range(nz / 3..=nz.max(2) - 1).max(1);
        let z0 = rng.random_range(0..=nz - len);
        let zr = z0..z0 + len;
        // never touch a Label B core
        let clear = lesions.iter().all(|l| {
            let dz = if (l.center[0] as usize) < zr.start {
                zr.start as f64 - l.center[0]
            } else if l.center[0] > (zr.end - 1) as f64 {
                l.center[0] - (zr.end - 1) as f64
            } else {
                0.0
            };
            let dp = ((l.center[1] - axis[0]).powi(2) + (l.center[2] - axis[1]).powi(2)).sqrt();
            dz > l.core_radius_vox + 1.0 || dp > l.core_radius_vox + radius + 1.0
        });
        if clear {
            return Some((axis, radius, zr));
        }
    }
    None
}

/// Generates `config.n_patients` studies in index order. Patient `i` uses
/// seed `config.seed + i`, so a cohort is a prefix of any larger cohort with
/// the same seed.
pub fn generate_cohort(config: &PhantomConfig) -> Result<Vec<Study>> {
    Ok(generate_cohort_detailed(config)?.into_iter().map(|p| p.study).collect())
}

pub fn generate_cohort_detailed(config: &PhantomConfig) -> Result<Vec<GeneratedPatient>> {
    use rayon::prelude::*;
    config.validate()?;
    (0..config.n_patients)
        .into_par_iter()
        .map(|i| generate_patient(config.seed.wrapping_add(i as u64), config, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PhantomConfig {
        PhantomConfig { n_patients: 4, dims: [24, 48, 48], ..Default::default() }
    }

    #[test]
    fn generation_is_deterministic() {
        let c = small();
        let a = generate_patient(11, &c, 1).unwrap();
        let b = generate_patient(11, &c, 1).unwrap();
        assert_eq!(a.study, b.study);
        assert_eq!(a.injected, b.injected);
    }

    #[test]
    fn label_b_is_strict_subset_of_label_a() {
        let c = small();
        for i in 0..c.n_patients {
            let p = generate_patient(c.seed + i as u64, &c, i).unwrap();
            let (a, b) = (&p.study.label_a, &p.study.label_b);
            assert!(a.voxels().iter().zip(b.voxels()).all(|(&a, &b)| b <= a));
            assert!(b.count() > 0);
            assert!(a.count() > b.count(), "patient {i}: {} vs {}", a.count(), b.count());
        }
    }

    #[test]
    fn pet_argmax_lies_in_a_lesion_core() {
        let c = small();
        for i in 0..c.n_patients {
            let p = generate_patient(c.seed + i as u64, &c, i).unwrap();
            let pet = &p.study.pet;
            let g = pet.geometry();
            let (mut best, mut at) = (f32::NEG_INFINITY, [0usize; 3]);
            for z in 0..g.dims[0] {
                for y in 0..g.dims[1] {
                    for x in 0..g.dims[2] {
                        if pet.get(z, y, x) > best {
                            best = pet.get(z, y, x);
                            at = [z, y, x];
                        }
                    }
                }
            }
            let atf = [at[0] as f64, at[1] as f64, at[2] as f64];
            assert!(
                p.lesions.iter().any(|l| dist2(atf, l.center).sqrt() <= l.core_radius_vox),
                "patient {i}: argmax {at:?} outside all cores"
            );
        }
    }

    #[test]
    fn ct_values_stay_in_range() {
        let c = PhantomConfig { noise_sd_hu: 400.0, implant_probability: 1.0, ..small() };
        let p = generate_patient(5, &c, 0).unwrap();
        assert!(p.study.ct.voxels().iter().all(|&v| (CT_MIN_HU..=CT_MAX_HU).contains(&v)));
    }

    #[test]
    fn no_lesions_gives_empty_labels() {
        let c = PhantomConfig { n_patients: 1, lesions_per_patient: [0, 0], ..small() };
        let cohort = generate_cohort(&c).unwrap();
        assert_eq!(cohort.len(), 1);
        assert_eq!(cohort[0].label_a.count(), 0);
        assert_eq!(cohort[0].label_b.count(), 0);
    }

    #[test]
    fn cohort_ids_and_seed_sensitivity() {
        let c = PhantomConfig { n_patients: 20, dims: [20, 32, 32], core_radius_vox: [2.0, 3.0], ..Default::default() };
        let cohort = generate_cohort(&c).unwrap();
        let ids: std::collections::BTreeSet<_> = cohort.iter().map(|s| s.patient_id.clone()).collect();
        assert_eq!(ids.len(), 20);
        assert_eq!(cohort[0].patient_id, "P000");
        let other = generate_cohort(&PhantomConfig { seed: c.seed + 1, ..c.clone() }).unwrap();
        assert!(cohort.iter().zip(&other).any(|(a, b)| a.ct != b.ct));
    }

    #[test]
    fn oversized_lesions_fail_generation() {
        let c = PhantomConfig { core_radius_vox: [20.0, 21.0], halo_radius_vox: [22.0, 23.0], ..small() };
        assert!(matches!(generate_patient(1, &c, 0), Err(Error::Generation(_))));
    }

    #[test]
    fn modalities_are_complementary() {
        let c = small();
        let cohort: Vec<_> = (0..c.n_patients)
            .map(|i| generate_patient(c.seed + i as u64, &c, i).unwrap())
            .collect();
        // Label A reaches voxels whose CT is indistinguishable from healthy bone.
        let sd = c.noise_sd_hu as f32;
        let hidden: usize = cohort
            .iter()
            .map(|p| {
                let s = &p.study;
                s.label_a
                    .voxels()
                    .iter()
                    .zip(s.ct.voxels())
                    .filter(|(&a, &ct)| a == 1 && (ct - BONE_HU).abs() <= sd)
                    .count()
            })
            .sum();
        assert!(hidden > 0);
        // A PET hotspot sits in soft tissue, outside bone and outside every label.
        let misleading = cohort.iter().any(|p| {
            p.false_hotspots.iter().any(|h| {
                let g = p.study.geometry();
                let (z, y, x) = (h[0].round() as usize, h[1].round() as usize, h[2].round() as usize);
                let ct = p.study.ct.get(z, y, x);
                let pet = p.study.pet.get(z, y, x);
                let radial = ((h[1] - p.bone_axis[0]).powi(2) + (h[2] - p.bone_axis[1]).powi(2)).sqrt();
                radial > p.bone_radii[1]
                    && (ct - SOFT_TISSUE_HU).abs() < 5.0 * sd
                    && pet > 3.0 * PET_BASELINE
                    && p.study.label_a.voxels()[g.index(z, y, x)] == 0
            })
        });
        assert!(misleading);
    }

    #[test]
    fn zero_patients_is_invalid() {
        let c = PhantomConfig { n_patients: 0, ..small() };
        let err = generate_cohort(&c).unwrap_err();
        assert!(err.to_string().contains("n_patients"));
    }
}
