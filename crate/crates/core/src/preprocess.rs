//! Bone windowing, min-max normalisation, axial slicing, background-slice
//! filtering and resizing.

use serde::{Deserialize, Serialize};

use crate::dataset::{DualChannelImage, MaskSource, SliceSample};
use crate::volume::{Modality, Study, Volume};
use crate::{Error, Real, Result};

pub const NORMALIZE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSpec {
    pub width: f64,
    pub center: f64,
}

impl Default for WindowSpec {
    /// Bone window: width 1500 HU, centre 350 HU.
    fn default() -> Self {
        Self { width: 1500.0, center: 350.0 }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.center.is_finite()) {
            return Err(Error::InvalidConfig("window width must be positive".into()));
        }
        Ok(())
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.center - self.width / 2.0, self.center + self.width / 2.0)
    }

    pub fn apply<T: Real>(&self, v: T) -> T {
        let (lo, hi) = self.bounds();
        v.min(T::from_f64_lossy(hi)).max(T::from_f64_lossy(lo))
    }
}

/// Clamps every voxel into `[L − W/2, L + W/2]`. Only meaningful for CT.
pub fn window_ct(v: &Volume, spec: &WindowSpec) -> Volume {
    debug_assert_eq!(v.modality(), Modality::Ct);
    v.map(|x| spec.apply(x)).expect("clamping keeps voxels finite")
}

/// `(v − min) / (max − min + eps)` over the whole slice of values.
pub fn min_max_normalize_values<T: Real>(values: &[T], eps: T) -> Vec<T> {
    let Some(&first) = values.first() else {
        return Vec::new();
    };
    let (lo, hi) = values.iter().fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let denom = hi - lo + eps;
    values.iter().map(|&v| (v - lo) / denom).collect()
}

/// Per-volume min-max normalisation into `[0, 1)`.
///
/// Computed in `f64`; a maximum that rounds to `1.0` in `f32` is stored as
/// the largest `f32` below one.
pub fn min_max_normalize(v: &Volume, eps: f64) -> Volume {
    let wide: Vec<f64> = v.voxels().iter().map(|&x| x as f64).collect();
    let below_one = 1.0f32 - f32::EPSILON / 2.0;
    let out = min_max_normalize_values(&wide, eps)
        .into_iter()
        .map(|x| (x as f32).min(below_one))
        .collect();
    Volume::new(*v.geometry(), v.modality(), out).expect("normalised voxels are finite")
}

/// Windowed + normalised CT, normalised PET. Labels are untouched.
pub fn prepare_study(study: &Study, window: &WindowSpec) -> Study {
    Study {
        patient_id: study.patient_id.clone(),
        ct: min_max_normalize(&window_ct(&study.ct, window), NORMALIZE_EPS),
        pet: min_max_normalize(&study.pet, NORMALIZE_EPS),
        label_a: study.label_a.clone(),
        label_b: study.label_b.clone(),
    }
}

/// One sample per axial plane, `z` ascending.
pub fn slice_axial(study: &Study, source: MaskSource) -> Result<Vec<SliceSample>> {
    study.validate()?;
    let [nz, ny, nx] = study.geometry().dims;
    let plane = ny * nx;
    let samples = (0..nz)
        .map(|z| {
            let mut data = Vec::with_capacity(2 * plane);
            data.extend_from_slice(study.ct.plane(z));
            data.extend_from_slice(study.pet.plane(z));
            let mask = match source {
                MaskSource::A => study.label_a.plane(z).to_vec(),
                MaskSource::B => study.label_b.plane(z).to_vec(),
                MaskSource::Union => study
                    .label_a
                    .plane(z)
                    .iter()
                    .zip(study.label_b.plane(z))
                    .map(|(&a, &b)| a | b)
                    .collect(),
            };
            SliceSample {
                image: DualChannelImage { height: ny, width: nx, data },
                mask,
                patient_id: study.patient_id.clone(),
                z,
                label_source: source,
            }
        })
        .collect();
    Ok(samples)
}

/// Keeps the samples whose aligned criterion mask has a positive pixel.
pub fn filter_background(samples: Vec<SliceSample>, criteria: &[SliceSample]) -> Result<Vec<SliceSample>> {
    if samples.len() != criteria.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} samples but {} criterion masks",
            samples.len(),
            criteria.len()
        )));
    }
    let mut kept = Vec::new();
    for (s, c) in samples.into_iter().zip(criteria) {
        if s.patient_id != c.patient_id || s.z != c.z {
            return Err(Error::ShapeMismatch(format!(
                "criterion ({}, {}) does not align with sample ({}, {})",
                c.patient_id, c.z, s.patient_id, s.z
            )));
        }
        if c.mask.iter().any(|&m| m != 0) {
            kept.push(s);
        }
    }
    Ok(kept)
}

/// Bilinear resize with the align-corners convention.
pub fn resize_bilinear(src: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    if (h, w) == (oh, ow) {
        return src.to_vec();
    }
    let ratio = |n: usize, o: usize| if o > 1 { (n - 1) as f64 / (o - 1) as f64 } else { 0.0 };
    let (ry, rx) = (ratio(h, oh), ratio(w, ow));
    let mut out = vec![0.0f32; oh * ow];
    for y in 0..oh {
        let sy = y as f64 * ry;
        let y0 = (sy.floor() as usize).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for x in 0..ow {
            let sx = x as f64 * rx;
            let x0 = (sx.floor() as usize).min(w - 1);
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            let at = |yy: usize, xx: usize| src[yy * w + xx] as f64;
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
            let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
            out[y * ow + x] = (top * (1.0 - fy) + bot * fy) as f32;
        }
    }
    out
}

/// Nearest-neighbour resize sampling source pixel centres.
pub fn resize_nearest<T: Copy>(src: &[T], h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    if (h, w) == (oh, ow) {
        return src.to_vec();
    }
    let pick = |o: usize, n: usize, on: usize| (((o as f64 + 0.5) * n as f64 / on as f64).floor() as usize).min(n - 1);
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let sy = pick(y, h, oh);
        for x in 0..ow {
            out.push(src[sy * w + pick(x, w, ow)]);
        }
    }
    out
}

/// Plain rescale to `h × w`: bilinear (align corners) for the image, nearest
/// for the mask.
pub fn resize(sample: &SliceSample, h: usize, w: usize) -> Result<SliceSample> {
    if h < 2 || w < 2 {
        return Err(Error::OutOfRange(format!("resize target {h}x{w} is degenerate")));
    }
    let (sh, sw) = (sample.height(), sample.width());
    if (sh, sw) == (h, w) {
        return Ok(sample.clone());
    }
    let mut data = Vec::with_capacity(2 * h * w);
    for c in 0..DualChannelImage::CHANNELS {
        data.extend(resize_bilinear(sample.image.channel(c), sh, sw, h, w));
    }
    Ok(SliceSample {
        image: DualChannelImage::new(h, w, data)?,
        mask: resize_nearest(&sample.mask, sh, sw, h, w),
        patient_id: sample.patient_id.clone(),
        z: sample.z,
        label_source: sample.label_source,
    })
}

/// Full training-inventory pipeline for one study: prepare, slice with the
/// requested label, keep slices whose A∪B plane is non-empty, resize.
pub fn training_slices(
    study: &Study,
    window: &WindowSpec,
    source: MaskSource,
    size: usize,
) -> Result<Vec<SliceSample>> {
    let prepared = prepare_study(study, window);
    let samples = slice_axial(&prepared, source)?;
    let union = slice_axial(&prepared, MaskSource::Union)?;
    filter_background(samples, &union)?
        .iter()
        .map(|s| resize(s, size, size))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Geometry, LabelSource, MaskVolume};

    fn ct(values: &[f32]) -> Volume {
        let g = Geometry::unit([1, 1, values.len()]).unwrap();
        Volume::new(g, Modality::Ct, values.to_vec()).unwrap()
    }

    #[test]
    fn bone_window_clamps_exactly() {
        let w = window_ct(&ct(&[2000.0, -1000.0, 350.0, 1100.0, -400.0]), &WindowSpec::default());
        assert_eq!(w.voxels(), &[1100.0, -400.0, 350.0, 1100.0, -400.0]);
        assert_eq!(window_ct(&w, &WindowSpec::default()), w);
    }

    #[test]
    fn normalisation_examples() {
        let n = min_max_normalize_values(&[-400.0f64, 350.0, 1100.0], 1e-8);
        assert_eq!(n[0], 0.0);
        assert!((n[1] - 750.0 / (1500.0 + 1e-8)).abs() <= 1e-12);
        assert!((n[2] - 1500.0 / (1500.0 + 1e-8)).abs() <= 1e-12);
        assert_eq!(min_max_normalize_values(&[5.0f64, 5.0, 5.0], 1e-8), vec![0.0; 3]);
        let u = min_max_normalize_values(&[0.0f64, 1.0], 1e-8);
        assert!((u[1] - 1.0 / (1.0 + 1e-8)).abs() <= 1e-15);
    }

    #[test]
    fn f32_normalisation_stays_below_one() {
        let v = min_max_normalize(&ct(&[-400.0, 0.0, 1100.0]), NORMALIZE_EPS);
        assert_eq!(v.voxels()[0], 0.0);
        assert!(v.voxels().iter().all(|&x| (0.0..1.0).contains(&x)));
    }

    fn tiny_study(nz: usize) -> Study {
        let g = Geometry::unit([nz, 3, 4]).unwrap();
        let ct = Volume::new(g, Modality::Ct, (0..g.len()).map(|i| i as f32).collect()).unwrap();
        let pet = Volume::new(g, Modality::Pet, (0..g.len()).map(|i| (g.len() - i) as f32).collect()).unwrap();
        let mut a = vec![0u8; g.len()];
        let mut b = vec![0u8; g.len()];
        a[g.index(1, 1, 1)] = 1;
        a[g.index(2, 0, 0)] = 1;
        b[g.index(1, 1, 1)] = 1;
        Study::new(
            "P007",
            ct,
            pet,
            MaskVolume::new(g, LabelSource::A, a).unwrap(),
            MaskVolume::new(g, LabelSource::B, b).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn slicing_indexes_planes_and_round_trips_labels() {
        let s = tiny_study(32);
        let slices = slice_axial(&s, MaskSource::A).unwrap();
        assert_eq!(slices.len(), 32);
        assert!(slices.iter().enumerate().all(|(k, x)| x.z == k && x.patient_id == "P007"));
        assert_eq!(slices[5].image.channel(0), s.ct.plane(5));
        assert_eq!(slices[5].image.channel(1), s.pet.plane(5));
        let reassembled: Vec<u8> = slices.iter().flat_map(|x| x.mask.clone()).collect();
        assert_eq!(reassembled, s.label_a.voxels());
    }

    #[test]
    fn background_filter_uses_union() {
        let s = tiny_study(4);
        let b = slice_axial(&s, MaskSource::B).unwrap();
        let u = slice_axial(&s, MaskSource::Union).unwrap();
        let kept = filter_background(b, &u).unwrap();
        assert_eq!(kept.iter().map(|x| x.z).collect::<Vec<_>>(), vec![1, 2]);
        let empty = slice_axial(&Study { label_a: s.label_b.clone(), ..s.clone() }, MaskSource::Union).unwrap();
        assert_eq!(filter_background(empty.clone(), &empty).unwrap().len(), 1);
        assert!(filter_background(empty[..2].to_vec(), &empty[1..3]).is_err());
    }

    #[test]
    fn resize_examples() {
        let s = SliceSample {
            image: DualChannelImage::new(2, 2, vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap(),
            mask: vec![1, 0, 0, 0],
            patient_id: "P".into(),
            z: 0,
            label_source: MaskSource::A,
        };
        assert_eq!(resize(&s, 2, 2).unwrap(), s);
        let r = resize(&s, 3, 3).unwrap();
        assert_eq!(r.image.channel(0)[4], 0.5);
        let m = resize(&s, 4, 4).unwrap().mask;
        #[rustfmt::skip]
        assert_eq!(m, vec![1, 1, 0, 0,
                           1, 1, 0, 0,
                           0, 0, 0, 0,
                           0, 0, 0, 0]);
        assert!(resize(&s, 1, 4).is_err());
    }
}
