//! Slice samples, patient-wise splitting, augmentation and batching.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

/// Which annotation a slice mask was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MaskSource {
    A,
    B,
    /// Voxel-wise OR of A and B, used only to decide which slices to keep.
    Union,
}

/// Which image channels a model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputChannels {
    #[default]
    Dual,
    CtOnly,
    PetOnly,
}

impl InputChannels {
    pub fn count(self) -> usize {
        match self {
            InputChannels::Dual => 2,
            InputChannels::CtOnly | InputChannels::PetOnly => 1,
        }
    }

    /// Indices into [`DualChannelImage`] channels.
    pub fn indices(self) -> &'static [usize] {
        match self {
            InputChannels::Dual => &[0, 1],
            InputChannels::CtOnly => &[0],
            InputChannels::PetOnly => &[1],
        }
    }
}

/// Two-channel `(CT, PET)` image stored channel-major: `data[c * H * W + y * W + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualChannelImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl DualChannelImage {
    pub const CHANNELS: usize = 2;

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != Self::CHANNELS * height * width {
            return Err(Error::ShapeMismatch(format!(
                "dual-channel image {height}x{width} needs {} values, got {}",
                Self::CHANNELS * height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }
}

/// One axial training unit.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSample {
    pub image: DualChannelImage,
    /// `H × W`, values in `{0, 1}`.
    pub mask: Vec<u8>,
    pub patient_id: String,
    pub z: usize,
    pub label_source: MaskSource,
}

impl SliceSample {
    pub fn height(&self) -> usize {
        self.image.height
    }

    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn validate(&self) -> Result<()> {
        if self.mask.len() != self.image.height * self.image.width {
            return Err(Error::ShapeMismatch("mask and image sizes differ".into()));
        }
        if self.mask.iter().any(|&m| m > 1) {
            return Err(Error::ShapeMismatch("mask is not binary".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitAssignment {
    pub fn validate(&self, cohort: &[String]) -> Result<()> {
        use std::collections::BTreeSet;
        let mut seen = BTreeSet::new();
        for id in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidConfig(format!("patient {id} appears in two subsets")));
            }
        }
        let all: BTreeSet<&str> = cohort.iter().map(String::as_str).collect();
        if let Some(unknown) = seen.difference(&all).next() {
            return Err(Error::InvalidConfig(format!("split references unknown patient {unknown}")));
        }
        if seen.len() != all.len() {
            return Err(Error::InvalidConfig("split does not cover the cohort".into()));
        }
        if self.train.is_empty() || self.val.is_empty() || self.test.is_empty() {
            return Err(Error::InvalidConfig("every split subset must be non-empty".into()));
        }
        Ok(())
    }
}

/// Patient-wise split with ratios `train:val:test`.
///
/// Test gets `round(n·test/Σ)` and validation `round(n·val/Σ)` patients, each
/// at least one; training keeps the remainder. Halves round away from zero.
pub fn patient_split(ids: &[String], ratios: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    let n = ids.len();
    if n < 3 {
        return Err(Error::InvalidConfig(format!("patient split needs at least 3 patients, got {n}")));
    }
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::InvalidConfig(format!("split ratios must be positive, got {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    let n_test = ((n as f64 * ratios[2] / total).round() as usize).max(1);
    let n_val = ((n as f64 * ratios[1] / total).round() as usize).max(1);
    if n_test + n_val >= n {
        return Err(Error::InvalidConfig(format!("{n} patients leave no training set")));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut rng::stream(seed, &[0x5350_4C54]));
    let mut test = shuffled[..n_test].to_vec();
    let mut val = shuffled[n_test..n_test + n_val].to_vec();
    let mut train = shuffled[n_test + n_val..].to_vec();
    train.sort();
    val.sort();
    test.sort();
    Ok(SplitAssignment { train, val, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    pub enabled: bool,
    pub p_flip: f64,
    pub rot_range_deg: [f64; 2],
    pub affine_translate_frac: f64,
    pub affine_scale_range: [f64; 2],
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            p_flip: 0.5,
            rot_range_deg: [-15.0, 15.0],
            affine_translate_frac: 0.05,
            affine_scale_range: [0.95, 1.05],
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_flip) {
            return Err(Error::InvalidConfig("augment.p_flip must lie in [0, 1]".into()));
        }
        if self.rot_range_deg[0] > self.rot_range_deg[1] {
            return Err(Error::InvalidConfig("augment.rot_range_deg is reversed".into()));
        }
        if !(self.affine_translate_frac >= 0.0) {
            return Err(Error::InvalidConfig("augment.affine_translate_frac must be >= 0".into()));
        }
        let [lo, hi] = self.affine_scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::InvalidConfig("augment.affine_scale_range must be positive".into()));
        }
        Ok(())
    }
}

/// One drawn geometric map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Mirror columns.
    pub flip_horizontal: bool,
    /// Mirror rows.
    pub flip_vertical: bool,
    pub rotation_deg: f64,
    /// `(dy, dx)` as fractions of `(H, W)`.
    pub translate_frac: [f64; 2],
    pub scale: f64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            flip_horizontal: false,
            flip_vertical: false,
            rotation_deg: 0.0,
            translate_frac: [0.0, 0.0],
            scale: 1.0,
        }
    }

    pub fn draw(cfg: &AugmentationConfig, rng: &mut impl Rng) -> Self {
        let range = |rng: &mut dyn rand::RngCore, [lo, hi]: [f64; 2]| {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo..=hi)
            }
        };
        let t = cfg.affine_translate_frac;
        Self {
            flip_horizontal: rng.random_bool(cfg.p_flip),
            flip_vertical: rng.random_bool(cfg.p_flip),
            rotation_deg: range(rng, cfg.rot_range_deg),
            translate_frac: [range(rng, [-t, t]), range(rng, [-t, t])],
            scale: range(rng, cfg.affine_scale_range),
        }
    }

    /// Output pixel `(y, x)` → source coordinate, for an `h × w` image.
    fn source(&self, y: f64, x: f64, h: usize, w: usize, cos: f64, sin: f64) -> (f64, f64) {
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let dy = y - cy - self.translate_frac[0] * h as f64;
        let dx = x - cx - self.translate_frac[1] * w as f64;
        // inverse rotation, then inverse scale
        let ry = (cos * dy + sin * dx) / self.scale;
        let rx = (-sin * dy + cos * dx) / self.scale;
        let sy = if self.flip_vertical { -ry } else { ry };
        let sx = if self.flip_horizontal { -rx } else { rx };
        (sy + cy, sx + cx)
    }
}

fn bilinear_zero(data: &[f32], h: usize, w: usize, y: f64, x: f64) -> f32 {
    const TOL: f64 = 1e-9;
    if y < -TOL || x < -TOL || y > (h - 1) as f64 + TOL || x > (w - 1) as f64 + TOL {
        return 0.0;
    }
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let at = |yy: usize, xx: usize| data[yy * w + xx] as f64;
    let top = if fx == 0.0 { at(y0, x0) } else { at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx };
    let bot = if fx == 0.0 { at(y1, x0) } else { at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx };
    (if fy == 0.0 { top } else { top * (1.0 - fy) + bot * fy }) as f32
}

/// Applies one geometric map to both channels (bilinear) and the mask
/// (nearest), zero-filling outside the source.
pub fn augment_with(sample: &SliceSample, params: &AugmentParams) -> SliceSample {
    let (h, w) = (sample.height(), sample.width());
    let (sin, cos) = params.rotation_deg.to_radians().sin_cos();
    let mut out = sample.clone();
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = params.source(y as f64, x as f64, h, w, cos, sin);
            for c in 0..DualChannelImage::CHANNELS {
                out.image.channel_mut(c)[y * w + x] =
                    bilinear_zero(sample.image.channel(c), h, w, sy, sx);
            }
            let (ny, nx) = ((sy + 0.5).floor(), (sx + 0.5).floor());
            out.mask[y * w + x] = if ny >= 0.0 && nx >= 0.0 && ny < h as f64 && nx < w as f64 {
                sample.mask[ny as usize * w + nx as usize]
            } else {
                0
            };
        }
    }
    out
}

/// Draws a map from `rng` and applies it. Returns the sample untouched when
/// augmentation is disabled.
pub fn augment(sample: &SliceSample, cfg: &AugmentationConfig, rng: &mut impl Rng) -> SliceSample {
    if !cfg.enabled {
        return sample.clone();
    }
    augment_with(sample, &AugmentParams::draw(cfg, rng))
}

/// Independent augmentation stream for one sample in one epoch.
pub fn augment_stream(seed: u64, epoch: usize, sample_index: usize) -> rand_chacha::ChaCha8Rng {
    rng::stream(seed, &[0x4155_4720, epoch as u64, sample_index as u64])
}

/// Index batches for one epoch. The permutation depends only on
/// `(shuffle_seed, epoch)`; the final batch may be short.
pub fn batch_iter(n_samples: usize, batch_size: usize, shuffle_seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut order: Vec<usize> = (0..n_samples).collect();
    order.shuffle(&mut rng::stream(shuffle_seed, &[0x4241_5443, epoch as u64]));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("P{i:03}")).collect()
    }

    fn sample(h: usize, w: usize, f: impl Fn(usize, usize) -> (f32, f32, u8)) -> SliceSample {
        let mut data = vec![0.0; 2 * h * w];
        let mut mask = vec![0; h * w];
        for y in 0..h {
            for x in 0..w {
                let (a, b, m) = f(y, x);
                data[y * w + x] = a;
                data[h * w + y * w + x] = b;
                mask[y * w + x] = m;
            }
        }
        SliceSample {
            image: DualChannelImage::new(h, w, data).unwrap(),
            mask,
            patient_id: "P000".into(),
            z: 0,
            label_source: MaskSource::A,
        }
    }

    #[test]
    fn split_sizes_follow_seven_one_two() {
        for (n, want) in [(20, (14, 2, 4)), (10, (7, 1, 2)), (16, (11, 2, 3)), (3, (1, 1, 1))] {
            let s = patient_split(&ids(n), [7.0, 1.0, 2.0], 9).unwrap();
            assert_eq!((s.train.len(), s.val.len(), s.test.len()), want, "n = {n}");
            s.validate(&ids(n)).unwrap();
        }
        assert!(patient_split(&ids(2), [7.0, 1.0, 2.0], 9).is_err());
    }

    #[test]
    fn split_is_reproducible_and_seed_dependent() {
        let a = patient_split(&ids(20), [7.0, 1.0, 2.0], 1).unwrap();
        assert_eq!(a, patient_split(&ids(20), [7.0, 1.0, 2.0], 1).unwrap());
        assert_ne!(a, patient_split(&ids(20), [7.0, 1.0, 2.0], 2).unwrap());
    }

    #[test]
    fn split_validation_catches_unknown_ids() {
        let mut s = patient_split(&ids(10), [7.0, 1.0, 2.0], 1).unwrap();
        s.test[0] = "P999".into();
        assert!(s.validate(&ids(10)).is_err());
    }

    #[test]
    fn identity_params_leave_sample_unchanged() {
        let s = sample(9, 7, |y, x| ((y * 7 + x) as f32 / 63.0, 0.5, ((x + y) % 2) as u8));
        assert_eq!(augment_with(&s, &AugmentParams::identity()), s);
    }

    #[test]
    fn horizontal_flip_reverses_columns_and_is_an_involution() {
        let s = sample(5, 6, |y, x| (x as f32 * 0.1 + y as f32, 1.0 - x as f32 * 0.1, (x < 2) as u8));
        let p = AugmentParams { flip_horizontal: true, ..AugmentParams::identity() };
        let f = augment_with(&s, &p);
        for y in 0..5 {
            for x in 0..6 {
                assert_eq!(f.mask[y * 6 + x], s.mask[y * 6 + (5 - x)]);
                assert_eq!(f.image.channel(0)[y * 6 + x], s.image.channel(0)[y * 6 + (5 - x)]);
                assert_eq!(f.image.channel(1)[y * 6 + x], s.image.channel(1)[y * 6 + (5 - x)]);
            }
        }
        assert_eq!(augment_with(&f, &p), s);
    }

    #[test]
    fn rotation_fixes_the_centre_pixel() {
        let s = sample(9, 9, |y, x| (0.0, 0.0, (y == 4 && x == 4) as u8));
        let p = AugmentParams { rotation_deg: 15.0, ..AugmentParams::identity() };
        let r = augment_with(&s, &p);
        assert_eq!(r.mask[4 * 9 + 4], 1);
        assert_eq!(r.mask.iter().map(|&m| m as usize).sum::<usize>(), 1);
    }

    #[test]
    fn disabled_augmentation_is_identity() {
        let s = sample(8, 8, |y, x| (y as f32 / 8.0, x as f32 / 8.0, (y > 4) as u8));
        let cfg = AugmentationConfig { enabled: false, ..Default::default() };
        assert_eq!(augment(&s, &cfg, &mut augment_stream(1, 0, 0)), s);
    }

    #[test]
    fn batches_cover_samples_once() {
        let b = batch_iter(20, 8, 3, 0);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![8, 8, 4]);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        assert_eq!(b, batch_iter(20, 8, 3, 0));
    }

    #[test]
    fn epochs_permute_differently() {
        // Recorded with shuffle seed 42: epoch 0 and epoch 1 differ.
        let e0 = batch_iter(10, 10, 42, 0).concat();
        let e1 = batch_iter(10, 10, 42, 1).concat();
        assert_ne!(e0, e1);
        assert_eq!(e0, batch_iter(10, 10, 42, 0).concat());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn augmentation_applies_one_map_to_image_and_mask(seed in any::<u64>(), idx in 0usize..1000) {
            // channel 0 is the mask itself; thresholding it must reproduce the augmented mask
            let s = sample(16, 16, |y, x| {
                let m = ((y as i32 - 7).pow(2) + (x as i32 - 9).pow(2) <= 16) as u8;
                (m as f32, 0.3, m)
            });
            let cfg = AugmentationConfig::default();
            let mut rng = augment_stream(seed, 0, idx);
            let p = AugmentParams::draw(&cfg, &mut rng);
            let a = augment_with(&s, &p);
            prop_assert_eq!(a.height(), 16);
            prop_assert_eq!(a.image.data.len(), 2 * 256);
            prop_assert!(a.mask.iter().all(|&m| m <= 1));
            let thresholded: Vec<u8> = a.image.channel(0).iter().map(|&v| (v >= 0.5) as u8).collect();
            let mismatched = thresholded.iter().zip(&a.mask).filter(|(t, m)| t != m).count();
            // bilinear and nearest can disagree only on boundary pixels of the disc
            prop_assert!(mismatched <= 8, "mismatched {}", mismatched);
        }

        #[test]
        fn split_is_a_partition(n in 3usize..60, seed in any::<u64>()) {
            let all = ids(n);
            let s = patient_split(&all, [7.0, 1.0, 2.0], seed).unwrap();
            prop_assert!(s.validate(&all).is_ok());
        }
    }
}
