use std::collections::HashMap;

use dualseg_core::dataset::{InputChannels, MaskSource, SliceSample};
use dualseg_core::eval::*;
use dualseg_core::nn::{UNetConfig, UNetModel};
use dualseg_core::phantom::{generate_cohort, PhantomConfig};
use dualseg_core::preprocess::resize_nearest;
use dualseg_core::training::SliceConfig;
use dualseg_core::volume::{Geometry, LabelSource, MaskVolume, Study};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Returns the chosen reference mask for each slice.
struct Oracle {
    planes: HashMap<(String, usize), Vec<u8>>,
    size: usize,
}

impl Oracle {
    fn new(studies: &[Study], source: LabelSource, size: usize) -> Self {
        let mut planes = HashMap::new();
        for s in studies {
            let [nz, ny, nx] = s.geometry().dims;
            for z in 0..nz {
                let p = resize_nearest(s.label(source).plane(z), ny, nx, size, size);
                planes.insert((s.patient_id.clone(), z), p);
            }
        }
        Self { planes, size }
    }
}

impl Segmenter for Oracle {
    fn predict(&self, batch: &[&SliceSample]) -> dualseg_core::Result<Vec<Vec<f64>>> {
        Ok(batch
            .iter()
            .map(|s| {
                assert_eq!(s.height(), self.size);
                self.planes[&(s.patient_id.clone(), s.z)].iter().map(|&m| m as f64).collect()
            })
            .collect())
    }
}

struct Constant(f64, usize);

impl Segmenter for Constant {
    fn predict(&self, batch: &[&SliceSample]) -> dualseg_core::Result<Vec<Vec<f64>>> {
        Ok(batch.iter().map(|_| vec![self.0; self.1 * self.1]).collect())
    }
}

fn cohort() -> Vec<Study> {
    let cfg = PhantomConfig { n_patients: 3, dims: [12, 32, 32], ..Default::default() };
    generate_cohort(&cfg).unwrap()
}

fn prep(size: usize) -> SliceConfig {
    SliceConfig { size, ..Default::default() }
}

#[test]
fn oracle_scores_perfectly() {
    let studies = cohort();
    let refs: Vec<&Study> = studies.iter().collect();
    for (label, source) in [(LabelSource::A, MaskSource::A), (LabelSource::B, MaskSource::B)] {
        let e = patient_level_eval(&Oracle::new(&studies, label, 32), &refs, source, &prep(32), 8).unwrap();
        for m in METRIC_NAMES {
            let s = e.metric(m).unwrap();
            assert_eq!((s.mean, s.sd, s.n), (1.0, 0.0, 3), "{m}");
        }
        assert!(patient_csv(&e).ends_with("mean±sd,1±0,1±0,1±0,1±0,,\n"));
    }
}

#[test]
fn constant_zero_scores_zero_dice_full_specificity() {
    let studies = cohort();
    let refs: Vec<&Study> = studies.iter().collect();
    let e = patient_level_eval(&Constant(0.0, 32), &refs, MaskSource::A, &prep(32), 8).unwrap();
    for p in &e.patients {
        assert!(p.reference_voxels > 0);
        assert_eq!((p.dsc, p.specificity, p.predicted_voxels), (0.0, 1.0, 0));
    }
    let half = patient_level_eval(&Constant(0.5, 32), &refs, MaskSource::A, &prep(32), 8).unwrap();
    assert!(half.patients.iter().all(|p| p.sensitivity == 1.0 && p.specificity == 0.0));
}

#[test]
fn metrics_match_brute_force_voxel_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let g = Geometry::unit([8, 8, 8]).unwrap();
    for _ in 0..100 {
        let density: f64 = rng.random_range(0.0..0.6);
        let mut draw = || (0..512).map(|_| rng.random_bool(density) as u8).collect::<Vec<u8>>();
        let (p, t) = (draw(), draw());
        let pv = MaskVolume::new(g, LabelSource::Pred, p.clone()).unwrap();
        let tv = MaskVolume::new(g, LabelSource::A, t.clone()).unwrap();
        let c = confusion(&pv, &tv).unwrap();
        let ps: std::collections::BTreeSet<usize> = (0..512).filter(|&i| p[i] == 1).collect();
        let ts: std::collections::BTreeSet<usize> = (0..512).filter(|&i| t[i] == 1).collect();
        let inter = ps.intersection(&ts).count() as f64;
        let union = ps.union(&ts).count() as f64;
        let (np, nt) = (ps.len() as f64, ts.len() as f64);
        let dsc = if np + nt == 0.0 { 1.0 } else { 2.0 * inter / (np + nt) };
        let iou = if union == 0.0 { 1.0 } else { inter / union };
        let sens = if nt == 0.0 { 1.0 } else { inter / nt };
        let neg = 512.0 - nt;
        let spec = if neg == 0.0 { 1.0 } else { (512.0 - union) / neg };
        assert_eq!(c.dsc(), dsc);
        assert_eq!(c.iou(), iou);
        assert_eq!(c.sensitivity(), sens);
        assert_eq!(c.specificity(), spec);
        assert!(c.iou() <= c.dsc());
    }
}

#[test]
fn reconstruction_stacks_planes_and_fills_gaps() {
    let g = Geometry::unit([3, 2, 2]).unwrap();
    let slices: Vec<SlicePrediction> =
        (0..3).map(|z| SlicePrediction { z, mask: vec![(z % 2) as u8, 1, 0, (z == 2) as u8] }).collect();
    let v = reconstruct_3d(&slices, &g).unwrap();
    assert_eq!(v.voxels(), &[0, 1, 0, 0, 1, 1, 0, 0, 0, 1, 0, 1]);
    let gap = reconstruct_3d(&slices[..1], &g).unwrap();
    assert_eq!(gap.plane(1), &[0, 0, 0, 0]);
    let dup = vec![slices[0].clone(), slices[0].clone()];
    assert!(reconstruct_3d(&dup, &g).is_err());
    assert!(reconstruct_3d(&[SlicePrediction { z: 3, mask: vec![0; 4] }], &g).is_err());
    assert!(reconstruct_3d(&[SlicePrediction { z: 0, mask: vec![0; 3] }], &g).is_err());
}

#[test]
fn reconstruction_round_trips_sliced_reference() {
    let studies = cohort();
    let s = &studies[0];
    let [nz, _, _] = s.geometry().dims;
    let slices: Vec<_> = (0..nz).map(|z| SlicePrediction { z, mask: s.label_a.plane(z).to_vec() }).collect();
    let v = reconstruct_3d(&slices, s.geometry()).unwrap();
    assert_eq!(v.voxels(), s.label_a.voxels());
}

#[test]
fn back_resize_from_smaller_input_stays_close() {
    // Same field of view as the 64² default grid sampled 1.5× finer, with the
    // default lesion sizes scaled to match.
    let cfg = PhantomConfig {
        n_patients: 4,
        dims: [24, 96, 96],
        core_radius_vox: [4.5, 6.75],
        halo_radius_vox: [12.0, 16.5],
        bone_offset_vox: 6.0,
        ..Default::default()
    };
    let studies = generate_cohort(&cfg).unwrap();
    let refs: Vec<&Study> = studies.iter().collect();
    // The full lesion extent survives the round trip to within 5%; the much
    // smaller cores lose proportionally more to boundary pixels.
    for (label, source, floor) in [(LabelSource::A, MaskSource::A, 0.95), (LabelSource::B, MaskSource::B, 0.89)] {
        let e = patient_level_eval(&Oracle::new(&studies, label, 64), &refs, source, &prep(64), 8).unwrap();
        assert!(e.patients.iter().all(|p| p.dsc >= 0.89));
        assert!(e.mean_dsc() >= floor, "{source:?} mean {}", e.mean_dsc());
    }
}

#[test]
fn identical_models_give_identical_rows() {
    let studies = cohort();
    let refs: Vec<&Study> = studies.iter().collect();
    let cfg = UNetConfig { input_size: 32, ..UNetConfig::desk() };
    let m = UNetModel::<f32>::with_seed(cfg, 3).unwrap();
    let seg = ModelSegmenter { model: &m, channels: InputChannels::Dual };
    let out = cross_eval(&seg, &seg, &refs, &prep(32), 8).unwrap();
    assert_eq!(out.matrix.cells[0], out.matrix.cells[1]);
    let csv = matrix_csv(&out.matrix);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "model,GT_A,GT_B");
    assert!(lines[1].starts_with("ModelA,") && lines[2].starts_with("ModelB,"));
    assert_eq!(lines[1]["ModelA".len()..], lines[2]["ModelB".len()..]);
}

#[test]
fn summary_recomputes_from_emitted_rows() {
    let studies = cohort();
    let refs: Vec<&Study> = studies.iter().collect();
    let cfg = UNetConfig { input_size: 32, ..UNetConfig::desk() };
    let m = UNetModel::<f32>::with_seed(cfg, 8).unwrap();
    let e = patient_level_eval(&ModelSegmenter { model: &m, channels: InputChannels::Dual }, &refs, MaskSource::B, &prep(32), 4)
        .unwrap();
    let csv = patient_csv(&e);
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with("mean"))
        .map(|l| l.split(',').skip(1).take(4).map(|v| v.parse().unwrap()).collect())
        .collect();
    for (k, name) in METRIC_NAMES.iter().enumerate() {
        let vals: Vec<f64> = rows.iter().map(|r| r[k]).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let s = e.metric(name).unwrap();
        assert_eq!(dualseg_core::format::fmt6(mean), dualseg_core::format::fmt6(s.mean));
        assert_eq!(dualseg_core::format::fmt6(sd), dualseg_core::format::fmt6(s.sd));
    }
}
