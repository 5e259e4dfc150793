use dualseg_core::dataset::{DualChannelImage, MaskSource, SliceSample, SplitAssignment};
use dualseg_core::nn::{Parameter, UNetConfig};
use dualseg_core::phantom::{generate_cohort, PhantomConfig};
use dualseg_core::training::{
    collect_slices, evaluation_loss, train_dual, train_model, SliceConfig, TrainConfig, TrainSeeds,
};

fn toy_batch(n: usize, size: usize) -> Vec<SliceSample> {
    (0..n)
        .map(|k| {
            let mut data = vec![0.0f32; 2 * size * size];
            let mut mask = vec![0u8; size * size];
            let c = 3 + k % (size - 6);
            for y in 0..size {
                for x in 0..size {
                    let inside = y.abs_diff(c) <= 2 && x.abs_diff(size / 2) <= 2;
                    data[y * size + x] = if inside { 0.3 } else { 0.6 };
                    data[size * size + y * size + x] = if inside { 0.9 } else { 0.1 };
                    mask[y * size + x] = inside as u8;
                }
            }
            SliceSample {
                image: DualChannelImage::new(size, size, data).unwrap(),
                mask,
                patient_id: format!("P{k:03}"),
                z: k,
                label_source: MaskSource::A,
            }
        })
        .collect()
}

// Frozen from a reference run: one batch of four 16×16 slices, depth-1
// base-4 network, two epochs, seeds from base 5, 64-bit arithmetic.
const GOLDEN_TRAIN: [u64; 2] = [4604204768030285823, 4604292320626212140];
const GOLDEN_VAL: [u64; 2] = [4605035894399753380, 4604671242259176198];

#[test]
fn one_batch_trace_matches_frozen_fixture() {
    let s = toy_batch(4, 16);
    let model = UNetConfig { in_channels: 2, out_channels: 1, depth: 1, base_channels: 4, input_size: 16 };
    let cfg = TrainConfig { max_epochs: 2, ..Default::default() };
    let out = train_model::<f64>(&s, &s, &model, &cfg, &TrainSeeds::from_base(5)).unwrap();
    let train: Vec<u64> = out.report.epochs.iter().map(|e| e.train_loss.to_bits()).collect();
    let val: Vec<u64> = out.report.epochs.iter().map(|e| e.val_loss.to_bits()).collect();
    assert_eq!(train, GOLDEN_TRAIN, "{:?}", out.report.epochs);
    assert_eq!(val, GOLDEN_VAL, "{:?}", out.report.epochs);
}

fn small_cohort() -> PhantomConfig {
    PhantomConfig { n_patients: 4, dims: [16, 64, 64], lesions_per_patient: [1, 2], ..Default::default() }
}

fn desk_cohort(n_patients: usize) -> PhantomConfig {
    PhantomConfig {
        n_patients,
        dims: [128, 64, 64],
        lesions_per_patient: [6, 8],
        core_radius_vox: [4.0, 6.0],
        ..Default::default()
    }
}

#[test]
fn two_patient_smoke_run_halves_the_training_loss() {
    let studies = generate_cohort(&desk_cohort(3)).unwrap();
    let ids: Vec<String> = studies.iter().map(|s| s.patient_id.clone()).collect();
    let prep = SliceConfig::default();
    let train = collect_slices(&studies, &ids[..2], MaskSource::A, &prep).unwrap();
    let val = collect_slices(&studies, &ids[2..3], MaskSource::A, &prep).unwrap();
    let model = UNetConfig::desk();
    let cfg = TrainConfig { batch_size: 1, ..TrainConfig::default() };
    let seeds = TrainSeeds::from_base(3);
    let init = dualseg_core::nn::UNetModel::<f32>::with_seed(model, seeds.model).unwrap();
    let initial = evaluation_loss(&init, &train, &cfg).unwrap();
    let out = train_model::<f32>(&train, &val, &model, &cfg, &seeds).unwrap();
    let last = out.report.epochs.last().unwrap().train_loss;
    assert!(last < 0.5 * initial, "initial {initial}, final {last}");
}

fn values(params: Vec<&Parameter<f32>>) -> Vec<Vec<f32>> {
    params.iter().map(|p| p.value.data().to_vec()).collect()
}

fn split(ids: &[String]) -> SplitAssignment {
    SplitAssignment { train: ids[..2].to_vec(), val: ids[2..3].to_vec(), test: ids[3..].to_vec() }
}

fn quick() -> (TrainConfig, UNetConfig) {
    let cfg = TrainConfig { max_epochs: 2, ..Default::default() };
    let model = UNetConfig { depth: 1, base_channels: 4, input_size: 32, ..UNetConfig::desk() };
    (cfg, model)
}

#[test]
fn identical_annotations_give_identical_models() {
    let mut studies = generate_cohort(&small_cohort()).unwrap();
    for s in &mut studies {
        s.label_b = s.label_a.clone().with_label_source(dualseg_core::volume::LabelSource::B);
    }
    let ids: Vec<String> = studies.iter().map(|s| s.patient_id.clone()).collect();
    let prep = SliceConfig { size: 32, ..Default::default() };
    let (cfg, model) = quick();
    let out = train_dual::<f32>(&studies, &split(&ids), &prep, &model, &cfg, &TrainSeeds::from_base(9)).unwrap();
    assert_eq!(values(out.model_a.parameters()), values(out.model_b.parameters()));
}

#[test]
fn distinct_annotations_give_distinct_models_and_swap_exactly() {
    let studies = generate_cohort(&small_cohort()).unwrap();
    let ids: Vec<String> = studies.iter().map(|s| s.patient_id.clone()).collect();
    let prep = SliceConfig { size: 32, ..Default::default() };
    let (cfg, model) = quick();
    let seeds = TrainSeeds::from_base(9);
    let out = train_dual::<f32>(&studies, &split(&ids), &prep, &model, &cfg, &seeds).unwrap();
    assert_ne!(values(out.model_a.parameters()), values(out.model_b.parameters()));

    let swapped: Vec<_> = studies
        .iter()
        .map(|s| {
            let mut t = s.clone();
            t.label_a = s.label_b.clone().with_label_source(dualseg_core::volume::LabelSource::A);
            t.label_b = s.label_a.clone().with_label_source(dualseg_core::volume::LabelSource::B);
            t
        })
        .collect();
    let back = train_dual::<f32>(&swapped, &split(&ids), &prep, &model, &cfg, &seeds).unwrap();
    assert_eq!(values(back.model_a.parameters()), values(out.model_b.parameters()));
    assert_eq!(values(back.model_b.parameters()), values(out.model_a.parameters()));
    assert_eq!(back.report_a.epochs, out.report_b.epochs);
}
