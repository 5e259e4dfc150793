//! The training loop and the decoupled dual-source orchestration.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{hybrid_loss, LossConfig};
use super::optim::{adam_step, cosine_lr, early_stop_update, AdamConfig, AdamState, EarlyStopState, ScheduleConfig, StopDecision};
use crate::dataset::{augment, augment_stream, batch_iter, AugmentationConfig, InputChannels, MaskSource, SliceSample, SplitAssignment};
use crate::format::fmt6;
use crate::nn::{Mode, Tensor, UNetConfig, UNetModel};
use crate::preprocess::{training_slices, WindowSpec};
use crate::volume::Study;
use crate::{Error, Real, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub channels: InputChannels,
    pub loss: LossConfig,
    pub schedule: ScheduleConfig,
    pub optimizer: AdamConfig,
    pub augment: AugmentationConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            max_epochs: 20,
            patience: 10,
            channels: InputChannels::Dual,
            loss: LossConfig::default(),
            schedule: ScheduleConfig::default(),
            optimizer: AdamConfig::default(),
            augment: AugmentationConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("train.batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("train.max_epochs must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidConfig("train.patience must be at least 1".into()));
        }
        self.loss.validate()?;
        self.schedule.validate()?;
        if self.max_epochs > self.schedule.t_max {
            return Err(Error::InvalidConfig(format!(
                "train.max_epochs {} exceeds schedule.t_max {}",
                self.max_epochs, self.schedule.t_max
            )));
        }
        self.optimizer.validate()?;
        self.augment.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSeeds {
    pub model: u64,
    pub shuffle: u64,
    pub augment: u64,
}

impl TrainSeeds {
    pub fn from_base(seed: u64) -> Self {
        Self {
            model: crate::rng::derive_seed(seed, &[1]),
            shuffle: crate::rng::derive_seed(seed, &[2]),
            augment: crate::rng::derive_seed(seed, &[3]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub label_source: MaskSource,
    pub channels: InputChannels,
    pub epochs: Vec<EpochRecord>,
    /// Epoch at which early stopping fired, if it did.
    pub stopped_epoch: Option<usize>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub wall_clock_seconds: f64,
}

impl TrainReport {
    /// `epoch,train_loss,val_loss,lr` rows. Timing is left out so reports
    /// from identical runs compare byte-for-byte.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,lr\n");
        for r in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", r.epoch, fmt6(r.train_loss), fmt6(r.val_loss), fmt6(r.lr)));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: UNetModel<T>,
    pub report: TrainReport,
}

/// Stacks the selected channels of `samples` into `N×C×H×W` and the masks
/// into `N×1×H×W`.
pub fn batch_tensors<T: Real>(samples: &[&SliceSample], channels: InputChannels) -> Result<(Tensor<T>, Tensor<T>)> {
    let first = samples.first().ok_or_else(|| Error::EmptyDataset("empty batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let picks = channels.indices();
    let mut x = Vec::with_capacity(samples.len() * picks.len() * h * w);
    let mut y = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if s.height() != h || s.width() != w {
            return Err(Error::ShapeMismatch("batch mixes slice sizes".into()));
        }
        for &c in picks {
            x.extend(s.image.channel(c).iter().map(|&v| T::from_f64_lossy(v as f64)));
        }
        y.extend(s.mask.iter().map(|&m| if m != 0 { T::one() } else { T::zero() }));
    }
    Ok((
        Tensor::from_vec(&[samples.len(), picks.len(), h, w], x)?,
        Tensor::from_vec(&[samples.len(), 1, h, w], y)?,
    ))
}

fn check_inventory(samples: &[SliceSample], what: &str, size: usize) -> Result<MaskSource> {
    let first = samples.first().ok_or_else(|| Error::EmptyDataset(format!("{what} set has no slices")))?;
    for s in samples {
        if s.label_source != first.label_source {
            return Err(Error::InvalidConfig(format!("{what} set mixes label sources")));
        }
        if s.height() != size || s.width() != size {
            return Err(Error::ShapeMismatch(format!(
                "{what} slice {}x{} does not match model input {size}",
                s.height(),
                s.width()
            )));
        }
    }
    Ok(first.label_source)
}

/// Mean hybrid loss over `samples` in eval mode, batches taken in order and
/// weighted by their size.
pub fn evaluation_loss<T: Real>(model: &UNetModel<T>, samples: &[SliceSample], cfg: &TrainConfig) -> Result<f64> {
    let refs: Vec<&SliceSample> = samples.iter().collect();
    let mut total = 0.0;
    for chunk in refs.chunks(cfg.batch_size) {
        let (x, y) = batch_tensors::<T>(chunk, cfg.channels)?;
        let p = model.infer(&x)?;
        total += hybrid_loss(p.data(), y.data(), &cfg.loss)?.value * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

pub fn train_model<T: Real>(
    train: &[SliceSample],
    val: &[SliceSample],
    model_config: &UNetConfig,
    cfg: &TrainConfig,
    seeds: &TrainSeeds,
) -> Result<TrainOutcome<T>> {
    train_model_observed(train, val, model_config, cfg, seeds, &mut |_| {})
}

/// [`train_model`] with a callback after every completed epoch.
pub fn train_model_observed<T: Real>(
    train: &[SliceSample],
    val: &[SliceSample],
    model_config: &UNetConfig,
    cfg: &TrainConfig,
    seeds: &TrainSeeds,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    model_config.validate()?;
    if model_config.in_channels != cfg.channels.count() {
        return Err(Error::InvalidConfig(format!(
            "model.in_channels {} does not match {:?} input",
            model_config.in_channels, cfg.channels
        )));
    }
    let label_source = check_inventory(train, "training", model_config.input_size)?;
    if check_inventory(val, "validation", model_config.input_size)? != label_source {
        return Err(Error::InvalidConfig("training and validation label sources differ".into()));
    }

    let started = Instant::now();
    let mut model = UNetModel::<T>::with_seed(*model_config, seeds.model)?;
    let mut adam = AdamState::new(model.parameters(), cfg.optimizer);
    let mut stop = EarlyStopState::new(cfg.patience);
    let mut best: Option<(UNetModel<T>, usize)> = None;
    let mut epochs = Vec::new();
    let mut stopped_epoch = None;

    for epoch in 0..cfg.max_epochs {
        let lr = cosine_lr(epoch, &cfg.schedule)?;
        model.set_mode(Mode::Train);
        let mut total = 0.0;
        for (b, idx) in batch_iter(train.len(), cfg.batch_size, seeds.shuffle, epoch).into_iter().enumerate() {
            let batch: Vec<SliceSample> = idx
                .iter()
                .map(|&i| augment(&train[i], &cfg.augment, &mut augment_stream(seeds.augment, epoch, i)))
                .collect();
            let refs: Vec<&SliceSample> = batch.iter().collect();
            let (x, y) = batch_tensors::<T>(&refs, cfg.channels)?;
            model.zero_grad();
            let p = model.forward(&x)?;
            let loss = hybrid_loss(p.data(), y.data(), &cfg.loss)?;
            if !loss.value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b, value: loss.value });
            }
            model.backward(&Tensor::from_vec(p.shape(), loss.grad)?)?;
            adam_step(&mut model.parameters_mut(), &mut adam, lr)?;
            total += loss.value * idx.len() as f64;
        }
        let train_loss = total / train.len() as f64;

        model.set_mode(Mode::Eval);
        let val_loss = evaluation_loss(&model, val, cfg)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0, value: val_loss });
        }
        let record = EpochRecord { epoch, train_loss, val_loss, lr };
        epochs.push(record);
        observer(&record);

        let improved = val_loss < stop.best_val_loss;
        let decision = early_stop_update(&mut stop, val_loss);
        if improved {
            let mut snapshot = model.clone();
            snapshot.zero_grad();
            best = Some((snapshot, epoch));
        }
        if decision == StopDecision::Stop {
            stopped_epoch = Some(epoch);
            break;
        }
    }

    let (mut model, best_epoch) = best.expect("the first finite validation loss always improves");
    model.set_mode(Mode::Eval);
    let report = TrainReport {
        label_source,
        channels: cfg.channels,
        epochs,
        stopped_epoch,
        best_epoch,
        best_val_loss: stop.best_val_loss,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome { model, report })
}

/// How studies become model-ready slices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SliceConfig {
    pub window: WindowSpec,
    pub size: usize,
}

impl Default for SliceConfig {
    fn default() -> Self {
        Self { window: WindowSpec::default(), size: 64 }
    }
}

/// Slices of the listed patients, in list order, drawn with `source` masks
/// from the shared A∪B-filtered inventory.
pub fn collect_slices(studies: &[Study], ids: &[String], source: MaskSource, prep: &SliceConfig) -> Result<Vec<SliceSample>> {
    let by_id: BTreeMap<&str, &Study> = studies.iter().map(|s| (s.patient_id.as_str(), s)).collect();
    let picked: Vec<&Study> = ids
        .iter()
        .map(|id| by_id.get(id.as_str()).copied().ok_or_else(|| Error::InvalidConfig(format!("unknown patient {id}"))))
        .collect::<Result<_>>()?;
    let per: Vec<Vec<SliceSample>> =
        picked.par_iter().map(|s| training_slices(s, &prep.window, source, prep.size)).collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

#[derive(Debug, Clone)]
pub struct DualOutcome<T> {
    pub model_a: UNetModel<T>,
    pub model_b: UNetModel<T>,
    pub report_a: TrainReport,
    pub report_b: TrainReport,
}

/// Trains one model per annotation set on the same slice inventory with the
/// same seeds. The two runs share nothing and execute concurrently.
pub fn train_dual<T: Real>(
    studies: &[Study],
    split: &SplitAssignment,
    prep: &SliceConfig,
    model_config: &UNetConfig,
    cfg: &TrainConfig,
    seeds: &TrainSeeds,
) -> Result<DualOutcome<T>> {
    let run = |source: MaskSource| -> Result<TrainOutcome<T>> {
        let train = collect_slices(studies, &split.train, source, prep)?;
        let val = collect_slices(studies, &split.val, source, prep)?;
        train_model(&train, &val, model_config, cfg, seeds)
    };
    let (a, b) = rayon::join(|| run(MaskSource::A), || run(MaskSource::B));
    let (a, b) = (a?, b?);
    Ok(DualOutcome { model_a: a.model, model_b: b.model, report_a: a.report, report_b: b.report })
}
