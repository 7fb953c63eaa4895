//! Scan-sequence datasets, the training loop and the stride study.
//!
//! A lane is the series of amplitudes along the scan axis at one
//! (time, beam) position. Training pairs are a window of `W` consecutive
//! lane values and the value that follows it.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Adam, NetConfig, ProbNet};
use crate::volume::{downsample_time, ScanVolume, VolumeKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub window: usize,
    pub stride: usize,
    pub time_downsample: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            window: 64,
            stride: 64,
            time_downsample: 5,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::config("train.sampler.window", "must be >= 2"));
        }
        if self.stride < 1 {
            return Err(Error::config("train.sampler.stride", "must be >= 1"));
        }
        if self.time_downsample < 1 {
            return Err(Error::config("train.sampler.time_downsample", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub val_stride: usize,
    pub test_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 65536,
            learning_rate: 1e-6,
            patience: 3,
            max_epochs: 50,
            seed: 0,
            val_stride: 64,
            test_stride: 1,
        }
    }
}

impl TrainConfig {
    /// Settings that converge on small synthetic corpora in minutes.
    pub fn desk() -> Self {
        Self {
            batch_size: 256,
            learning_rate: 3e-3,
            patience: 3,
            max_epochs: 12,
            val_stride: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::config("train.batch_size", "must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be positive"));
        }
        if self.patience < 1 {
            return Err(Error::config("train.patience", "must be >= 1"));
        }
        if self.max_epochs < 1 {
            return Err(Error::config("train.max_epochs", "must be >= 1"));
        }
        if self.val_stride < 1 {
            return Err(Error::config("train.val_stride", "must be >= 1"));
        }
        if self.test_stride < 1 {
            return Err(Error::config("train.test_stride", "must be >= 1"));
        }
        Ok(())
    }
}

/// Number of windows cut from a lane of length `l`.
pub fn count_windows(l: usize, w: usize, s: usize) -> Result<usize> {
    if l < 1 || w < 1 || s < 1 {
        return Err(Error::arg("count_windows", format!("L={l}, W={w}, S={s} must all be >= 1")));
    }
    Ok(if l <= w { 0 } else { (l - w - 1) / s + 1 })
}

/// Largest envelope amplitude over the corpus after time down-sampling.
pub fn corpus_max(vols: &[ScanVolume], time_downsample: usize) -> Result<f64> {
    let mut m = 0f32;
    for v in vols {
        m = m.max(downsample_time(v, time_downsample)?.max_value());
    }
    if !(m > 0.0) {
        return Err(Error::arg("vols", "corpus has no positive amplitude"));
    }
    Ok(m as f64)
}

/// Windowed training pairs over the lanes of a set of volumes.
///
/// Lanes are stored contiguously, in (volume, time, beam) order, already
/// divided by the normalization scale.
#[derive(Debug, Clone)]
pub struct SequenceDataset {
    window: usize,
    lanes: Vec<f32>,
    lane_start: Vec<usize>,
    /// (lane, offset) per sample, in enumeration order.
    index: Vec<(u32, u32)>,
}

impl SequenceDataset {
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn lane_count(&self) -> usize {
        self.lane_start.len()
    }

    /// Lane id and window offset of sample `i`.
    pub fn locate(&self, i: usize) -> (usize, usize) {
        let (l, o) = self.index[i];
        (l as usize, o as usize)
    }

    pub fn lane(&self, lane: usize) -> &[f32] {
        let start = self.lane_start[lane];
        let end = self.lane_start.get(lane + 1).copied().unwrap_or(self.lanes.len());
        &self.lanes[start..end]
    }

    pub fn sample(&self, i: usize) -> (Vec<f64>, f64) {
        let (l, o) = self.locate(i);
        let lane = self.lane(l);
        let w = self.window;
        (lane[o..o + w].iter().map(|&v| v as f64).collect(), lane[o + w] as f64)
    }

    /// Writes the samples named by `ids` row-major into `inputs` / `targets`.
    pub fn fill_batch(&self, ids: &[usize], inputs: &mut Vec<f64>, targets: &mut Vec<f64>) {
        let w = self.window;
        inputs.clear();
        targets.clear();
        for &i in ids {
            let (l, o) = self.locate(i);
            let lane = self.lane(l);
            inputs.extend(lane[o..o + w].iter().map(|&v| v as f64));
            targets.push(lane[o + w] as f64);
        }
    }
}

/// Cuts windows from every (time, beam) lane of every volume.
pub fn build_dataset(vols: &[ScanVolume], cfg: &SamplerConfig, norm_scale: f64) -> Result<SequenceDataset> {
    cfg.validate()?;
    if !(norm_scale > 0.0 && norm_scale.is_finite()) {
        return Err(Error::arg("norm_scale", format!("{norm_scale} must be positive")));
    }
    let w = cfg.window;
    let mut lanes = Vec::new();
    let mut lane_start = Vec::new();
    let mut index = Vec::new();
    for (vi, v) in vols.iter().enumerate() {
        if v.kind() != VolumeKind::Envelope {
            return Err(Error::arg("vols", format!("volume {vi} is not enveloped")));
        }
        let d = downsample_time(v, cfg.time_downsample)?;
        let (nf, nt, nb) = d.dims();
        let per_lane = count_windows(nf, w, cfg.stride)?;
        if per_lane == 0 {
            log::warn!("volume {vi} has {nf} frames, not more than the window of {w}; it contributes no samples");
        }
        for t in 0..nt {
            for b in 0..nb {
                let lane_id = lane_start.len() as u32;
                lane_start.push(lanes.len());
                let value = |f: usize| (d.get(f, t, b) as f64 / norm_scale) as f32;
                lanes.extend((0..nf).map(value));
                for k in 0..per_lane {
                    index.push((lane_id, (k * cfg.stride) as u32));
                }
            }
        }
    }
    Ok(SequenceDataset {
        window: w,
        lanes,
        lane_start,
        index,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopVerdict {
    Improved,
    Continue,
    Stop,
}

/// Stops once the monitored loss has failed to improve for `patience` consecutive epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn update(&mut self, loss: f64) -> StopVerdict {
        if loss < self.best {
            self.best = loss;
            self.stale = 0;
            StopVerdict::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                StopVerdict::Stop
            } else {
                StopVerdict::Continue
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot with the lowest validation NLL.
    pub model: ProbNet,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Batch-mean NLL over a whole dataset, evaluated in chunks of `batch`.
pub fn dataset_nll(model: &ProbNet, data: &SequenceDataset, batch: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::arg("data", "empty dataset"));
    }
    let ids: Vec<usize> = (0..data.len()).collect();
    let (mut inputs, mut targets) = (Vec::new(), Vec::new());
    let mut sum = 0.0;
    for chunk in ids.chunks(batch.max(1)) {
        data.fill_batch(chunk, &mut inputs, &mut targets);
        sum += model.loss(&inputs, &targets)? * chunk.len() as f64;
    }
    Ok(sum / data.len() as f64)
}

/// Trains `model` on `train` with Adam and early stopping on `val`.
///
/// The validation set only ever contributes scalar losses.
pub fn train(model: ProbNet, train: &SequenceDataset, val: &SequenceDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::arg("train", "training set is empty"));
    }
    if val.is_empty() {
        return Err(Error::arg("val", "validation set is empty"));
    }
    if train.window() != model.window() || val.window() != model.window() {
        return Err(Error::arg("train", "dataset window differs from the model window"));
    }
    let mut model = model;
    let mut opt = Adam::new(model.param_count(), cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let (mut inputs, mut targets) = (Vec::new(), Vec::new());
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            train.fill_batch(chunk, &mut inputs, &mut targets);
            let (loss, grad) = model.loss_and_grad(&inputs, &targets)?;
            if !loss.is_finite() {
                return Err(Error::Invariant(format!("non-finite training loss at epoch {epoch}")));
            }
            opt.step(model.params_mut(), &grad)?;
            sum += loss * chunk.len() as f64;
        }
        let train_nll = sum / train.len() as f64;
        let val_nll = dataset_nll(&model, val, cfg.batch_size.max(4096))?;
        log::info!("epoch {epoch}: train NLL {train_nll:.5}, val NLL {val_nll:.5}");
        history.push(EpochRecord {
            epoch,
            train_nll,
            val_nll,
        });
        match stopper.update(val_nll) {
            StopVerdict::Improved => {
                best = model.clone();
                best_epoch = epoch;
            }
            StopVerdict::Continue => {}
            StopVerdict::Stop => break,
        }
    }
    Ok(TrainOutcome {
        model: best,
        history,
        best_epoch,
    })
}

/// Builds datasets from enveloped volumes and trains a fresh network.
/// The normalization scale comes from the training volumes alone.
pub fn train_on_volumes(
    net: &NetConfig,
    train_vols: &[ScanVolume],
    val_vols: &[ScanVolume],
    sampler: &SamplerConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_vols.is_empty() {
        return Err(Error::arg("train", "no training volumes"));
    }
    if val_vols.is_empty() {
        return Err(Error::arg("val", "no validation volumes"));
    }
    if net.window != sampler.window {
        return Err(Error::config("train.sampler.window", "must equal net.window"));
    }
    let scale = corpus_max(train_vols, sampler.time_downsample)?;
    let train_set = build_dataset(train_vols, sampler, scale)?;
    let val_cfg = SamplerConfig {
        stride: cfg.val_stride,
        ..sampler.clone()
    };
    let val_set = build_dataset(val_vols, &val_cfg, scale)?;
    log::info!("{} training and {} validation windows", train_set.len(), val_set.len());
    let mut model = ProbNet::new(net.clone(), cfg.seed)?;
    model.set_norm_scale(scale)?;
    train(model, &train_set, &val_set, cfg)
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_nll,val_nll\n");
    for r in history {
        let _ = writeln!(s, "{},{},{}", r.epoch, r.train_nll, r.val_nll);
    }
    s
}

pub fn write_history_csv(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, history_csv(history))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrideRow {
    pub stride: usize,
    pub dataset_size: usize,
    pub mean_test_ll: f64,
    pub std_test_ll: f64,
}

/// Trains `repeats` models per stride and scores each on a test set cut at
/// `cfg.test_stride`. Repeat `r` uses seed `cfg.seed + r` for both
/// initialization and shuffling.
#[allow(clippy::too_many_arguments)]
pub fn stride_study(
    net: &NetConfig,
    train_vols: &[ScanVolume],
    val_vols: &[ScanVolume],
    test_vols: &[ScanVolume],
    strides: &[usize],
    repeats: usize,
    sampler: &SamplerConfig,
    cfg: &TrainConfig,
) -> Result<Vec<StrideRow>> {
    if repeats < 1 {
        return Err(Error::arg("repeats", "must be >= 1"));
    }
    if test_vols.is_empty() {
        return Err(Error::arg("test", "no test volumes"));
    }
    let scale = corpus_max(train_vols, sampler.time_downsample)?;
    let test_cfg = SamplerConfig {
        stride: cfg.test_stride,
        ..sampler.clone()
    };
    let test_set = build_dataset(test_vols, &test_cfg, scale)?;
    let mut rows = Vec::new();
    for &stride in strides {
        let s_cfg = SamplerConfig {
            stride,
            ..sampler.clone()
        };
        let dataset_size = build_dataset(train_vols, &s_cfg, scale)?.len();
        let mut lls = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let run_cfg = TrainConfig {
                seed: cfg.seed + r as u64,
                ..cfg.clone()
            };
            let out = train_on_volumes(net, train_vols, val_vols, &s_cfg, &run_cfg)?;
            lls.push(-dataset_nll(&out.model, &test_set, 4096)?);
        }
        let mean = lls.iter().sum::<f64>() / repeats as f64;
        let var = lls.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / repeats as f64;
        log::info!("stride {stride}: {dataset_size} windows, test LL {mean:.5}");
        rows.push(StrideRow {
            stride,
            dataset_size,
            mean_test_ll: mean,
            std_test_ll: var.sqrt(),
        });
    }
    Ok(rows)
}

pub fn stride_csv(rows: &[StrideRow]) -> String {
    let mut s = String::from("stride,dataset_size,mean_test_ll,std_test_ll\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.stride, r.dataset_size, r.mean_test_ll, r.std_test_ll);
    }
    s
}
