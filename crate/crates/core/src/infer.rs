//! Sequential sweep inference.
//!
//! Frames are visited in scan order. Each (time, beam) lane keeps a ring
//! buffer of the last `W` values believed to be clean; the network turns
//! every buffer into a predicted distribution for the next frame, and a
//! voxel whose measured amplitude is anomalous under that prediction is
//! flagged. Flagged voxels enter the buffer as the predicted mean instead
//! of the measured value, so a defect does not leak into later predictions.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morph::{area_opening, filter_from_min_size, Connectivity};
use crate::net::ProbNet;
use crate::registry::{paddings, thresholds, PaddingStrategy, ThresholdRule};
use crate::volume::{downsample_time, ScanVolume, VolumeKind};
use crate::weibull::WeibullParams;

/// Anything that maps a batch of windows to next-value distributions.
pub trait SequencePredictor: Sync {
    fn window(&self) -> usize;
    fn norm_scale(&self) -> f64;
    /// `inputs` holds `n × window()` values, row-major.
    fn predict(&self, inputs: &[f64]) -> Result<Vec<WeibullParams>>;
}

impl SequencePredictor for ProbNet {
    fn window(&self) -> usize {
        ProbNet::window(self)
    }

    fn norm_scale(&self) -> f64 {
        ProbNet::norm_scale(self)
    }

    fn predict(&self, inputs: &[f64]) -> Result<Vec<WeibullParams>> {
        self.forward(inputs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMode {
    Forward,
    Backward,
    Both,
}

impl std::str::FromStr for SweepMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(SweepMode::Forward),
            "backward" => Ok(SweepMode::Backward),
            "both" => Ok(SweepMode::Both),
            _ => Err(Error::arg("sweep", format!("`{s}` is not forward, backward or both"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub confidence: f64,
    /// Registered padding strategy name.
    pub padding: String,
    pub sweep: SweepMode,
    /// Registered threshold rule name.
    pub threshold: String,
    pub time_downsample: usize,
    pub min_defect_mm: f64,
    pub connectivity: Connectivity,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            confidence: 0.9999999,
            padding: "reflect".into(),
            sweep: SweepMode::Both,
            threshold: "upper".into(),
            time_downsample: 10,
            min_defect_mm: 3.0,
            connectivity: Connectivity::Eight,
        }
    }
}

impl InferConfig {
    pub fn validate(&self) -> Result<()> {
        check_confidence(self.confidence)?;
        paddings().get(&self.padding)?;
        thresholds().get(&self.threshold)?;
        if self.time_downsample < 1 {
            return Err(Error::config("infer.time_downsample", "must be >= 1"));
        }
        if !(self.min_defect_mm > 0.0 && self.min_defect_mm.is_finite()) {
            return Err(Error::config("infer.min_defect_mm", "must be positive"));
        }
        Ok(())
    }
}

pub fn check_confidence(c: f64) -> Result<()> {
    if c > 0.0 && c < 1.0 {
        Ok(())
    } else {
        Err(Error::arg("confidence", format!("{c} is outside the open interval (0, 1)")))
    }
}

/// An envelope volume divided by a normalization scale.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedVolume {
    vol: ScanVolume,
    scale: f64,
}

impl NormalizedVolume {
    pub fn new(envelope: &ScanVolume, scale: f64) -> Result<Self> {
        if envelope.kind() != VolumeKind::Envelope {
            return Err(Error::arg("vol", "inference needs an enveloped volume"));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::arg("scale", format!("{scale} must be positive")));
        }
        Ok(Self {
            vol: envelope.scaled((1.0 / scale) as f32),
            scale,
        })
    }

    pub fn volume(&self) -> &ScanVolume {
        &self.vol
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn reversed_frames(&self) -> Self {
        Self {
            vol: self.vol.reversed_frames(),
            scale: self.scale,
        }
    }
}

/// One pass over the frames in storage order.
pub fn forward_sweep(
    model: &dyn SequencePredictor,
    vol: &NormalizedVolume,
    confidence: f64,
    padding: &dyn PaddingStrategy,
    rule: &dyn ThresholdRule,
) -> Result<ScanVolume> {
    check_confidence(confidence)?;
    if vol.scale() != model.norm_scale() {
        return Err(Error::Invariant(format!(
            "volume normalized by {} but the model expects {}",
            vol.scale(),
            model.norm_scale()
        )));
    }
    let v = vol.volume();
    let (nf, nt, nb) = v.dims();
    let w = model.window();
    let lanes = nt * nb;

    // ring[lane * w + slot]; `head` is the slot holding the oldest value
    let mut ring = vec![0f64; lanes * w];
    for slot in 0..w {
        if let Some(src) = padding.source_frame(slot, w, nf)? {
            let frame = v.frame(src);
            for (lane, &x) in frame.iter().enumerate() {
                ring[lane * w + slot] = x as f64;
            }
        }
    }
    let mut head = 0usize;
    let mut inputs = vec![0f64; lanes * w];
    let mut mask = vec![0f32; nf * lanes];
    let started = Instant::now();
    for f in 0..nf {
        for lane in 0..lanes {
            let src = &ring[lane * w..(lane + 1) * w];
            let dst = &mut inputs[lane * w..(lane + 1) * w];
            dst[..w - head].copy_from_slice(&src[head..]);
            dst[w - head..].copy_from_slice(&src[..head]);
        }
        let t0 = Instant::now();
        let pred = model.predict(&inputs)?;
        log::debug!("frame {f}: {} predictions in {:?}", pred.len(), t0.elapsed());
        if pred.len() != lanes {
            return Err(Error::Invariant(format!("{} predictions for {lanes} lanes", pred.len())));
        }
        let frame = v.frame(f);
        let out = &mut mask[f * lanes..(f + 1) * lanes];
        for lane in 0..lanes {
            let measured = frame[lane] as f64;
            let p = &pred[lane];
            let next = if rule.is_anomalous(measured, p, confidence) {
                out[lane] = 1.0;
                p.mean()
            } else {
                measured
            };
            ring[lane * w + head] = next;
        }
        head = (head + 1) % w;
    }
    log::info!("sweep over {nf} frames × {lanes} lanes took {:?}", started.elapsed());
    v.with_data(VolumeKind::Mask, mask)
}

fn strategies(cfg: &InferConfig) -> Result<(std::sync::Arc<dyn PaddingStrategy>, std::sync::Arc<dyn ThresholdRule>)> {
    Ok((paddings().get(&cfg.padding)?, thresholds().get(&cfg.threshold)?))
}

/// A single sweep in the direction given by `mode` (`Both` is rejected).
pub fn sweep(model: &dyn SequencePredictor, vol: &NormalizedVolume, cfg: &InferConfig, mode: SweepMode) -> Result<ScanVolume> {
    let (pad, rule) = strategies(cfg)?;
    match mode {
        SweepMode::Forward => forward_sweep(model, vol, cfg.confidence, pad.as_ref(), rule.as_ref()),
        SweepMode::Backward => {
            let m = forward_sweep(model, &vol.reversed_frames(), cfg.confidence, pad.as_ref(), rule.as_ref())?;
            Ok(m.reversed_frames())
        }
        SweepMode::Both => Err(Error::arg("mode", "a single sweep is forward or backward")),
    }
}

/// Voxelwise AND of two masks.
pub fn combine(a: &ScanVolume, b: &ScanVolume) -> Result<ScanVolume> {
    if a.dims() != b.dims() {
        return Err(Error::arg("b", format!("dims {:?} differ from {:?}", b.dims(), a.dims())));
    }
    if a.kind() != VolumeKind::Mask || b.kind() != VolumeKind::Mask {
        return Err(Error::arg("a", "combine needs two masks"));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| if x != 0.0 && y != 0.0 { 1.0 } else { 0.0 })
        .collect();
    a.with_data(VolumeKind::Mask, data)
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub forward: Option<ScanVolume>,
    pub backward: Option<ScanVolume>,
    pub combined: Option<ScanVolume>,
    pub final_mask: ScanVolume,
    pub filter: usize,
}

impl PipelineOutput {
    /// Stage masks that were produced, in pipeline order, with the final mask last.
    pub fn stages(&self) -> Vec<(&'static str, &ScanVolume)> {
        let mut out = Vec::new();
        if let Some(m) = &self.forward {
            out.push(("forward", m));
        }
        if let Some(m) = &self.backward {
            out.push(("backward", m));
        }
        if let Some(m) = &self.combined {
            out.push(("combined", m));
        }
        out.push(("final", &self.final_mask));
        out
    }
}

/// Envelope → time down-sampling → normalization → sweeps → AND → area opening.
pub fn run_pipeline(model: &dyn SequencePredictor, envelope: &ScanVolume, cfg: &InferConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let reduced = downsample_time(envelope, cfg.time_downsample)?;
    let vol = NormalizedVolume::new(&reduced, model.norm_scale())?;
    run_normalized(model, &vol, cfg)
}

/// The pipeline on an already reduced and normalized volume.
pub fn run_normalized(model: &dyn SequencePredictor, vol: &NormalizedVolume, cfg: &InferConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let filter = filter_from_min_size(cfg.min_defect_mm, vol.volume().calib())?;
    let started = Instant::now();
    let (forward, backward, combined, pre) = match cfg.sweep {
        SweepMode::Forward => {
            let f = sweep(model, vol, cfg, SweepMode::Forward)?;
            (Some(f.clone()), None, None, f)
        }
        SweepMode::Backward => {
            let b = sweep(model, vol, cfg, SweepMode::Backward)?;
            (None, Some(b.clone()), None, b)
        }
        SweepMode::Both => {
            let (f, b) = rayon::join(
                || sweep(model, vol, cfg, SweepMode::Forward),
                || sweep(model, vol, cfg, SweepMode::Backward),
            );
            let (f, b) = (f?, b?);
            let c = combine(&f, &b)?;
            (Some(f), Some(b), Some(c.clone()), c)
        }
    };
    let final_mask = area_opening(&pre, filter, cfg.connectivity)?;
    log::info!("pipeline finished in {:?} (area filter {filter} px)", started.elapsed());
    Ok(PipelineOutput {
        forward,
        backward,
        combined,
        final_mask,
        filter,
    })
}
