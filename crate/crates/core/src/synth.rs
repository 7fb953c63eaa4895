//! Seeded synthetic phased-array scans with known defects.
//!
//! Each (frame, beam) RF trace is the sum of a front-wall echo, a back-wall
//! echo at the local plate thickness, defect echoes over their footprints
//! and spatially correlated speckle, scaled by a fixed per-beam gain.
//! Echoes are Gaussian-windowed tone bursts.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{AxisCalib, Grid, ScanVolume, VolumeKind};

const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;
const TRUTH_HEADER: &str = "id,shape,width_mm,center_frame,center_beam,depth_mm,reflectivity,shadowing";
const COUPLING_SEED: u64 = 0x636f_7570_6c65;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefectShape {
    Circle,
    Square,
}

impl DefectShape {
    pub fn as_str(self) -> &'static str {
        match self {
            DefectShape::Circle => "circle",
            DefectShape::Square => "square",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectRecord {
    pub id: usize,
    pub shape: DefectShape,
    pub width_mm: f64,
    pub center_frame: usize,
    pub center_beam: usize,
    pub depth_mm: f64,
    pub reflectivity: f64,
    pub shadowing: f64,
}

impl DefectRecord {
    /// Whether the centre of pixel `(frame, beam)` lies inside the defect outline.
    pub fn contains(&self, frame: usize, beam: usize, calib: &AxisCalib) -> bool {
        let df = (frame as f64 - self.center_frame as f64) * calib.scan_step_mm as f64;
        let db = (beam as f64 - self.center_beam as f64) * calib.beam_pitch_mm as f64;
        let r = self.width_mm / 2.0 + 1e-9;
        match self.shape {
            DefectShape::Circle => df * df + db * db <= r * r,
            DefectShape::Square => df.abs() <= r && db.abs() <= r,
        }
    }

    /// Footprint pixels inside a `n_frames × n_beams` field.
    pub fn footprint(&self, n_frames: usize, n_beams: usize, calib: &AxisCalib) -> Vec<(usize, usize)> {
        let rf = (self.width_mm / 2.0 / calib.scan_step_mm as f64).ceil() as usize + 1;
        let rb = (self.width_mm / 2.0 / calib.beam_pitch_mm as f64).ceil() as usize + 1;
        let mut out = Vec::new();
        for f in self.center_frame.saturating_sub(rf)..(self.center_frame + rf + 1).min(n_frames) {
            for b in self.center_beam.saturating_sub(rb)..(self.center_beam + rb + 1).min(n_beams) {
                if self.contains(f, b, calib) {
                    out.push((f, b));
                }
            }
        }
        out
    }
}

/// One defect in a config; ids are assigned in list order starting at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefectSpec {
    pub shape: DefectShape,
    pub width_mm: f64,
    pub center_frame: usize,
    pub center_beam: usize,
    pub depth_mm: f64,
    #[serde(default = "one")]
    pub reflectivity: f64,
    #[serde(default)]
    pub shadowing: f64,
}

fn one() -> f64 {
    1.0
}

/// Plate thickness over the frame range `[start_frame, end_frame)`, optionally
/// limited to the beams `[start_beam, end_beam)`.
///
/// A step bounded by beams and spanning all frames runs parallel to the scan
/// direction, so every beam sees one thickness for the whole sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub start_frame: usize,
    pub end_frame: usize,
    #[serde(default)]
    pub start_beam: usize,
    #[serde(default)]
    pub end_beam: Option<usize>,
    pub thickness_mm: f64,
}

impl Step {
    /// Step covering `[start, end)` frames on every beam.
    pub fn frames(start: usize, end: usize, thickness_mm: f64) -> Self {
        Step { start_frame: start, end_frame: end, start_beam: 0, end_beam: None, thickness_mm }
    }

    pub fn contains(&self, frame: usize, beam: usize) -> bool {
        (self.start_frame..self.end_frame).contains(&frame)
            && beam >= self.start_beam
            && self.end_beam.is_none_or(|e| beam < e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub frames: usize,
    pub samples: usize,
    pub beams: usize,
    pub scan_step_mm: f64,
    pub beam_pitch_mm: f64,
    pub sample_rate_hz: f64,
    pub velocity_mm_per_us: f64,
    pub front_wall_index: usize,
    /// Thickness wherever no step applies.
    pub thickness_mm: f64,
    pub steps: Vec<Step>,
    pub center_frequency_hz: f64,
    /// Envelope full width at half maximum, in cycles of the centre frequency.
    pub pulse_cycles: f64,
    pub front_wall_amplitude: f64,
    pub back_wall_amplitude: f64,
    pub defect_amplitude: f64,
    /// Two-way attenuation, dB per mm of depth.
    pub attenuation_db_per_mm: f64,
    pub speckle_amplitude: f64,
    /// Gaussian correlation lengths (standard deviations) in frames, beams and samples.
    pub speckle_corr_frames: f64,
    pub speckle_corr_beams: f64,
    pub speckle_corr_time: f64,
    /// Standard deviation of the log of the per-beam gain.
    pub beam_gain_std: f64,
    /// Mean of the exponential loss `e` in the per-trace coupling factor
    /// `exp(-e)`. Coupling only ever loses energy, so the factor is at most 1.
    pub coupling_loss_mean: f64,
    /// Lateral blur of defect echoes (Gaussian sigma, mm).
    pub beam_spread_mm: f64,
    pub repeat_echoes: bool,
    pub defects: Vec<DefectSpec>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frames: 112,
            samples: 560,
            beams: 48,
            scan_step_mm: 0.8,
            beam_pitch_mm: 0.8,
            sample_rate_hz: 1e8,
            velocity_mm_per_us: 3.0,
            front_wall_index: 60,
            thickness_mm: 5.0,
            steps: Vec::new(),
            center_frequency_hz: 5e6,
            pulse_cycles: 2.0,
            front_wall_amplitude: 1.0,
            back_wall_amplitude: 0.6,
            defect_amplitude: 0.8,
            attenuation_db_per_mm: 0.5,
            speckle_amplitude: 0.02,
            speckle_corr_frames: 0.0,
            speckle_corr_beams: 1.0,
            speckle_corr_time: 3.0,
            beam_gain_std: 0.05,
            coupling_loss_mean: 0.15,
            beam_spread_mm: 1.2,
            repeat_echoes: true,
            defects: Vec::new(),
            seed: 0,
        }
    }
}

/// Ground truth for one synthetic volume.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthSet {
    pub records: Vec<DefectRecord>,
    /// Voxel mask: each footprint over its echo's half-amplitude time span.
    pub mask: ScanVolume,
}

impl SynthConfig {
    pub fn calib(&self) -> AxisCalib {
        AxisCalib {
            scan_step_mm: self.scan_step_mm as f32,
            beam_pitch_mm: self.beam_pitch_mm as f32,
            sample_rate_hz: self.sample_rate_hz as f32,
            velocity_mm_per_us: self.velocity_mm_per_us as f32,
            front_wall_index: self.front_wall_index as u32,
        }
    }

    pub fn thickness_at(&self, frame: usize, beam: usize) -> f64 {
        self.steps
            .iter()
            .rev()
            .find(|s| s.contains(frame, beam))
            .map_or(self.thickness_mm, |s| s.thickness_mm)
    }

    pub fn records(&self) -> Vec<DefectRecord> {
        self.defects
            .iter()
            .enumerate()
            .map(|(i, d)| DefectRecord {
                id: i + 1,
                shape: d.shape,
                width_mm: d.width_mm,
                center_frame: d.center_frame,
                center_beam: d.center_beam,
                depth_mm: d.depth_mm,
                reflectivity: d.reflectivity,
                shadowing: d.shadowing,
            })
            .collect()
    }

    /// Half-amplitude half width of the echo envelope, in samples.
    pub fn pulse_half_width(&self) -> f64 {
        self.pulse_cycles / self.center_frequency_hz * self.sample_rate_hz / 2.0
    }

    /// Checks the config, naming offending keys by their path under `synth`.
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("frames", self.frames), ("samples", self.samples), ("beams", self.beams)] {
            if v == 0 {
                return Err(Error::config(format!("synth.{key}"), "must be >= 1"));
            }
        }
        let positive = [
            ("scan_step_mm", self.scan_step_mm),
            ("beam_pitch_mm", self.beam_pitch_mm),
            ("sample_rate_hz", self.sample_rate_hz),
            ("velocity_mm_per_us", self.velocity_mm_per_us),
            ("thickness_mm", self.thickness_mm),
            ("center_frequency_hz", self.center_frequency_hz),
            ("pulse_cycles", self.pulse_cycles),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("synth.{key}"), format!("must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("front_wall_amplitude", self.front_wall_amplitude),
            ("back_wall_amplitude", self.back_wall_amplitude),
            ("defect_amplitude", self.defect_amplitude),
            ("attenuation_db_per_mm", self.attenuation_db_per_mm),
            ("speckle_amplitude", self.speckle_amplitude),
            ("speckle_corr_frames", self.speckle_corr_frames),
            ("speckle_corr_beams", self.speckle_corr_beams),
            ("speckle_corr_time", self.speckle_corr_time),
            ("beam_gain_std", self.beam_gain_std),
            ("coupling_loss_mean", self.coupling_loss_mean),
            ("beam_spread_mm", self.beam_spread_mm),
        ];
        for (key, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("synth.{key}"), format!("must be >= 0, got {v}")));
            }
        }
        if self.front_wall_index >= self.samples {
            return Err(Error::config("synth.front_wall_index", "must lie inside the time axis"));
        }
        for (i, s) in self.steps.iter().enumerate() {
            if !(s.thickness_mm.is_finite() && s.thickness_mm > 0.0) {
                return Err(Error::config(
                    format!("synth.steps[{i}].thickness_mm"),
                    format!("must be positive, got {}", s.thickness_mm),
                ));
            }
            if s.start_frame >= s.end_frame {
                return Err(Error::config(format!("synth.steps[{i}].end_frame"), "must exceed start_frame"));
            }
            if s.end_beam.is_some_and(|e| e <= s.start_beam) {
                return Err(Error::config(format!("synth.steps[{i}].end_beam"), "must exceed start_beam"));
            }
        }
        for (i, d) in self.defects.iter().enumerate() {
            let key = |k: &str| format!("synth.defects[{i}].{k}");
            if !(d.width_mm.is_finite() && d.width_mm > 0.0) {
                return Err(Error::config(key("width_mm"), "must be positive"));
            }
            if !(d.reflectivity > 0.0 && d.reflectivity <= 1.0) {
                return Err(Error::config(key("reflectivity"), "must lie in (0, 1]"));
            }
            if !(0.0..=1.0).contains(&d.shadowing) {
                return Err(Error::config(key("shadowing"), "must lie in [0, 1]"));
            }
            if d.center_frame >= self.frames {
                return Err(Error::config(key("center_frame"), "outside the scan"));
            }
            if d.center_beam >= self.beams {
                return Err(Error::config(key("center_beam"), "outside the array"));
            }
            let local = self.thickness_at(d.center_frame, d.center_beam);
            if !(d.depth_mm > 0.0 && d.depth_mm < local) {
                return Err(Error::config(
                    key("depth_mm"),
                    format!("{} mm is not within the local thickness of {local} mm", d.depth_mm),
                ));
            }
        }
        Ok(())
    }
}

fn tone_burst(dt_s: f64, f0: f64, sigma_s: f64) -> f64 {
    (-0.5 * (dt_s / sigma_s).powi(2)).exp() * (2.0 * std::f64::consts::PI * f0 * dt_s).cos()
}

/// Unit-energy Gaussian kernel (Σ k² = 1), so filtered unit white noise keeps unit variance.
fn unit_energy_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let half = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-half..=half)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
    k.iter_mut().for_each(|v| *v /= norm);
    k
}

fn unit_sum_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let half = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-half..=half)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Valid-mode convolution along one axis of a row-major 3D array.
fn convolve_axis(data: &[f64], dims: [usize; 3], axis: usize, k: &[f64]) -> (Vec<f64>, [usize; 3]) {
    let m = k.len() - 1;
    let mut out_dims = dims;
    out_dims[axis] -= m;
    let stride = match axis {
        0 => dims[1] * dims[2],
        1 => dims[2],
        _ => 1,
    };
    let mut out = vec![0.0; out_dims.iter().product()];
    let mut idx = 0;
    for i in 0..out_dims[0] {
        for j in 0..out_dims[1] {
            let base = (i * dims[1] + j) * dims[2];
            for l in 0..out_dims[2] {
                let src = base + l;
                let mut acc = 0.0;
                for (q, kv) in k.iter().enumerate() {
                    acc += kv * data[src + q * stride];
                }
                out[idx] = acc;
                idx += 1;
            }
        }
    }
    (out, out_dims)
}

fn speckle(cfg: &SynthConfig) -> Vec<f64> {
    let kf = unit_energy_kernel(cfg.speckle_corr_frames);
    let kb = unit_energy_kernel(cfg.speckle_corr_beams);
    let kt = unit_energy_kernel(cfg.speckle_corr_time);
    let dims = [
        cfg.frames + kf.len() - 1,
        cfg.samples + kt.len() - 1,
        cfg.beams + kb.len() - 1,
    ];
    // One ChaCha stream per extended (frame, beam) trace keeps generation order-free.
    let mut white = vec![0.0; dims.iter().product()];
    white
        .par_chunks_mut(dims[1] * dims[2])
        .enumerate()
        .for_each(|(f, plane)| {
            for b in 0..dims[2] {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream((f * dims[2] + b) as u64 + 1);
                for t in 0..dims[1] {
                    plane[t * dims[2] + b] = rng.sample(StandardNormal);
                }
            }
        });
    let (a, d) = convolve_axis(&white, dims, 1, &kt);
    let (a, d) = convolve_axis(&a, d, 0, &kf);
    let (a, _) = convolve_axis(&a, d, 2, &kb);
    a.into_iter().map(|v| v * cfg.speckle_amplitude).collect()
}

fn beam_gains(cfg: &SynthConfig) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    (0..cfg.beams)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            (cfg.beam_gain_std * z).exp()
        })
        .collect()
}

/// Per-trace coupling factors, indexed `f * beams + b`.
fn coupling(cfg: &SynthConfig) -> Vec<f64> {
    let n = cfg.frames * cfg.beams;
    if cfg.coupling_loss_mean == 0.0 {
        return vec![1.0; n];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ COUPLING_SEED);
    (0..n)
        .map(|_| {
            let u: f64 = rng.sample(Exp1);
            (-cfg.coupling_loss_mean * u).exp()
        })
        .collect()
}

/// Footprint blurred by the lateral beam profile, sampled on the scan grid.
fn echo_weight(d: &DefectRecord, cfg: &SynthConfig, calib: &AxisCalib) -> Grid<f64> {
    let sf = cfg.beam_spread_mm / cfg.scan_step_mm;
    let sb = cfg.beam_spread_mm / cfg.beam_pitch_mm;
    let kf = unit_sum_kernel(sf);
    let kb = unit_sum_kernel(sb);
    let (hf, hb) = ((kf.len() / 2) as isize, (kb.len() / 2) as isize);
    let mut indicator = Grid::filled(cfg.frames, cfg.beams, 0.0);
    for (f, b) in d.footprint(cfg.frames, cfg.beams, calib) {
        indicator.set(f, b, 1.0);
    }
    let blur = |src: &Grid<f64>, k: &[f64], h: isize, along_frames: bool| {
        let mut out = Grid::filled(src.rows, src.cols, 0.0);
        for r in 0..src.rows {
            for c in 0..src.cols {
                let mut acc = 0.0;
                for (q, kv) in k.iter().enumerate() {
                    let off = q as isize - h;
                    let (rr, cc) = if along_frames {
                        (r as isize + off, c as isize)
                    } else {
                        (r as isize, c as isize + off)
                    };
                    if rr >= 0 && cc >= 0 && (rr as usize) < src.rows && (cc as usize) < src.cols {
                        acc += kv * src.get(rr as usize, cc as usize);
                    }
                }
                out.set(r, c, acc);
            }
        }
        out
    };
    let tmp = blur(&indicator, &kf, hf, true);
    blur(&tmp, &kb, hb, false)
}

/// Generates an RF volume and its ground truth. Deterministic in `cfg`.
pub fn generate(cfg: &SynthConfig) -> Result<(ScanVolume, TruthSet)> {
    cfg.validate()?;
    let calib = cfg.calib();
    let (nf, nt, nb) = (cfg.frames, cfg.samples, cfg.beams);
    let dt = 1.0 / cfg.sample_rate_hz;
    let sigma_s = cfg.pulse_cycles / cfg.center_frequency_hz / FWHM_PER_SIGMA;
    let f0 = cfg.center_frequency_hz;
    let atten = |depth: f64| 10f64.powf(-cfg.attenuation_db_per_mm * depth / 20.0);
    let time_of = |depth: f64| calib.time_of_depth(depth);
    let reach = (6.0 * sigma_s / dt).ceil() as isize;

    let records = cfg.records();
    let weights: Vec<Grid<f64>> = records.iter().map(|d| echo_weight(d, cfg, &calib)).collect();
    let gains = beam_gains(cfg);
    let noise = speckle(cfg);
    let couple = coupling(cfg);

    let mut data = vec![0f32; nf * nt * nb];
    data.par_chunks_mut(nt * nb).enumerate().for_each(|(f, frame)| {
        let mut trace = vec![0.0; nt];
        for b in 0..nb {
            let thickness = cfg.thickness_at(f, b);
            trace.fill(0.0);
            let mut add_echo = |t0: f64, amp: f64| {
                if amp == 0.0 {
                    return;
                }
                let c = t0.round() as isize;
                for t in (c - reach).max(0)..(c + reach + 1).min(nt as isize) {
                    trace[t as usize] += amp * tone_burst((t as f64 - t0) * dt, f0, sigma_s);
                }
            };
            add_echo(calib.front_wall_index as f64, cfg.front_wall_amplitude);
            let mut back = cfg.back_wall_amplitude * atten(thickness);
            for (d, w) in records.iter().zip(&weights) {
                let wv = w.get(f, b);
                if wv < 1e-6 {
                    continue;
                }
                back *= 1.0 - d.shadowing * wv;
                let amp = cfg.defect_amplitude * d.reflectivity * atten(d.depth_mm) * wv;
                let t_d = time_of(d.depth_mm);
                add_echo(t_d, amp);
                if cfg.repeat_echoes {
                    add_echo(time_of(2.0 * d.depth_mm), 0.5 * amp * atten(d.depth_mm));
                }
            }
            add_echo(time_of(thickness), back);
            let g = gains[b] * couple[f * nb + b];
            for t in 0..nt {
                let v = trace[t] + noise[(f * nt + t) * nb + b];
                frame[t * nb + b] = (g * v) as f32;
            }
        }
    });
    let rf = ScanVolume::new((nf, nt, nb), VolumeKind::Rf, calib, data)?;

    let hw = cfg.pulse_half_width();
    let mut mask = vec![0f32; nf * nt * nb];
    for d in &records {
        let t_d = time_of(d.depth_mm);
        let lo = (t_d - hw).ceil().max(0.0) as usize;
        let hi = ((t_d + hw).floor() as usize).min(nt - 1);
        for (f, b) in d.footprint(nf, nb, &calib) {
            for t in lo..=hi {
                mask[(f * nt + t) * nb + b] = 1.0;
            }
        }
    }
    let mask = ScanVolume::new((nf, nt, nb), VolumeKind::Mask, calib, mask)?;
    Ok((rf, TruthSet { records, mask }))
}

/// Renders every defect's true outline into a frames × beams field.
pub fn truth_cscan(records: &[DefectRecord], n_frames: usize, n_beams: usize, calib: &AxisCalib) -> Grid<bool> {
    let mut g = Grid::filled(n_frames, n_beams, false);
    for d in records {
        for (f, b) in d.footprint(n_frames, n_beams, calib) {
            g.set(f, b, true);
        }
    }
    g
}

pub fn truth_to_csv(records: &[DefectRecord]) -> String {
    let mut s = String::from(TRUTH_HEADER);
    s.push('\n');
    for d in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            d.id,
            d.shape.as_str(),
            d.width_mm,
            d.center_frame,
            d.center_beam,
            d.depth_mm,
            d.reflectivity,
            d.shadowing
        );
    }
    s
}

pub fn truth_from_csv(text: &str) -> Result<Vec<DefectRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == TRUTH_HEADER => {}
        other => {
            return Err(Error::format("truth header", format!("expected `{TRUTH_HEADER}`, got {other:?}")));
        }
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 8 {
            return Err(Error::format("truth row", format!("line {}: {} columns", n + 2, cols.len())));
        }
        let bad = |what: &str| Error::format("truth row", format!("line {}: bad {what}", n + 2));
        let shape = match cols[1] {
            "circle" => DefectShape::Circle,
            "square" => DefectShape::Square,
            _ => return Err(bad("shape")),
        };
        out.push(DefectRecord {
            id: cols[0].parse().map_err(|_| bad("id"))?,
            shape,
            width_mm: cols[2].parse().map_err(|_| bad("width_mm"))?,
            center_frame: cols[3].parse().map_err(|_| bad("center_frame"))?,
            center_beam: cols[4].parse().map_err(|_| bad("center_beam"))?,
            depth_mm: cols[5].parse().map_err(|_| bad("depth_mm"))?,
            reflectivity: cols[6].parse().map_err(|_| bad("reflectivity"))?,
            shadowing: cols[7].parse().map_err(|_| bad("shadowing"))?,
        });
    }
    Ok(out)
}

pub fn write_truth_csv(records: &[DefectRecord], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, truth_to_csv(records))?;
    Ok(())
}

pub fn read_truth_csv(path: impl AsRef<Path>) -> Result<Vec<DefectRecord>> {
    truth_from_csv(&fs::read_to_string(path)?)
}

/// A defect-free flat plate.
pub fn clean_plate(thickness_mm: f64, seed: u64) -> SynthConfig {
    SynthConfig {
        thickness_mm,
        seed,
        ..SynthConfig::default()
    }
}

/// A stepped plate with twelve defects on a 4 × 3 grid: circles and
/// squares of 3–9 mm at a spread of depths. The plate is 4.0 mm on beams
/// 0..16 and 5.5 mm on the rest, with the step running along the scan.
/// Every defect edge is more than 32 frames from either end of the scan,
/// so a 64-frame reflect-padded buffer never mirrors a defect into its own
/// prediction history.
pub fn stepped_defect_sample(seed: u64) -> SynthConfig {
    let rows = [44usize, 74, 102, 132];
    let cols = [8usize, 24, 40];
    let widths = [[3.0, 6.0, 9.0], [4.0, 7.0, 5.0], [9.0, 3.0, 6.0], [5.0, 8.0, 4.0]];
    let depths = [[1.2, 2.0, 2.8], [2.4, 1.6, 3.0], [1.5, 2.6, 3.0], [3.0, 2.2, 4.5]];
    let mut defects = Vec::new();
    for (r, &frame) in rows.iter().enumerate() {
        for (c, &beam) in cols.iter().enumerate() {
            let shape = if (r + c) % 3 == 2 {
                DefectShape::Square
            } else {
                DefectShape::Circle
            };
            defects.push(DefectSpec {
                shape,
                width_mm: widths[r][c],
                center_frame: frame,
                center_beam: beam,
                depth_mm: depths[r][c],
                reflectivity: 1.0,
                shadowing: 0.0,
            });
        }
    }
    SynthConfig {
        frames: 176,
        thickness_mm: 4.0,
        steps: vec![Step {
            start_frame: 0,
            end_frame: 176,
            start_beam: 16,
            end_beam: None,
            thickness_mm: 5.5,
        }],
        defects,
        seed,
        ..SynthConfig::default()
    }
}
