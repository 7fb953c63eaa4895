//! Volumetric scan data: the `ScanVolume` model, the USV file format,
//! envelope extraction and the projections used for evaluation.
//!
//! A volume is indexed `(frame, time, beam)`. Frames run along the scan
//! axis, time along depth and beams across the array. Storage is
//! frame-major, then time, then beam.
//!
//! # USV layout
//!
//! All fields little-endian.
//!
//! | offset | type  | field                |
//! |--------|-------|----------------------|
//! | 0      | [u8;4]| magic `USVF`         |
//! | 4      | u32   | version (1)          |
//! | 8      | u32   | kind (0 rf, 1 envelope, 2 mask) |
//! | 12     | u32   | n_frames             |
//! | 16     | u32   | n_time               |
//! | 20     | u32   | n_beams              |
//! | 24     | f32   | scan_step_mm         |
//! | 28     | f32   | beam_pitch_mm        |
//! | 32     | f32   | sample_rate_hz       |
//! | 36     | f32   | velocity_mm_per_us   |
//! | 40     | u32   | front_wall_index     |
//! | 44     | f32…  | payload              |
//!
//! The fixed header is eleven 4-byte words; the payload holds
//! `n_frames * n_time * n_beams` `f32` values.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::registry::PaddingStrategy;

pub const USV_MAGIC: &[u8; 4] = b"USVF";
pub const USV_VERSION: u32 = 1;
pub const USV_HEADER_LEN: usize = 44;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeKind {
    Rf,
    Envelope,
    Mask,
}

impl VolumeKind {
    fn code(self) -> u32 {
        match self {
            VolumeKind::Rf => 0,
            VolumeKind::Envelope => 1,
            VolumeKind::Mask => 2,
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(VolumeKind::Rf),
            1 => Some(VolumeKind::Envelope),
            2 => Some(VolumeKind::Mask),
            _ => None,
        }
    }
}

/// Physical calibration of the three axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisCalib {
    pub scan_step_mm: f32,
    pub beam_pitch_mm: f32,
    pub sample_rate_hz: f32,
    pub velocity_mm_per_us: f32,
    pub front_wall_index: u32,
}

impl Default for AxisCalib {
    fn default() -> Self {
        Self {
            scan_step_mm: 0.8,
            beam_pitch_mm: 0.8,
            sample_rate_hz: 1e8,
            velocity_mm_per_us: 3.0,
            front_wall_index: 0,
        }
    }
}

impl AxisCalib {
    pub fn validate(&self, n_time: usize) -> Result<()> {
        let positive = [
            ("scan_step_mm", self.scan_step_mm),
            ("beam_pitch_mm", self.beam_pitch_mm),
            ("sample_rate_hz", self.sample_rate_hz),
            ("velocity_mm_per_us", self.velocity_mm_per_us),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Invariant(format!("calib {name} must be positive, got {v}")));
            }
        }
        if self.front_wall_index as usize >= n_time {
            return Err(Error::Invariant(format!(
                "front_wall_index {} outside time axis of length {n_time}",
                self.front_wall_index
            )));
        }
        Ok(())
    }

    /// Depth below the front wall for time sample `t`, in mm.
    pub fn depth_mm(&self, t: f64) -> f64 {
        let dt_us = 1e6 / self.sample_rate_hz as f64;
        (t - self.front_wall_index as f64) * dt_us * self.velocity_mm_per_us as f64 / 2.0
    }

    /// Inverse of [`AxisCalib::depth_mm`], as a fractional sample index.
    pub fn time_of_depth(&self, depth_mm: f64) -> f64 {
        let dt_us = 1e6 / self.sample_rate_hz as f64;
        self.front_wall_index as f64 + 2.0 * depth_mm / (self.velocity_mm_per_us as f64 * dt_us)
    }

    pub fn pixel_area_mm2(&self) -> f64 {
        self.scan_step_mm as f64 * self.beam_pitch_mm as f64
    }
}

/// A row-major 2D field, `rows` frames by `cols` beams for C-scans.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }
}

impl<T: Copy> Grid<T> {
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }
}

impl Grid<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanVolume {
    n_frames: usize,
    n_time: usize,
    n_beams: usize,
    kind: VolumeKind,
    calib: AxisCalib,
    data: Vec<f32>,
}

impl ScanVolume {
    pub fn new(
        dims: (usize, usize, usize),
        kind: VolumeKind,
        calib: AxisCalib,
        data: Vec<f32>,
    ) -> Result<Self> {
        let (n_frames, n_time, n_beams) = dims;
        if n_frames == 0 || n_time == 0 || n_beams == 0 {
            return Err(Error::Invariant(format!("dims must be >= 1, got {dims:?}")));
        }
        if data.len() != n_frames * n_time * n_beams {
            return Err(Error::Invariant(format!(
                "data length {} does not match dims {dims:?}",
                data.len()
            )));
        }
        calib.validate(n_time)?;
        check_kind_values(kind, &data)?;
        Ok(Self {
            n_frames,
            n_time,
            n_beams,
            kind,
            calib,
            data,
        })
    }

    pub fn zeros(dims: (usize, usize, usize), kind: VolumeKind, calib: AxisCalib) -> Result<Self> {
        Self::new(dims, kind, calib, vec![0.0; dims.0 * dims.1 * dims.2])
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }
    pub fn n_time(&self) -> usize {
        self.n_time
    }
    pub fn n_beams(&self) -> usize {
        self.n_beams
    }
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n_frames, self.n_time, self.n_beams)
    }
    pub fn kind(&self) -> VolumeKind {
        self.kind
    }
    pub fn calib(&self) -> &AxisCalib {
        &self.calib
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, f: usize, t: usize, b: usize) -> usize {
        (f * self.n_time + t) * self.n_beams + b
    }

    #[inline]
    pub fn get(&self, f: usize, t: usize, b: usize) -> f32 {
        self.data[self.index(f, t, b)]
    }

    /// Values of one B-scan (time × beams) in storage order.
    pub fn frame(&self, f: usize) -> &[f32] {
        let len = self.n_time * self.n_beams;
        &self.data[f * len..(f + 1) * len]
    }

    /// Mutable access for tests; callers must keep the kind invariant.
    #[cfg(test)]
    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    /// Same geometry, different kind and payload.
    pub fn with_data(&self, kind: VolumeKind, data: Vec<f32>) -> Result<Self> {
        Self::new(self.dims(), kind, self.calib, data)
    }

    /// Frames in reverse scan order.
    pub fn reversed_frames(&self) -> Self {
        let len = self.n_time * self.n_beams;
        let mut data = Vec::with_capacity(self.data.len());
        for f in (0..self.n_frames).rev() {
            data.extend_from_slice(&self.data[f * len..(f + 1) * len]);
        }
        Self { data, ..self.clone() }
    }

    /// The first `n` frames.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.n_frames {
            return Err(Error::arg("frames", format!("cannot truncate {} frames to {n}", self.n_frames)));
        }
        let len = self.n_time * self.n_beams;
        Ok(Self {
            n_frames: n,
            data: self.data[..n * len].to_vec(),
            ..self.clone()
        })
    }

    /// Divides every value by `scale`; used to map raw amplitudes into model units.
    pub fn scaled(&self, scale: f32) -> Self {
        let data = self.data.iter().map(|v| v / scale).collect();
        Self { data, ..self.clone() }
    }
}

fn check_kind_values(kind: VolumeKind, data: &[f32]) -> Result<()> {
    match kind {
        VolumeKind::Rf => {
            if let Some(i) = data.iter().position(|v| !v.is_finite()) {
                return Err(Error::Invariant(format!("non-finite value at {i}")));
            }
        }
        VolumeKind::Envelope => {
            if let Some(i) = data.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Invariant(format!(
                    "envelope value {} at {i} is negative or non-finite",
                    data[i]
                )));
            }
        }
        VolumeKind::Mask => {
            if let Some(i) = data.iter().position(|v| *v != 0.0 && *v != 1.0) {
                return Err(Error::Invariant(format!(
                    "mask value {} at {i} is not 0 or 1",
                    data[i]
                )));
            }
        }
    }
    Ok(())
}

pub fn encode_volume(vol: &ScanVolume) -> Vec<u8> {
    let mut out = Vec::with_capacity(USV_HEADER_LEN + 4 * vol.data.len());
    out.extend_from_slice(USV_MAGIC);
    for word in [
        USV_VERSION,
        vol.kind.code(),
        vol.n_frames as u32,
        vol.n_time as u32,
        vol.n_beams as u32,
    ] {
        out.extend_from_slice(&word.to_le_bytes());
    }
    let c = &vol.calib;
    for v in [c.scan_step_mm, c.beam_pitch_mm, c.sample_rate_hz, c.velocity_mm_per_us] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&c.front_wall_index.to_le_bytes());
    for v in &vol.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_volume(bytes: &[u8]) -> Result<ScanVolume> {
    if bytes.len() < USV_HEADER_LEN {
        return Err(Error::format("header", format!("{} bytes, need {USV_HEADER_LEN}", bytes.len())));
    }
    if &bytes[0..4] != USV_MAGIC {
        return Err(Error::format("magic", format!("expected USVF, found {:?}", &bytes[0..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let real = |i: usize| f32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let version = word(1);
    if version != USV_VERSION {
        return Err(Error::format("version", format!("unsupported version {version}")));
    }
    let kind = VolumeKind::from_code(word(2))
        .ok_or_else(|| Error::format("kind", format!("unknown kind code {}", word(2))))?;
    let dims = (word(3) as usize, word(4) as usize, word(5) as usize);
    if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
        return Err(Error::format("dims", format!("zero dimension in {dims:?}")));
    }
    let calib = AxisCalib {
        scan_step_mm: real(6),
        beam_pitch_mm: real(7),
        sample_rate_hz: real(8),
        velocity_mm_per_us: real(9),
        front_wall_index: word(10),
    };
    let count = dims
        .0
        .checked_mul(dims.1)
        .and_then(|n| n.checked_mul(dims.2))
        .ok_or_else(|| Error::format("dims", format!("{dims:?} overflows")))?;
    let payload = &bytes[USV_HEADER_LEN..];
    if payload.len() < 4 * count {
        return Err(Error::format(
            "payload",
            format!("truncated: {} values for dims {dims:?} ({count} expected)", payload.len() / 4),
        ));
    }
    if payload.len() > 4 * count {
        return Err(Error::format(
            "payload",
            format!("{} trailing bytes after {count} values", payload.len() - 4 * count),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ScanVolume::new(dims, kind, calib, data)
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<ScanVolume> {
    decode_volume(&fs::read(path)?)
}

pub fn write_volume(vol: &ScanVolume, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&encode_volume(vol))?;
    w.flush()?;
    Ok(())
}

/// Magnitude of the analytic signal of one trace, computed via FFT.
pub struct AnalyticEnvelope {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    gain: Vec<f64>,
}

impl AnalyticEnvelope {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        // Keep DC (and Nyquist for even lengths), double positive bins, zero negative bins.
        let mut gain = vec![0.0; len];
        if len > 0 {
            gain[0] = 1.0;
        }
        let half = len / 2;
        if len % 2 == 0 {
            if len > 1 {
                gain[half] = 1.0;
            }
            for g in gain.iter_mut().take(half).skip(1) {
                *g = 2.0;
            }
        } else {
            for g in gain.iter_mut().take(half + 1).skip(1) {
                *g = 2.0;
            }
        }
        Self {
            len,
            forward,
            inverse,
            gain,
        }
    }

    /// Analytic signal `x + i·H(x)`.
    pub fn analytic(&self, x: &[f64]) -> Vec<Complex<f64>> {
        assert_eq!(x.len(), self.len, "trace length mismatch");
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        let norm = 1.0 / self.len as f64;
        for (z, g) in buf.iter_mut().zip(&self.gain) {
            *z *= g * norm;
        }
        self.inverse.process(&mut buf);
        buf
    }

    pub fn envelope(&self, x: &[f64]) -> Vec<f64> {
        self.analytic(x).iter().map(|z| z.norm()).collect()
    }
}

/// Hilbert-transform envelope along the time axis of every (frame, beam) trace.
pub fn envelope(vol: &ScanVolume) -> Result<ScanVolume> {
    if vol.kind != VolumeKind::Rf {
        return Err(Error::arg("vol", format!("envelope needs an rf volume, got {:?}", vol.kind)));
    }
    let (_, nt, nb) = vol.dims();
    let env = AnalyticEnvelope::new(nt);
    let mut data = vec![0f32; vol.data.len()];
    data.par_chunks_mut(nt * nb)
        .zip(vol.data.par_chunks(nt * nb))
        .for_each(|(out, frame)| {
            let mut trace = vec![0f64; nt];
            for b in 0..nb {
                for t in 0..nt {
                    trace[t] = frame[t * nb + b] as f64;
                }
                let e = env.envelope(&trace);
                for t in 0..nt {
                    out[t * nb + b] = e[t] as f32;
                }
            }
        });
    vol.with_data(VolumeKind::Envelope, data)
}

/// Keeps time indices `0, factor, 2·factor, …`.
pub fn downsample_time(vol: &ScanVolume, factor: usize) -> Result<ScanVolume> {
    if factor == 0 {
        return Err(Error::arg("factor", "must be >= 1"));
    }
    if factor == 1 {
        return Ok(vol.clone());
    }
    let (nf, nt, nb) = vol.dims();
    let nt2 = nt.div_ceil(factor);
    let mut data = Vec::with_capacity(nf * nt2 * nb);
    for f in 0..nf {
        for t in (0..nt).step_by(factor) {
            let i = vol.index(f, t, 0);
            data.extend_from_slice(&vol.data[i..i + nb]);
        }
    }
    let mut calib = vol.calib;
    calib.sample_rate_hz /= factor as f32;
    calib.front_wall_index /= factor as u32;
    ScanVolume::new((nf, nt2, nb), vol.kind, calib, data)
}

fn check_gate(vol: &ScanVolume, gate: (usize, usize)) -> Result<()> {
    let (lo, hi) = gate;
    if lo >= hi || hi > vol.n_time {
        return Err(Error::arg(
            "gate",
            format!("[{lo}, {hi}) is empty or outside time axis of length {}", vol.n_time),
        ));
    }
    Ok(())
}

/// Maximum amplitude over the time gate `[lo, hi)`, per (frame, beam).
pub fn cscan_amplitude(vol: &ScanVolume, gate: (usize, usize)) -> Result<Grid<f32>> {
    check_gate(vol, gate)?;
    let (nf, _, nb) = vol.dims();
    let mut out = Grid::filled(nf, nb, f32::NEG_INFINITY);
    for f in 0..nf {
        for t in gate.0..gate.1 {
            for b in 0..nb {
                let v = vol.get(f, t, b);
                if v > out.get(f, b) {
                    out.set(f, b, v);
                }
            }
        }
    }
    Ok(out)
}

/// Logical OR of a mask volume over the time gate `[lo, hi)`.
pub fn cscan_mask(vol: &ScanVolume, gate: (usize, usize)) -> Result<Grid<bool>> {
    if vol.kind != VolumeKind::Mask {
        return Err(Error::arg("vol", "cscan_mask needs a mask volume"));
    }
    check_gate(vol, gate)?;
    let (nf, _, nb) = vol.dims();
    let mut out = Grid::filled(nf, nb, false);
    for f in 0..nf {
        for t in gate.0..gate.1 {
            for b in 0..nb {
                if vol.get(f, t, b) != 0.0 {
                    out.set(f, b, true);
                }
            }
        }
    }
    Ok(out)
}

/// The (time × beams) image of frame `f`.
pub fn bscan(vol: &ScanVolume, f: usize) -> Result<Grid<f32>> {
    if f >= vol.n_frames {
        return Err(Error::arg("frame", format!("{f} outside {} frames", vol.n_frames)));
    }
    Ok(Grid {
        rows: vol.n_time,
        cols: vol.n_beams,
        data: vol.frame(f).to_vec(),
    })
}

/// Prepends `width` frames along the scan axis using `mode`.
pub fn pad_scan_axis(vol: &ScanVolume, width: usize, mode: &dyn PaddingStrategy) -> Result<ScanVolume> {
    if width == 0 {
        return Ok(vol.clone());
    }
    let len = vol.n_time * vol.n_beams;
    let mut data = Vec::with_capacity((vol.n_frames + width) * len);
    for p in 0..width {
        match mode.source_frame(p, width, vol.n_frames)? {
            Some(src) => data.extend_from_slice(&vol.data[src * len..(src + 1) * len]),
            None => data.extend(std::iter::repeat_n(0.0, len)),
        }
    }
    data.extend_from_slice(&vol.data);
    Ok(ScanVolume {
        n_frames: vol.n_frames + width,
        data,
        ..vol.clone()
    })
}
