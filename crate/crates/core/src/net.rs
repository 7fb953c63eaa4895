//! Probabilistic multi-head 1D convolutional network.
//!
//! Each head runs `blocks` convolutional blocks over the input window. A
//! block is a stride-1 "same" convolution with the head's kernel size
//! followed by a kernel-2 stride-2 down-sampling convolution, each followed
//! by LeakyReLU. Head outputs are concatenated (head order, then channel,
//! then position) and fed through the fully connected stack. The last layer
//! emits two raw values mapped to Weibull `(scale, shape)` by
//! `softplus(·) + 1e-4`.
//!
//! With `mean_scaling` on, each window is divided by its mean `m` before
//! entering the heads and the predicted scale is multiplied by `m`, which
//! makes the prediction equivariant to the amplitude scale of the window.
//!
//! Parameters live in one flat vector. Layers are laid out in order: every
//! conv layer of head 0 (block 0 conv, block 0 down-sampler, block 1 conv,
//! …), then head 1, …, then each dense layer, ending with the output layer.
//! Each layer stores weights then biases. Conv weights are indexed
//! `[c_out][c_in][k]`, dense weights `[n_out][n_in]`.
//!
//! # Model file
//!
//! Little-endian: magic `USSM`, u32 version (1), u32 window, u32 head count
//! followed by the kernel sizes, u32 block count followed by the channel
//! counts, u32 dense count followed by the widths, f32 leaky slope, u32
//! mean-scaling flag (0 or 1), f64 normalization scale, u64 parameter
//! count, then the parameters as f32.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weibull::WeibullParams;

pub const PARAM_FLOOR: f64 = 1e-4;
pub const MODEL_MAGIC: &[u8; 4] = b"USSM";
pub const MODEL_VERSION: u32 = 1;

/// Rows per work unit in batched passes. Fixed so that results do not
/// depend on the number of worker threads.
const CHUNK_ROWS: usize = 128;
/// Gradient chunks reduced per wave, bounding peak memory.
const WAVE_CHUNKS: usize = 16;
/// Lower bound on the window mean used for scaling.
pub const MEAN_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub window: usize,
    pub heads: Vec<usize>,
    pub channels: Vec<usize>,
    pub fc: Vec<usize>,
    pub leaky_slope: f64,
    pub mean_scaling: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            window: 64,
            heads: vec![3, 5, 9, 15],
            channels: vec![8, 16],
            fc: vec![128, 64],
            leaky_slope: 0.01,
            mean_scaling: true,
        }
    }
}

impl NetConfig {
    pub fn blocks(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::config("net.window", "must be >= 2"));
        }
        if self.heads.is_empty() || self.heads.contains(&0) {
            return Err(Error::config("net.heads", "need at least one head, kernel sizes >= 1"));
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::config("net.channels", "need at least one block, channel counts >= 1"));
        }
        if self.fc.contains(&0) {
            return Err(Error::config("net.fc", "dense widths must be >= 1"));
        }
        let div = 1usize << self.blocks();
        if self.window % div != 0 {
            return Err(Error::config(
                "net.window",
                format!("{} is not divisible by 2^blocks = {div}", self.window),
            ));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::config("net.leaky_slope", "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Closed-form parameter count: Σ (fan_in·out + out) over all layers.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        for &k in &self.heads {
            let mut c_in = 1;
            for &c in &self.channels {
                n += k * c_in * c + c;
                n += 2 * c * c + c;
                c_in = c;
            }
        }
        let mut n_in = self.feature_len();
        for &w in self.fc.iter().chain(std::iter::once(&2)) {
            n += n_in * w + w;
            n_in = w;
        }
        n
    }

    fn feature_len(&self) -> usize {
        let last = *self.channels.last().unwrap_or(&0);
        self.heads.len() * last * (self.window >> self.blocks())
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad_left: usize,
    len_in: usize,
    len_out: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    n_in: usize,
    n_out: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    heads: Vec<Vec<Conv>>,
    dense: Vec<Dense>,
    feature_len: usize,
    total: usize,
}

impl Layout {
    fn new(cfg: &NetConfig) -> Self {
        let mut off = 0;
        let mut heads = Vec::new();
        for &k in &cfg.heads {
            let mut layers = Vec::new();
            let mut c_in = 1;
            let mut len = cfg.window;
            for &c in &cfg.channels {
                let conv = Conv {
                    c_in,
                    c_out: c,
                    k,
                    stride: 1,
                    pad_left: (k - 1) / 2,
                    len_in: len,
                    len_out: len,
                    w: off,
                    b: off + k * c_in * c,
                };
                off = conv.b + c;
                let down = Conv {
                    c_in: c,
                    c_out: c,
                    k: 2,
                    stride: 2,
                    pad_left: 0,
                    len_in: len,
                    len_out: len / 2,
                    w: off,
                    b: off + 2 * c * c,
                };
                off = down.b + c;
                layers.push(conv);
                layers.push(down);
                c_in = c;
                len /= 2;
            }
            heads.push(layers);
        }
        let feature_len = cfg.feature_len();
        let mut dense = Vec::new();
        let mut n_in = feature_len;
        for &w in cfg.fc.iter().chain(std::iter::once(&2)) {
            let d = Dense {
                n_in,
                n_out: w,
                w: off,
                b: off + n_in * w,
            };
            off = d.b + w;
            dense.push(d);
            n_in = w;
        }
        Self {
            heads,
            dense,
            feature_len,
            total: off,
        }
    }
}

fn conv_forward(l: &Conv, p: &[f64], input: &[f64], out: &mut [f64]) {
    for co in 0..l.c_out {
        let o = &mut out[co * l.len_out..(co + 1) * l.len_out];
        o.fill(p[l.b + co]);
        for ci in 0..l.c_in {
            let x = &input[ci * l.len_in..(ci + 1) * l.len_in];
            let w = &p[l.w + (co * l.c_in + ci) * l.k..][..l.k];
            if l.stride == 1 {
                for (j, &wj) in w.iter().enumerate() {
                    // out[i] += wj * x[i + j - pad]
                    let lo = l.pad_left.saturating_sub(j);
                    let hi = (l.len_in + l.pad_left).saturating_sub(j).min(l.len_out);
                    if lo >= hi {
                        continue;
                    }
                    let shift = lo + j - l.pad_left;
                    for (oi, xi) in o[lo..hi].iter_mut().zip(&x[shift..shift + (hi - lo)]) {
                        *oi += wj * xi;
                    }
                }
            } else {
                for (i, oi) in o.iter_mut().enumerate() {
                    let base = i * l.stride;
                    let mut acc = 0.0;
                    for (j, &wj) in w.iter().enumerate() {
                        acc += wj * x[base + j];
                    }
                    *oi += acc;
                }
            }
        }
    }
}

/// Accumulates parameter gradients into `g` and writes the input gradient to `d_in`.
fn conv_backward(l: &Conv, p: &[f64], input: &[f64], d_out: &[f64], g: &mut [f64], d_in: &mut [f64]) {
    d_in.fill(0.0);
    for co in 0..l.c_out {
        let d = &d_out[co * l.len_out..(co + 1) * l.len_out];
        g[l.b + co] += d.iter().sum::<f64>();
        for ci in 0..l.c_in {
            let x = &input[ci * l.len_in..(ci + 1) * l.len_in];
            let dx = &mut d_in[ci * l.len_in..(ci + 1) * l.len_in];
            let widx = l.w + (co * l.c_in + ci) * l.k;
            if l.stride == 1 {
                for j in 0..l.k {
                    let lo = l.pad_left.saturating_sub(j);
                    let hi = (l.len_in + l.pad_left).saturating_sub(j).min(l.len_out);
                    if lo >= hi {
                        continue;
                    }
                    let shift = lo + j - l.pad_left;
                    let wj = p[widx + j];
                    let mut acc = 0.0;
                    for ((di, xi), dxi) in d[lo..hi]
                        .iter()
                        .zip(&x[shift..shift + (hi - lo)])
                        .zip(&mut dx[shift..shift + (hi - lo)])
                    {
                        acc += di * xi;
                        *dxi += wj * di;
                    }
                    g[widx + j] += acc;
                }
            } else {
                for (i, &di) in d.iter().enumerate() {
                    let base = i * l.stride;
                    for j in 0..l.k {
                        g[widx + j] += di * x[base + j];
                        dx[base + j] += p[widx + j] * di;
                    }
                }
            }
        }
    }
}

fn dense_forward(l: &Dense, p: &[f64], input: &[f64], out: &mut [f64]) {
    for (o, oi) in out.iter_mut().enumerate() {
        let w = &p[l.w + o * l.n_in..][..l.n_in];
        *oi = p[l.b + o] + w.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn dense_backward(l: &Dense, p: &[f64], input: &[f64], d_out: &[f64], g: &mut [f64], d_in: &mut [f64]) {
    d_in.fill(0.0);
    for (o, &d) in d_out.iter().enumerate() {
        g[l.b + o] += d;
        let w = &p[l.w + o * l.n_in..][..l.n_in];
        let gw = &mut g[l.w + o * l.n_in..][..l.n_in];
        for ((gwi, xi), (wi, dxi)) in gw.iter_mut().zip(input).zip(w.iter().zip(d_in.iter_mut())) {
            *gwi += d * xi;
            *dxi += wi * d;
        }
    }
}

#[inline]
fn leaky(z: f64, slope: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        slope * z
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn inv_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Per-sample activation buffers, reused across rows.
struct Workspace {
    // head_acts[h][0] is the input, [i+1] the output of layer i (post-activation)
    head_acts: Vec<Vec<Vec<f64>>>,
    head_pre: Vec<Vec<Vec<f64>>>,
    dense_acts: Vec<Vec<f64>>,
    dense_pre: Vec<Vec<f64>>,
    head_grad: Vec<Vec<Vec<f64>>>,
    dense_grad: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(layout: &Layout, window: usize) -> Self {
        let mut head_acts = Vec::new();
        let mut head_pre = Vec::new();
        for layers in &layout.heads {
            let mut acts = vec![vec![0.0; window]];
            let mut pre = Vec::new();
            for l in layers {
                acts.push(vec![0.0; l.c_out * l.len_out]);
                pre.push(vec![0.0; l.c_out * l.len_out]);
            }
            head_acts.push(acts);
            head_pre.push(pre);
        }
        let mut dense_acts = vec![vec![0.0; layout.feature_len]];
        let mut dense_pre = Vec::new();
        for d in &layout.dense {
            dense_acts.push(vec![0.0; d.n_out]);
            dense_pre.push(vec![0.0; d.n_out]);
        }
        let head_grad = head_acts.clone();
        let dense_grad = dense_acts.clone();
        Self {
            head_acts,
            head_pre,
            dense_acts,
            dense_pre,
            head_grad,
            dense_grad,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbNet {
    config: NetConfig,
    params: Vec<f64>,
    /// Raw amplitude that maps to 1.0 in model units.
    norm_scale: f64,
}

impl ProbNet {
    /// Uniform `±1/√fan_in` initialization; the output bias is then set so that
    /// an all-ones window predicts `(scale, shape) = (1.0, 1.5)`.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.total];
        let mut init = |w: usize, n: usize, b: usize, c_out: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut params[w..w + n] {
                *v = rng.random_range(-bound..bound);
            }
            for v in &mut params[b..b + c_out] {
                *v = rng.random_range(-bound..bound);
            }
        };
        for layers in &layout.heads {
            for l in layers {
                init(l.w, l.c_out * l.c_in * l.k, l.b, l.c_out, l.c_in * l.k);
            }
        }
        for d in &layout.dense {
            init(d.w, d.n_out * d.n_in, d.b, d.n_out, d.n_in);
        }
        let out = *layout.dense.last().unwrap();
        params[out.b] = 0.0;
        params[out.b + 1] = 0.0;
        let mut net = Self {
            config,
            params,
            norm_scale: 1.0,
        };
        let ones = vec![1.0; net.config.window];
        let (raw, _) = net.raw_output(&ones);
        net.params[out.b] = inv_softplus(1.0 - PARAM_FLOOR) - raw[0];
        net.params[out.b + 1] = inv_softplus(1.5 - PARAM_FLOOR) - raw[1];
        Ok(net)
    }

    pub fn from_params(config: NetConfig, params: Vec<f64>, norm_scale: f64) -> Result<Self> {
        config.validate()?;
        let expected = config.param_count();
        if params.len() != expected {
            return Err(Error::arg(
                "params",
                format!("{} values, config needs {expected}", params.len()),
            ));
        }
        if let Some(i) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!("parameter {i} is not finite")));
        }
        if !(norm_scale.is_finite() && norm_scale > 0.0) {
            return Err(Error::Invariant(format!("normalization scale {norm_scale} must be positive")));
        }
        Ok(Self {
            config,
            params,
            norm_scale,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }
    pub fn window(&self) -> usize {
        self.config.window
    }
    pub fn params(&self) -> &[f64] {
        &self.params
    }
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
    pub fn param_count(&self) -> usize {
        self.params.len()
    }
    pub fn norm_scale(&self) -> f64 {
        self.norm_scale
    }
    pub fn set_norm_scale(&mut self, s: f64) -> Result<()> {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::arg("norm_scale", format!("{s} must be positive")));
        }
        self.norm_scale = s;
        Ok(())
    }

    fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    /// Raw outputs and the window's scaling factor.
    fn run(&self, layout: &Layout, ws: &mut Workspace, x: &[f64]) -> ([f64; 2], f64) {
        let slope = self.config.leaky_slope;
        let p = &self.params;
        let m = if self.config.mean_scaling {
            (x.iter().sum::<f64>() / x.len() as f64).max(MEAN_FLOOR)
        } else {
            1.0
        };
        let mut off = 0;
        for (h, layers) in layout.heads.iter().enumerate() {
            for (a, &v) in ws.head_acts[h][0].iter_mut().zip(x) {
                *a = v / m;
            }
            for (i, l) in layers.iter().enumerate() {
                let (done, rest) = ws.head_acts[h].split_at_mut(i + 1);
                let pre = &mut ws.head_pre[h][i];
                conv_forward(l, p, &done[i], pre);
                for (a, &z) in rest[0].iter_mut().zip(pre.iter()) {
                    *a = leaky(z, slope);
                }
            }
            let last = ws.head_acts[h].last().unwrap();
            ws.dense_acts[0][off..off + last.len()].copy_from_slice(last);
            off += last.len();
        }
        let n = layout.dense.len();
        for (i, d) in layout.dense.iter().enumerate() {
            let (done, rest) = ws.dense_acts.split_at_mut(i + 1);
            let pre = &mut ws.dense_pre[i];
            dense_forward(d, p, &done[i], pre);
            if i + 1 < n {
                for (a, &z) in rest[0].iter_mut().zip(pre.iter()) {
                    *a = leaky(z, slope);
                }
            } else {
                rest[0].copy_from_slice(pre);
            }
        }
        let out = &ws.dense_acts[n];
        ([out[0], out[1]], m)
    }

    fn raw_output(&self, x: &[f64]) -> ([f64; 2], f64) {
        let layout = self.layout();
        let mut ws = Workspace::new(&layout, self.config.window);
        self.run(&layout, &mut ws, x)
    }

    fn link((raw, m): ([f64; 2], f64)) -> WeibullParams {
        WeibullParams {
            scale: m * (softplus(raw[0]) + PARAM_FLOOR),
            shape: softplus(raw[1]) + PARAM_FLOOR,
        }
    }

    /// Back-propagates `d_raw` (gradient w.r.t. the two raw outputs) for the
    /// sample last passed through `run`, accumulating into `g`.
    fn backprop(&self, layout: &Layout, ws: &mut Workspace, d_raw: [f64; 2], g: &mut [f64]) {
        let slope = self.config.leaky_slope;
        let p = &self.params;
        let n = layout.dense.len();
        ws.dense_grad[n][0] = d_raw[0];
        ws.dense_grad[n][1] = d_raw[1];
        for i in (0..n).rev() {
            let d = &layout.dense[i];
            let (lower, upper) = ws.dense_grad.split_at_mut(i + 1);
            let d_out = &mut upper[0];
            if i + 1 < n {
                for (dz, &z) in d_out.iter_mut().zip(&ws.dense_pre[i]) {
                    if z <= 0.0 {
                        *dz *= slope;
                    }
                }
            }
            dense_backward(d, p, &ws.dense_acts[i], d_out, g, &mut lower[i]);
        }
        let mut off = 0;
        for (h, layers) in layout.heads.iter().enumerate() {
            let m = layers.len();
            let len = ws.head_grad[h][m].len();
            ws.head_grad[h][m].copy_from_slice(&ws.dense_grad[0][off..off + len]);
            off += len;
            for i in (0..m).rev() {
                let l = &layers[i];
                let (lower, upper) = ws.head_grad[h].split_at_mut(i + 1);
                let d_out = &mut upper[0];
                for (dz, &z) in d_out.iter_mut().zip(&ws.head_pre[h][i]) {
                    if z <= 0.0 {
                        *dz *= slope;
                    }
                }
                conv_backward(l, p, &ws.head_acts[h][i], d_out, g, &mut lower[i]);
            }
        }
    }

    fn check_batch(&self, inputs: &[f64]) -> Result<usize> {
        let w = self.config.window;
        if inputs.len() % w != 0 {
            return Err(Error::arg(
                "batch",
                format!("{} values is not a whole number of windows of {w}", inputs.len()),
            ));
        }
        Ok(inputs.len() / w)
    }

    /// Predicts one distribution per row of `inputs` (rows of length `window`).
    pub fn forward(&self, inputs: &[f64]) -> Result<Vec<WeibullParams>> {
        self.check_batch(inputs)?;
        let layout = self.layout();
        let w = self.config.window;
        let out: Vec<Vec<WeibullParams>> = inputs
            .par_chunks(w * CHUNK_ROWS)
            .map(|chunk| {
                let mut ws = Workspace::new(&layout, w);
                chunk
                    .chunks_exact(w)
                    .map(|row| Self::link(self.run(&layout, &mut ws, row)))
                    .collect()
            })
            .collect();
        Ok(out.into_iter().flatten().collect())
    }

    /// Batch-mean Weibull NLL and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, inputs: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        let n = self.check_batch(inputs)?;
        if n == 0 {
            return Err(Error::arg("batch", "empty batch"));
        }
        if targets.len() != n {
            return Err(Error::arg("targets", format!("{} targets for {n} rows", targets.len())));
        }
        let layout = self.layout();
        let w = self.config.window;
        let inv_n = 1.0 / n as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; layout.total];
        let rows_per_wave = CHUNK_ROWS * WAVE_CHUNKS;
        for wave in 0..n.div_ceil(rows_per_wave) {
            let r0 = wave * rows_per_wave;
            let r1 = (r0 + rows_per_wave).min(n);
            let parts: Vec<(f64, Vec<f64>)> = inputs[r0 * w..r1 * w]
                .par_chunks(w * CHUNK_ROWS)
                .zip(targets[r0..r1].par_chunks(CHUNK_ROWS))
                .map(|(xs, ts)| {
                    let mut ws = Workspace::new(&layout, w);
                    let mut g = vec![0.0; layout.total];
                    let mut l = 0.0;
                    for (row, &t) in xs.chunks_exact(w).zip(ts) {
                        let (raw, m) = self.run(&layout, &mut ws, row);
                        let prm = Self::link((raw, m));
                        l -= prm.log_pdf_unchecked(t);
                        let (da, db) = prm.nll_grad_unchecked(t);
                        let d_raw = [da * m * sigmoid(raw[0]) * inv_n, db * sigmoid(raw[1]) * inv_n];
                        self.backprop(&layout, &mut ws, d_raw, &mut g);
                    }
                    (l, g)
                })
                .collect();
            for (l, g) in parts {
                loss += l;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
        }
        Ok((loss * inv_n, grad))
    }

    /// Batch-mean NLL without gradients.
    pub fn loss(&self, inputs: &[f64], targets: &[f64]) -> Result<f64> {
        let preds = self.forward(inputs)?;
        crate::weibull::nll(targets, &preds)
    }

    /// Copy with parameters rounded to f32, as stored in the model file.
    pub fn rounded_to_f32(&self) -> Self {
        let mut out = self.clone();
        out.config.leaky_slope = out.config.leaky_slope as f32 as f64;
        for p in &mut out.params {
            *p = *p as f32 as f64;
        }
        out
    }
}

pub fn encode_model(net: &ProbNet) -> Vec<u8> {
    let cfg = &net.config;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    let put_u32 = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    put_u32(&mut out, MODEL_VERSION as usize);
    put_u32(&mut out, cfg.window);
    for list in [&cfg.heads, &cfg.channels, &cfg.fc] {
        put_u32(&mut out, list.len());
        for &v in list.iter() {
            put_u32(&mut out, v);
        }
    }
    out.extend_from_slice(&(cfg.leaky_slope as f32).to_le_bytes());
    put_u32(&mut out, cfg.mean_scaling as usize);
    out.extend_from_slice(&net.norm_scale.to_le_bytes());
    out.extend_from_slice(&(net.params.len() as u64).to_le_bytes());
    for p in &net.params {
        out.extend_from_slice(&(*p as f32).to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(field, "unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self, field: &'static str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()) as usize)
    }
    fn list(&mut self, field: &'static str) -> Result<Vec<usize>> {
        let n = self.u32(field)?;
        if n > 1024 {
            return Err(Error::format(field, format!("implausible length {n}")));
        }
        (0..n).map(|_| self.u32(field)).collect()
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<ProbNet> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MODEL_MAGIC {
        return Err(Error::format("magic", "expected USSM"));
    }
    let version = r.u32("version")?;
    if version != MODEL_VERSION as usize {
        return Err(Error::format("version", format!("unsupported version {version}")));
    }
    let window = r.u32("window")?;
    let heads = r.list("heads")?;
    let channels = r.list("channels")?;
    let fc = r.list("fc")?;
    let leaky_slope = f32::from_le_bytes(r.take(4, "leaky_slope")?.try_into().unwrap()) as f64;
    let mean_scaling = match r.u32("mean_scaling")? {
        0 => false,
        1 => true,
        v => return Err(Error::format("mean_scaling", format!("flag {v} is not 0 or 1"))),
    };
    let norm_scale = f64::from_le_bytes(r.take(8, "norm_scale")?.try_into().unwrap());
    let count = u64::from_le_bytes(r.take(8, "param_count")?.try_into().unwrap()) as usize;
    let config = NetConfig {
        window,
        heads,
        channels,
        fc,
        leaky_slope,
        mean_scaling,
    };
    config
        .validate()
        .map_err(|e| Error::format("config", e.to_string()))?;
    if count != config.param_count() {
        return Err(Error::format(
            "param_count",
            format!("header declares {count}, config implies {}", config.param_count()),
        ));
    }
    let rest = &bytes[r.pos..];
    if rest.len() != 4 * count {
        return Err(Error::format(
            "params",
            format!("{} payload bytes for {count} parameters", rest.len()),
        ));
    }
    let params = rest
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    ProbNet::from_params(config, params, norm_scale)
}

pub fn save_model(net: &ProbNet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_model(net))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ProbNet> {
    decode_model(&fs::read(path)?)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::arg(
                "grads",
                format!(
                    "optimizer holds {} moments, got {} params and {} grads",
                    self.m.len(),
                    params.len(),
                    grads.len()
                ),
            ));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
