use proptest::prelude::*;
use sweepseg::infer::{combine, run_normalized, sweep, InferConfig, NormalizedVolume, SequencePredictor, SweepMode};
use sweepseg::volume::{AxisCalib, ScanVolume, VolumeKind};
use sweepseg::weibull::WeibullParams;
use sweepseg::Result;

/// Predicts a Weibull whose scale tracks the window mean.
struct MeanPredictor(usize);

impl SequencePredictor for MeanPredictor {
    fn window(&self) -> usize {
        self.0
    }

    fn norm_scale(&self) -> f64 {
        1.0
    }

    fn predict(&self, inputs: &[f64]) -> Result<Vec<WeibullParams>> {
        inputs
            .chunks(self.0)
            .map(|w| WeibullParams::new(1.1 * (w.iter().sum::<f64>() / w.len() as f64).max(1e-3), 4.0))
            .collect()
    }
}

const W: usize = 4;

fn volume(dims: (usize, usize, usize), data: Vec<f32>) -> NormalizedVolume {
    let v = ScanVolume::new(dims, VolumeKind::Envelope, AxisCalib::default(), data).unwrap();
    NormalizedVolume::new(&v, 1.0).unwrap()
}

fn cfg(confidence: f64) -> InferConfig {
    InferConfig {
        confidence,
        min_defect_mm: 1.0,
        ..InferConfig::default()
    }
}

fn padded(padding: &str) -> InferConfig {
    InferConfig {
        padding: padding.into(),
        ..cfg(0.99)
    }
}

/// First frame index `k` such that frames `0..=k` cannot see later frames.
/// Reflect padding borrows frames `1..=W` for the first windows.
fn causal_from(padding: &str) -> usize {
    if padding == "reflect" { W } else { 0 }
}

fn envelope() -> impl Strategy<Value = ((usize, usize, usize), Vec<f32>)> {
    (W + 2..W + 14, 1usize..4, 1usize..4).prop_flat_map(|dims| {
        let n = dims.0 * dims.1 * dims.2;
        (Just(dims), prop::collection::vec(0.05f32..2.0, n))
    })
}

fn padding() -> impl Strategy<Value = &'static str> {
    prop_oneof![Just("edge"), Just("reflect"), Just("zero")]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn forward_sweep_is_causal((dims, data) in envelope(), cut in 0usize..100, bump in 0.5f32..20.0, pad in padding()) {
        let from = causal_from(pad);
        let k = from + cut % (dims.0 - from);
        let plane = dims.1 * dims.2;
        let base = sweep(&MeanPredictor(W), &volume(dims, data.clone()), &padded(pad), SweepMode::Forward).unwrap();
        let mut later = data;
        for v in &mut later[(k + 1) * plane..] {
            *v += bump;
        }
        let changed = sweep(&MeanPredictor(W), &volume(dims, later), &padded(pad), SweepMode::Forward).unwrap();
        prop_assert_eq!(&base.data()[..(k + 1) * plane], &changed.data()[..(k + 1) * plane]);
    }

    #[test]
    fn backward_sweep_is_anti_causal((dims, data) in envelope(), cut in 0usize..100, bump in 0.5f32..20.0, pad in padding()) {
        let from = causal_from(pad);
        let k = dims.0 - 1 - from - cut % (dims.0 - from);
        let plane = dims.1 * dims.2;
        let base = sweep(&MeanPredictor(W), &volume(dims, data.clone()), &padded(pad), SweepMode::Backward).unwrap();
        let mut earlier = data;
        for v in &mut earlier[..k * plane] {
            *v += bump;
        }
        let changed = sweep(&MeanPredictor(W), &volume(dims, earlier), &padded(pad), SweepMode::Backward).unwrap();
        prop_assert_eq!(&base.data()[k * plane..], &changed.data()[k * plane..]);
    }

    #[test]
    fn higher_confidence_flags_a_subset((dims, data) in envelope(), lo in 0.5f64..0.99) {
        let v = volume(dims, data);
        let a = sweep(&MeanPredictor(W), &v, &cfg(lo), SweepMode::Forward).unwrap();
        let b = sweep(&MeanPredictor(W), &v, &cfg(lo + 0.5 * (1.0 - lo)), SweepMode::Forward).unwrap();
        prop_assert!(b.data().iter().zip(a.data()).all(|(&h, &l)| h == 0.0 || l == 1.0));
    }

    #[test]
    fn pipeline_stages_nest((dims, data) in envelope(), c in 0.5f64..0.999) {
        let out = run_normalized(&MeanPredictor(W), &volume(dims, data), &cfg(c)).unwrap();
        let (f, b, both) = (out.forward.unwrap(), out.backward.unwrap(), out.combined.unwrap());
        prop_assert_eq!(&combine(&f, &b).unwrap(), &both);
        prop_assert!(out.final_mask.data().iter().zip(both.data()).all(|(&m, &c)| m == 0.0 || c == 1.0));
    }
}

#[test]
fn a_sentinel_spike_is_flagged_by_both_sweeps() {
    let dims = (3 * W + 1, 2, 2);
    let mut data = vec![0.5f32; dims.0 * dims.1 * dims.2];
    let at = (2 * W * dims.1 + 1) * dims.2 + 1;
    data[at] = 50.0;
    let out = run_normalized(&MeanPredictor(W), &volume(dims, data), &cfg(0.999)).unwrap();
    let combined = out.combined.unwrap();
    assert_eq!(combined.data()[at], 1.0);
    assert_eq!(combined.data().iter().filter(|&&v| v == 1.0).count(), 1);
}

#[test]
fn flat_input_is_never_flagged() {
    let dims = (2 * W, 3, 3);
    let v = volume(dims, vec![1.0; dims.0 * dims.1 * dims.2]);
    for mode in [SweepMode::Forward, SweepMode::Backward] {
        assert!(sweep(&MeanPredictor(W), &v, &cfg(0.99), mode).unwrap().data().iter().all(|&m| m == 0.0));
    }
}
