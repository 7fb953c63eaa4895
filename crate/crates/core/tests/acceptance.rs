//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero on any failure not listed in `KNOWN_RED`.
//!
//! Run with `cargo test --release -p sweepseg --test acceptance`.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sweepseg::eval::{accuracy_percent, calibration_offset, corrected_mae, evaluate, EvalReport};
use sweepseg::infer::{combine, forward_sweep, run_pipeline, InferConfig, NormalizedVolume, SequencePredictor};
use sweepseg::morph::{area_opening, area_opening_2d, label_components, Connectivity};
use sweepseg::net::{decode_model, encode_model, NetConfig, ProbNet};
use sweepseg::registry::{paddings, thresholds};
use sweepseg::synth::{clean_plate, generate, stepped_defect_sample, DefectShape, DefectSpec, SynthConfig, TruthSet};
use sweepseg::trainer::{count_windows, stride_study, train_on_volumes, SamplerConfig, StrideRow, TrainConfig};
use sweepseg::volume::{decode_volume, downsample_time, encode_volume, envelope, ScanVolume};
use sweepseg::weibull::WeibullParams;

use common::*;

const CONFIDENCES: [f64; 6] = [0.99, 0.999, 0.9999, 0.99999, 0.999999, 0.9999999];
const TOP: f64 = 0.9999999;

/// Failures that are understood and documented in the README: the combined
/// sweep at c = 0.99 splits each sweep's merged false-call regions into
/// more components than either sweep has alone.
const KNOWN_RED: &[&str] = &["7b@0.99"];

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
    /// Sub-check keys that failed, matched against `KNOWN_RED`.
    failed: Vec<String>,
}

fn outcome(id: &'static str, checks: Vec<(String, bool)>, detail: String) -> Outcome {
    let failed: Vec<String> = checks.iter().filter(|(_, ok)| !ok).map(|(k, _)| k.clone()).collect();
    Outcome {
        id,
        pass: failed.is_empty(),
        detail,
        failed,
    }
}

fn single(id: &'static str, pass: bool, detail: String) -> Outcome {
    outcome(id, vec![(id.to_string(), pass)], detail)
}

fn env(cfg: &SynthConfig) -> (ScanVolume, TruthSet) {
    let (rf, truth) = generate(cfg).unwrap();
    (envelope(&rf).unwrap(), truth)
}

fn desk_net() -> NetConfig {
    NetConfig {
        window: 64,
        heads: vec![3, 7],
        channels: vec![4, 8],
        fc: vec![32, 16],
        leaky_slope: 0.01,
        mean_scaling: true,
    }
}

fn sampler() -> SamplerConfig {
    SamplerConfig {
        stride: 8,
        ..SamplerConfig::default()
    }
}

/// A flat 5 mm plate with nine defects on a layout unlike the stepped sample.
fn held_out_sample(seed: u64) -> SynthConfig {
    let rows = [50usize, 88, 126];
    let cols = [10usize, 26, 40];
    let widths = [[4.0, 7.0, 3.0], [6.0, 9.0, 5.0], [8.0, 3.0, 6.0]];
    let depths = [[2.5, 1.4, 3.2], [3.8, 2.1, 1.8], [1.6, 3.0, 2.6]];
    let mut defects = Vec::new();
    for (r, &frame) in rows.iter().enumerate() {
        for (c, &beam) in cols.iter().enumerate() {
            defects.push(DefectSpec {
                shape: if (r + 2 * c) % 3 == 1 { DefectShape::Square } else { DefectShape::Circle },
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
        thickness_mm: 5.0,
        defects,
        seed,
        ..SynthConfig::default()
    }
}

fn score(model: &ProbNet, vol: &ScanVolume, truth: &TruthSet, c: f64) -> (EvalReport, Duration) {
    let cfg = InferConfig {
        confidence: c,
        ..InferConfig::default()
    };
    let t = Instant::now();
    let out = run_pipeline(model, vol, &cfg).unwrap();
    let elapsed = t.elapsed();
    (evaluate(&out.stages(), &truth.records, Some(vol)).unwrap(), elapsed)
}

fn stage<'a>(r: &'a EvalReport, name: &str) -> &'a sweepseg::eval::StageDetection {
    r.stages.iter().find(|s| s.stage == name).unwrap()
}

fn weibull_math() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let log_uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| (rng.random_range(lo.ln()..hi.ln())).exp();
    let mut round_trip: f64 = 0.0;
    for _ in 0..10_000 {
        let p = WeibullParams::new(log_uniform(&mut rng, 0.01, 10.0), log_uniform(&mut rng, 0.3, 30.0)).unwrap();
        let c: f64 = rng.random_range(1e-9..1.0 - 1e-9);
        round_trip = round_trip.max((p.cdf(p.quantile(c).unwrap()) - c).abs());
    }
    let (mut mean_err, mut pdf_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..40 {
        let p = WeibullParams::new(log_uniform(&mut rng, 0.05, 5.0), log_uniform(&mut rng, 0.5, 20.0)).unwrap();
        mean_err = mean_err.max((p.mean() - quadrature_mean(&p)).abs() / p.mean());
        for _ in 0..3 {
            let x = p.scale * log_uniform(&mut rng, 0.05, 2.0);
            pdf_err = pdf_err.max((p.log_pdf(x).unwrap() - quadrature_log_pdf(p.scale, p.shape, x)).abs());
        }
    }
    let elapsed = t.elapsed();
    single(
        "1",
        round_trip < 1e-12 && mean_err < 1e-8 && pdf_err < 1e-10 && elapsed < Duration::from_secs(5),
        format!(
            "weibull math: max |CDF(Q(c))-c| {round_trip:.1e} (<1e-12), mean rel err {mean_err:.1e} (<1e-8), \
             log_pdf err {pdf_err:.1e} (<1e-10), {:.2}s (<5s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let worst: Vec<f64> = (0..5).map(|seed| gradient_check(seed, &mut rng)).collect();
    let max = worst.iter().cloned().fold(0.0, f64::max);
    let elapsed = t.elapsed();
    single(
        "2",
        max < 1e-4 && elapsed < Duration::from_secs(30),
        format!(
            "gradient check: {} params, 5 seeds, worst rel err {max:.1e} (<1e-4), {:.2}s (<30s)",
            ProbNet::new(tiny_net(), 0).unwrap().param_count(),
            elapsed.as_secs_f64()
        ),
    )
}

/// Reference (accuracy %, FP count) detection cells, zero-FP cells omitted.
const DETECTION_CELLS: &[(f64, usize)] = &[
    (16.85, 74), (12.40, 106), (39.47, 23),
    (14.79, 144), (21.55, 91), (55.56, 20),
    (7.98, 173), (10.49, 128), (22.73, 51),
    (9.20, 148), (7.54, 184), (28.85, 37), (93.75, 1),
    (8.28, 277), (13.30, 163), (42.37, 34),
    (5.34, 266), (6.91, 202), (16.67, 75), (93.75, 1),
    (4.66, 307), (3.83, 377), (12.83, 102), (83.33, 3),
    (4.28, 559), (5.94, 396), (20.49, 97), (96.15, 1),
    (3.42, 395), (3.99, 337), (10.79, 124), (88.24, 2),
    (2.17, 677), (2.02, 729), (5.68, 249), (71.43, 6),
    (2.33, 1046), (2.76, 880), (7.99, 288), (92.59, 2),
    (2.33, 586), (2.34, 584), (5.88, 240), (78.95, 4),
    (1.31, 1129), (1.36, 1085), (1.89, 780), (65.22, 8),
    (1.33, 1704), (1.39, 1780), (2.32, 1053), (89.29, 3),
    (1.68, 759), (1.71, 806), (2.85, 512), (84.62, 2),
    (4.95, 288), (4.79, 298), (1.51, 980), (50.00, 15),
    (5.73, 411), (3.81, 632), (1.30, 1896), (96.15, 1),
];

fn table_arithmetic() -> Outcome {
    let fmt = |tp, fp| format!("{:.2}", accuracy_percent(tp, fp));
    let mut checks = vec![
        ("3:15/23".to_string(), fmt(15, 23) == "39.47"),
        ("3:25/20".to_string(), fmt(25, 20) == "55.56"),
    ];
    // A printed accuracy stands for the interval [acc - 0.005, acc + 0.005),
    // so its implied TP is integral when that interval's TP range holds an integer.
    let implied = |acc: f64, fp: usize| acc * fp as f64 / (100.0 - acc);
    let mut integral = 0;
    let mut near_misses = Vec::new();
    for &(acc, fp) in DETECTION_CELLS {
        let (lo, hi) = (implied(acc - 0.005, fp), implied(acc + 0.005, fp));
        if lo.ceil() <= hi.floor() {
            integral += 1;
            let tp = lo.ceil() as usize;
            checks.push((format!("3:{acc}({fp})"), fmt(tp, fp) == format!("{acc:.2}")));
        } else if (implied(acc, fp) - implied(acc, fp).round()).abs() < 0.05 {
            near_misses.push(format!("{acc:.2}({fp}) implies TP {:.3}", implied(acc, fp)));
        }
    }
    let ok = checks.iter().filter(|c| c.1).count();
    outcome(
        "3",
        checks.clone(),
        format!(
            "detection accuracy: (15,23) {} and (25,20) {}, {ok}/{} checks incl. {integral} of {} table cells with integral TP; not integral under rounding: {}",
            fmt(15, 23),
            fmt(25, 20),
            checks.len(),
            DETECTION_CELLS.len(),
            if near_misses.is_empty() { "none".to_string() } else { near_misses.join(", ") }
        ),
    )
}

fn morphology_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (mut label_ok, mut open_ok) = (0, 0);
    for i in 0..100 {
        let g = random_field(&mut rng, 32, 32, 0.2 + 0.4 * (i as f64 / 100.0));
        let filter = rng.random_range(1..12);
        let mut both = (true, true);
        for conn in [Connectivity::Four, Connectivity::Eight] {
            let lab = label_components(&g, conn);
            let (oracle, n) = flood_labels(&g, conn);
            both.0 &= lab.labels.data == oracle && lab.count == n;
            both.1 &= area_opening_2d(&g, filter, conn).unwrap().data == flood_opening(&g, filter, conn);
        }
        label_ok += both.0 as usize;
        open_ok += both.1 as usize;
    }
    single(
        "4",
        label_ok == 100 && open_ok == 100,
        format!("flood-fill oracles: labeling {label_ok}/100, area opening {open_ok}/100 (both connectivities)"),
    )
}

/// Fraction of voxels flagged from measured history, over frames `>= W`.
fn one_step_rate(model: &ProbNet, vol: &ScanVolume, c: f64) -> (f64, usize) {
    let reduced = downsample_time(vol, InferConfig::default().time_downsample).unwrap();
    let nv = NormalizedVolume::new(&reduced, model.norm_scale()).unwrap();
    let v = nv.volume();
    let (nf, nt, nb) = v.dims();
    let w = model.window();
    let rule = thresholds().get("upper").unwrap();
    let (mut flagged, mut total) = (0usize, 0usize);
    let mut inputs = vec![0f64; nt * nb * w];
    for f in w..nf {
        for lane in 0..nt * nb {
            for k in 0..w {
                inputs[lane * w + k] = v.frame(f - w + k)[lane] as f64;
            }
        }
        let pred = model.predict(&inputs).unwrap();
        for (lane, p) in pred.iter().enumerate() {
            flagged += rule.is_anomalous(v.frame(f)[lane] as f64, p, c) as usize;
        }
        total += nt * nb;
    }
    (flagged as f64 / total as f64, total)
}

fn false_calls(model: &ProbNet) -> Outcome {
    let (clean, _) = env(&clean_plate(4.0, 5));
    let (rate, n) = one_step_rate(model, &clean, 0.99);
    let cfg = InferConfig {
        confidence: 0.99,
        sweep: sweepseg::infer::SweepMode::Forward,
        ..InferConfig::default()
    };
    let fwd = run_pipeline(model, &clean, &cfg).unwrap().forward.unwrap();
    let sweep_rate = fwd.data().iter().filter(|&&x| x != 0.0).count() as f64 / fwd.data().len() as f64;
    single(
        "5",
        n >= 100_000 && (0.0..=0.02).contains(&rate),
        format!(
            "false calls at c=0.99 on a held-out clean plate: {:.2}% of {n} voxels (in [0, 2%]); forward sweep {:.2}%",
            100.0 * rate,
            100.0 * sweep_rate
        ),
    )
}

struct Sweep {
    reports: Vec<EvalReport>,
    top_infer: Duration,
}

fn detection(sweep: &Sweep, n_defects: usize, run_time: Duration) -> Outcome {
    let top = sweep.reports.last().unwrap();
    let f = top.final_stage();
    single(
        "6",
        n_defects >= 10 && f.tp == n_defects && f.fp == 0 && run_time < Duration::from_secs(600) && sweep.top_infer < Duration::from_secs(60),
        format!(
            "end-to-end at c={TOP}: {}/{n_defects} detected, {} FP, accuracy {:.2}%; synth+train+infer+eval {:.0}s (<600s), inference {:.1}s (<60s)",
            f.tp,
            f.fp,
            f.accuracy,
            run_time.as_secs_f64(),
            sweep.top_infer.as_secs_f64()
        ),
    )
}

fn trends(sweep: &Sweep) -> Outcome {
    let mut checks = Vec::new();
    let maes: Vec<f64> = sweep.reports.iter().map(|r| r.overall.mae_mm).collect();
    for (i, pair) in maes.windows(2).enumerate() {
        checks.push((format!("7a@{}", CONFIDENCES[i + 1]), pair[1] <= pair[0] + 1e-9));
    }
    let mut counts = Vec::new();
    for (r, c) in sweep.reports.iter().zip(CONFIDENCES) {
        let (fw, bw, cb) = (stage(r, "forward").fp, stage(r, "backward").fp, stage(r, "combined").fp);
        counts.push(format!("{fw}/{bw}->{cb}"));
        checks.push((format!("7b@{c}"), cb <= fw.min(bw)));
        checks.push((format!("7c@{c}"), r.final_stage().tp == stage(r, "combined").tp));
    }
    let mae_txt: Vec<String> = maes.iter().map(|m| format!("{m:.2}")).collect();
    outcome(
        "7",
        checks,
        format!(
            "trends over c=0.99..{TOP}: (a) MAE {} mm, (b) FP fwd/bwd->combined {}, (c) area filter keeps every detection",
            mae_txt.join(" "),
            counts.join(" ")
        ),
    )
}

fn oversize(sweep: &Sweep) -> Outcome {
    let pairs = sweep.reports.last().unwrap().width_pairs();
    let over = pairs.iter().filter(|(m, t)| m >= t).count();
    let frac = over as f64 / pairs.len().max(1) as f64;
    single(
        "8",
        !pairs.is_empty() && frac >= 0.9,
        format!("oversize at c={TOP}: {over}/{} detected defects measured >= true width (>= 90%)", pairs.len()),
    )
}

fn calibration(sweep: &Sweep, held_out: &EvalReport) -> Outcome {
    let fit = sweep.reports.last().unwrap().width_pairs();
    let offset = calibration_offset(&fit).unwrap();
    let pairs = held_out.width_pairs();
    let raw = corrected_mae(0.0, &pairs);
    let cal = corrected_mae(offset, &pairs);
    let reduction = 1.0 - cal / raw;
    single(
        "9",
        !pairs.is_empty() && reduction >= 0.3,
        format!(
            "calibration: offset {offset:.2} mm from the stepped sample; held-out MAE {raw:.2} -> {cal:.2} mm ({:.0}% reduction, >= 30%)",
            100.0 * reduction
        ),
    )
}

fn is_subset(a: &ScanVolume, b: &ScanVolume) -> bool {
    a.data().iter().zip(b.data()).all(|(&x, &y)| x == 0.0 || y != 0.0)
}

fn invariants(model: &ProbNet, sample: &ScanVolume) -> Outcome {
    let reduced = downsample_time(sample, InferConfig::default().time_downsample).unwrap();
    let vol = NormalizedVolume::new(&reduced, model.norm_scale()).unwrap();
    let w = model.window();
    let upper = thresholds().get("upper").unwrap();
    let sweep_of = |v: &NormalizedVolume, c: f64, pad: &str| forward_sweep(model, v, c, paddings().get(pad).unwrap().as_ref(), upper.as_ref()).unwrap();
    let mut checks = Vec::new();

    // Causality: a prefix of the scan gives the prefix of the mask.
    let full = sweep_of(&vol, 0.999, "reflect");
    let mut causal = true;
    for n in [w + 1, w + 30] {
        let part = NormalizedVolume::new(&reduced.truncated(n).unwrap(), model.norm_scale()).unwrap();
        causal &= sweep_of(&part, 0.999, "reflect").data() == &full.data()[..part.volume().data().len()];
    }
    checks.push(("causality".to_string(), causal));

    // Substitution: any two flagged values at one voxel leave identical histories.
    let (f0, t0, b0) = (w + 10, 20, 5);
    let with_value = |x: f32| {
        let mut data = reduced.data().to_vec();
        data[reduced.index(f0, t0, b0)] = x;
        let v = reduced.with_data(reduced.kind(), data).unwrap();
        sweep_of(&NormalizedVolume::new(&v, model.norm_scale()).unwrap(), 0.999, "reflect")
    };
    let (s1, s2) = (with_value(1e3), with_value(7e4));
    checks.push(("sentinel".to_string(), s1.get(f0, t0, b0) == 1.0 && s1.data() == s2.data()));

    // Monotone in confidence for one-step predictions on a fixed history.
    let (lo, _) = one_step_rate(model, &sample.truncated(w + 8).unwrap(), 0.99);
    let (hi, _) = one_step_rate(model, &sample.truncated(w + 8).unwrap(), 0.9999);
    let mut monotone = hi <= lo;
    let p = model.predict(&vec![0.3; w]).unwrap()[0];
    for x in [0.1, 0.5, 1.0, 2.0] {
        let flags: Vec<bool> = CONFIDENCES.iter().map(|&c| upper.is_anomalous(x, &p, c)).collect();
        monotone &= flags.windows(2).all(|f| f[0] || !f[1]);
    }
    checks.push(("monotone".to_string(), monotone));

    let back = sweepseg::infer::sweep(model, &vol, &InferConfig { confidence: 0.999, ..InferConfig::default() }, sweepseg::infer::SweepMode::Backward).unwrap();
    let and = combine(&full, &back).unwrap();
    checks.push(("and".to_string(), is_subset(&and, &full) && is_subset(&and, &back)));

    let opened = area_opening(&and, 11, Connectivity::Eight).unwrap();
    let twice = area_opening(&opened, 11, Connectivity::Eight).unwrap();
    checks.push(("idempotent".to_string(), opened == twice && is_subset(&opened, &and)));

    let usv = decode_volume(&encode_volume(sample)).unwrap() == *sample;
    // Model files hold f32 weights.
    let net = decode_model(&encode_model(model)).unwrap();
    let stored = model.rounded_to_f32();
    let same = net.params() == stored.params() && net.norm_scale() == stored.norm_scale() && net.config() == stored.config();
    checks.push(("roundtrip".to_string(), usv && same));

    let names: Vec<String> = checks.iter().map(|(k, ok)| format!("{k} {}", if *ok { "ok" } else { "FAILED" })).collect();
    let detail = format!("invariants: {}", names.join(", "));
    outcome("10", checks, detail)
}

fn stride_harness(train: &[ScanVolume], val: &[ScanVolume], test: &[ScanVolume]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut matches = 0;
    for _ in 0..200 {
        let l = rng.random_range(2..400);
        let w = rng.random_range(1..l);
        let s = rng.random_range(1..300);
        let brute = (0..l).step_by(s).filter(|&start| start + w < l).count();
        matches += (count_windows(l, w, s).unwrap() == brute) as usize;
    }
    let rows: Vec<StrideRow> = stride_study(&desk_net(), train, val, test, &[8, 256], 1, &sampler(), &TrainConfig::desk()).unwrap();
    let (ll8, ll256) = (rows[0].mean_test_ll, rows[1].mean_test_ll);
    single(
        "11",
        matches == 200 && ll256 <= ll8,
        format!(
            "stride harness: count_windows {matches}/200 vs enumeration; test LL stride 8 {ll8:.4} ({} windows), stride 256 {ll256:.4} ({} windows)",
            rows[0].dataset_size, rows[1].dataset_size
        ),
    )
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut results = vec![weibull_math(), gradients(), table_arithmetic(), morphology_oracles()];

    let run = Instant::now();
    let train: Vec<ScanVolume> = [(3.5, 1), (4.5, 2), (5.5, 3)].iter().map(|&(t, s)| env(&clean_plate(t, s)).0).collect();
    let val = vec![env(&clean_plate(5.0, 4)).0];
    let (sample, truth) = env(&stepped_defect_sample(0));
    let model = train_on_volumes(&desk_net(), &train, &val, &sampler(), &TrainConfig::desk()).unwrap().model;
    let (top, top_infer) = score(&model, &sample, &truth, TOP);
    let run_time = run.elapsed();

    results.push(false_calls(&model));
    let mut reports: Vec<EvalReport> = CONFIDENCES[..5].iter().map(|&c| score(&model, &sample, &truth, c).0).collect();
    reports.push(top);
    let sweep = Sweep { reports, top_infer };
    results.push(detection(&sweep, truth.records.len(), run_time));
    results.push(trends(&sweep));
    results.push(oversize(&sweep));
    let (held_vol, held_truth) = env(&held_out_sample(21));
    results.push(calibration(&sweep, &score(&model, &held_vol, &held_truth, TOP).0));
    results.push(invariants(&model, &sample));
    results.push(stride_harness(&train, &val, &[env(&clean_plate(4.0, 5)).0]));

    let mut unexpected = 0;
    println!();
    for r in &results {
        let known = !r.failed.is_empty() && r.failed.iter().all(|k| KNOWN_RED.contains(&k.as_str()));
        let status = match (r.pass, known) {
            (true, _) => "PASS".to_string(),
            (false, true) => format!("FAIL (known: {})", r.failed.join(", ")),
            (false, false) => {
                unexpected += 1;
                format!("FAIL ({})", r.failed.join(", "))
            }
        };
        println!("criterion {:>2} {status}: {}", r.id, r.detail);
    }
    println!("acceptance suite finished in {:.0}s", started.elapsed().as_secs_f64());
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
