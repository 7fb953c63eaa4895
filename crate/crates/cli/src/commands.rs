use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use log::info;
use sweepseg::eval::{detection_table, evaluate, localization_table, sizing_table, EvalReport, SizingRun};
use sweepseg::infer::{run_pipeline, PipelineOutput};
use sweepseg::net::{load_model, save_model};
use sweepseg::synth::{generate, read_truth_csv, write_truth_csv, SynthConfig};
use sweepseg::trainer::{stride_csv, stride_study as run_stride_study, train_on_volumes, write_history_csv};
use sweepseg::volume::{bscan, cscan_amplitude, cscan_mask, envelope as to_envelope, read_volume, write_volume};
use sweepseg::volume::{ScanVolume, VolumeKind};

use crate::config::RunConfig;
use crate::render::write_pgm;
use crate::{EnvelopeArgs, EvalArgs, InferArgs, PipelineArgs, RenderArgs, StrideArgs, SynthArgs, TrainArgs, Usage};

const STAGES: [&str; 3] = ["forward", "backward", "combined"];

/// `dir/stem.suffix`, where `stem` is `path` without its last extension.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn read(path: &Path) -> anyhow::Result<ScanVolume> {
    read_volume(path).with_context(|| format!("reading {}", path.display()))
}

fn write(vol: &ScanVolume, path: &Path) -> anyhow::Result<()> {
    write_volume(vol, path).with_context(|| format!("writing {}", path.display()))
}

/// Envelope of `path`, computing it when the file holds RF data.
fn read_envelope(path: &Path) -> anyhow::Result<ScanVolume> {
    let v = read(path)?;
    match v.kind() {
        VolumeKind::Envelope => Ok(v),
        VolumeKind::Rf => {
            info!("{} is RF; taking its envelope", path.display());
            Ok(to_envelope(&v)?)
        }
        VolumeKind::Mask => Err(Usage(format!("{} is a mask, expected RF or envelope data", path.display())).into()),
    }
}

fn read_envelopes(paths: &[PathBuf]) -> anyhow::Result<Vec<ScanVolume>> {
    paths.iter().map(|p| read_envelope(p)).collect()
}

fn write_synth(cfg: &SynthConfig, out: &Path, truth: &Path, mask: &Path) -> anyhow::Result<()> {
    let (rf, t) = generate(cfg)?;
    write(&rf, out)?;
    write_truth_csv(&t.records, truth)?;
    write(&t.mask, mask)?;
    info!("wrote {} ({} defects)", out.display(), t.records.len());
    Ok(())
}

pub fn synth(a: &SynthArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load_or_default(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.set_seed(s);
    }
    let synth = match a.clean_thickness {
        Some(t) => {
            let plate = cfg.clean_plate(t, cfg.synth.seed);
            plate.validate()?;
            plate
        }
        None => cfg.synth.clone(),
    };
    let truth = a.truth.clone().unwrap_or_else(|| sibling(&a.out, "truth.csv"));
    let mask = a.mask.clone().unwrap_or_else(|| sibling(&a.out, "mask.usv"));
    write_synth(&synth, &a.out, &truth, &mask)
}

pub fn envelope(a: &EnvelopeArgs) -> anyhow::Result<()> {
    let v = read(&a.input)?;
    if v.kind() != VolumeKind::Rf {
        return Err(Usage(format!("{} is not an RF volume", a.input.display())).into());
    }
    write(&to_envelope(&v)?, &a.out)
}

fn train_model(cfg: &RunConfig, train: &[ScanVolume], val: &[ScanVolume], model: &Path, history: &Path) -> anyhow::Result<()> {
    let out = train_on_volumes(&cfg.train.net, train, val, &cfg.train.sampler, &cfg.train.train_config())?;
    save_model(&out.model, model)?;
    write_history_csv(&out.history, history)?;
    info!("trained {} epochs, best {}", out.history.len(), out.best_epoch);
    Ok(())
}

pub fn train(a: &TrainArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load_or_default(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.set_seed(s);
    }
    if let Some(s) = a.stride {
        cfg.train.sampler.stride = s;
        cfg.validate()?;
    }
    let train = read_envelopes(&a.train)?;
    let val = read_envelopes(&a.val)?;
    let history = a.history.clone().unwrap_or_else(|| sibling(&a.out, "history.csv"));
    train_model(&cfg, &train, &val, &a.out, &history)
}

fn write_masks(p: &PipelineOutput, out: &Path, stages: bool) -> anyhow::Result<()> {
    write(&p.final_mask, out)?;
    if stages {
        let masks = [&p.forward, &p.backward, &p.combined];
        for (name, m) in STAGES.iter().zip(masks) {
            if let Some(m) = m {
                write(m, &sibling(out, &format!("{name}.usv")))?;
            }
        }
    }
    Ok(())
}

pub fn infer(a: &InferArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load_or_default(a.config.as_deref())?;
    if let Some(c) = a.confidence {
        cfg.infer.confidence = c;
    }
    if let Some(s) = &a.sweep {
        cfg.infer.sweep = s.parse()?;
    }
    if let Some(m) = a.min_defect_mm {
        cfg.infer.min_defect_mm = m;
    }
    if let Some(p) = &a.padding {
        cfg.infer.padding = p.clone();
    }
    cfg.infer.validate()?;
    let model = load_model(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let env = read_envelope(&a.input)?;
    let p = run_pipeline(&model, &env, &cfg.infer)?;
    write_masks(&p, &a.out, a.stages)
}

fn groups_csv(r: &EvalReport) -> String {
    let mut s = String::from("width_mm,n,mae_mm,std_mm\n");
    for g in r.groups.iter().chain(std::iter::once(&r.overall)) {
        let w = g.width_mm.map_or("mean".to_string(), |w| w.to_string());
        let _ = writeln!(s, "{w},{},{},{}", g.n, g.mae_mm, g.std_mm);
    }
    s
}

fn write_report(r: &EvalReport, path: &Path) -> anyhow::Result<()> {
    let mut json = serde_json::to_string_pretty(r)?;
    json.push('\n');
    fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
    fs::write(sibling(path, "detection.csv"), detection_table(&r.stages))?;
    fs::write(sibling(path, "sizing.csv"), groups_csv(r))?;
    fs::write(sibling(path, "localization.csv"), localization_table(&r.defects))?;
    Ok(())
}

/// Scores the final mask at `mask` plus any stage masks beside it.
fn evaluate_files(mask: &Path, stages: bool, truth: &Path, volume: Option<&Path>) -> anyhow::Result<EvalReport> {
    let mut masks = Vec::new();
    if stages {
        for name in STAGES {
            let p = sibling(mask, &format!("{name}.usv"));
            if p.exists() {
                masks.push((name, read(&p)?));
            }
        }
        if masks.is_empty() {
            return Err(Usage(format!("--stages given but no stage masks sit next to {}", mask.display())).into());
        }
    }
    masks.push(("final", read(mask)?));
    if let Some((name, m)) = masks.iter().find(|(_, m)| m.kind() != VolumeKind::Mask) {
        return Err(Usage(format!("{name} input is a {:?} volume, not a mask", m.kind())).into());
    }
    let records = read_truth_csv(truth).with_context(|| format!("reading {}", truth.display()))?;
    let env = volume.map(read_envelope).transpose()?;
    let refs: Vec<(&str, &ScanVolume)> = masks.iter().map(|(n, m)| (*n, m)).collect();
    Ok(evaluate(&refs, &records, env.as_ref())?)
}

pub fn eval(a: &EvalArgs) -> anyhow::Result<()> {
    let r = evaluate_files(&a.mask, a.stages, &a.truth, a.volume.as_deref())?;
    write_report(&r, &a.report)?;
    let f = r.final_stage();
    println!("final: {} TP, {} FP, accuracy {:.2}%, width MAE {:.3} mm", f.tp, f.fp, f.accuracy, r.overall.mae_mm);
    Ok(())
}

fn parse_gate(s: &str) -> Result<(usize, usize), Usage> {
    let bad = || Usage(format!("--gate `{s}` is not lo:hi"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
}

pub fn render(a: &RenderArgs) -> anyhow::Result<()> {
    let v = read(&a.input)?;
    if let Some(out) = &a.cscan {
        let gate = match &a.gate {
            Some(g) => parse_gate(g)?,
            None => (0, v.n_time()),
        };
        let field = if v.kind() == VolumeKind::Mask {
            let m = cscan_mask(&v, gate)?;
            sweepseg::volume::Grid {
                rows: m.rows,
                cols: m.cols,
                data: m.data.iter().map(|&b| b as u8 as f32).collect(),
            }
        } else {
            cscan_amplitude(&v, gate)?
        };
        return write_pgm(&field, out);
    }
    let args = a.bscan.as_ref().expect("clap requires --cscan or --bscan");
    let frame: usize = args[0].parse().map_err(|_| Usage(format!("--bscan frame `{}` is not an index", args[0])))?;
    write_pgm(&bscan(&v, frame)?, Path::new(&args[1]))
}

pub fn stride_study(a: &StrideArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load_or_default(a.config.as_deref())?;
    if let Some(s) = &a.strides {
        cfg.train.strides = s.clone();
    }
    if let Some(r) = a.repeats {
        cfg.train.repeats = r;
    }
    cfg.validate()?;
    let train = read_envelopes(&a.train)?;
    let val = read_envelopes(&a.val)?;
    let test = read_envelopes(&a.test)?;
    let rows = run_stride_study(
        &cfg.train.net,
        &train,
        &val,
        &test,
        &cfg.train.strides,
        cfg.train.repeats,
        &cfg.train.sampler,
        &cfg.train.train_config(),
    )?;
    fs::write(&a.out, stride_csv(&rows)).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

/// File name tag for a confidence, e.g. `0.9999999`.
pub fn confidence_tag(c: f64) -> String {
    format!("{c}")
}

/// Seed of the `i`-th clean plate in a corpus role.
pub fn plate_seed(base: u64, role: &str, i: usize) -> u64 {
    let offset = match role {
        "train" => 1,
        "val" => 101,
        _ => 201,
    };
    base + offset + i as u64
}

pub fn pipeline(a: &PipelineArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load_or_default(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.set_seed(s);
    }
    let dir = a.out_dir.clone().unwrap_or_else(|| cfg.paths.out_dir.clone());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let seed = cfg.synth.seed;

    let synth_env = |name: &str, sc: &SynthConfig| -> anyhow::Result<(PathBuf, ScanVolume)> {
        let rf_path = dir.join(format!("{name}.usv"));
        write_synth(sc, &rf_path, &sibling(&rf_path, "truth.csv"), &sibling(&rf_path, "mask.usv"))?;
        let env = to_envelope(&read(&rf_path)?)?;
        let env_path = dir.join(format!("{name}.env.usv"));
        write(&env, &env_path)?;
        Ok((env_path, env))
    };
    let corpus = |role: &str, thicknesses: &[f64]| -> anyhow::Result<Vec<ScanVolume>> {
        thicknesses
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let plate = cfg.clean_plate(t, plate_seed(seed, role, i));
                synth_env(&format!("{role}{i}"), &plate).map(|(_, v)| v)
            })
            .collect()
    };
    let train = corpus("train", &cfg.corpus.train_thickness_mm)?;
    let val = corpus("val", &cfg.corpus.val_thickness_mm)?;
    let (sample_env_path, _) = synth_env("sample", &cfg.synth)?;
    let truth = dir.join("sample.truth.csv");

    let model_path = dir.join("model.ussm");
    train_model(&cfg, &train, &val, &model_path, &sibling(&model_path, "history.csv"))?;
    let model = load_model(&model_path)?;
    let env = read(&sample_env_path)?;

    let mut runs = Vec::new();
    for &c in &cfg.eval.confidences {
        let tag = confidence_tag(c);
        let infer_cfg = sweepseg::infer::InferConfig {
            confidence: c,
            ..cfg.infer.clone()
        };
        let p = run_pipeline(&model, &env, &infer_cfg)?;
        let mask_path = dir.join(format!("final_{tag}.usv"));
        write_masks(&p, &mask_path, cfg.eval.stages)?;
        let report = evaluate_files(&mask_path, cfg.eval.stages, &truth, Some(&sample_env_path))?;
        write_report(&report, &dir.join(format!("report_{tag}.json")))?;
        let line: Vec<String> = report.stages.iter().map(|s| format!("{} {}tp/{}fp", s.stage, s.tp, s.fp)).collect();
        println!("c={tag}: {} | width MAE {:.3} mm", line.join(", "), report.overall.mae_mm);
        runs.push(SizingRun {
            sample: "sample".into(),
            confidence: c,
            report,
        });
    }
    fs::write(dir.join("sizing.csv"), sizing_table(&runs))?;
    Ok(())
}
