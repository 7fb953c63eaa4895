//! Detection, sizing and localization metrics against known defects.
//!
//! Everything here works on frames × beams plan views except the depth
//! estimate, which reads the mask along the time axis.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::morph::{label_components, Connectivity};
use crate::synth::{DefectRecord, DefectShape};
use crate::volume::{cscan_amplitude, AxisCalib, Grid, ScanVolume, VolumeKind};

/// Half-amplitude region around the local peak reachable from `seed`.
///
/// Climbs to the largest 8-neighbour until no neighbour is larger, then
/// keeps the 8-connected component of `field >= peak / 2` containing the peak.
pub fn six_db_mask(field: &Grid<f32>, seed: (usize, usize)) -> Result<Grid<bool>> {
    let (rows, cols) = (field.rows, field.cols);
    if seed.0 >= rows || seed.1 >= cols {
        return Err(Error::arg("seed", format!("{seed:?} outside a {rows}×{cols} field")));
    }
    if !(field.get(seed.0, seed.1) > 0.0) {
        return Err(Error::arg("seed", "seed lies on zero background"));
    }
    let mut peak = seed;
    loop {
        let mut best = peak;
        for (nr, nc) in neighbours8(peak, rows, cols) {
            if field.get(nr, nc) > field.get(best.0, best.1) {
                best = (nr, nc);
            }
        }
        if best == peak {
            break;
        }
        peak = best;
    }
    let half = field.get(peak.0, peak.1) / 2.0;
    let above = Grid {
        rows,
        cols,
        data: field.data.iter().map(|&v| v >= half).collect(),
    };
    let lab = label_components(&above, Connectivity::Eight);
    let id = lab.labels.get(peak.0, peak.1);
    Ok(Grid {
        rows,
        cols,
        data: lab.labels.data.iter().map(|&l| l == id).collect(),
    })
}

fn neighbours8((r, c): (usize, usize), rows: usize, cols: usize) -> impl Iterator<Item = (usize, usize)> {
    (-1isize..=1)
        .flat_map(move |dr| (-1isize..=1).map(move |dc| (dr, dc)))
        .filter(|&d| d != (0, 0))
        .filter_map(move |(dr, dc)| {
            let (nr, nc) = (r as isize + dr, c as isize + dc);
            (nr >= 0 && nc >= 0 && (nr as usize) < rows && (nc as usize) < cols).then_some((nr as usize, nc as usize))
        })
}

pub fn accuracy_percent(tp: usize, fp: usize) -> f64 {
    if tp + fp == 0 {
        0.0
    } else {
        100.0 * tp as f64 / (tp + fp) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Detection {
    pub tp: usize,
    pub fp: usize,
    pub accuracy: f64,
}

/// Scores predicted components against truth components (both 8-connected).
pub fn detection(pred: &Grid<bool>, truth: &Grid<bool>) -> Result<Detection> {
    let truth_lab = label_components(truth, Connectivity::Eight);
    let truth_sets: Vec<Vec<(usize, usize)>> = truth_lab.pixels().into_iter().skip(1).collect();
    detection_against(pred, &truth_sets)
}

/// As [`detection`], with each truth defect given as its own pixel set.
pub fn detection_against(pred: &Grid<bool>, truths: &[Vec<(usize, usize)>]) -> Result<Detection> {
    let lab = label_components(pred, Connectivity::Eight);
    let mut comp_hits = vec![false; lab.count + 1];
    let mut tp = 0;
    for t in truths {
        if t.iter().any(|&(r, c)| r >= pred.rows || c >= pred.cols) {
            return Err(Error::arg("truth", "truth pixel outside the predicted field"));
        }
        let mut hit = false;
        for &(r, c) in t {
            let l = lab.labels.get(r, c) as usize;
            if l != 0 {
                comp_hits[l] = true;
                hit = true;
            }
        }
        tp += hit as usize;
    }
    let fp = comp_hits.iter().skip(1).filter(|&&h| !h).count();
    Ok(Detection {
        tp,
        fp,
        accuracy: accuracy_percent(tp, fp),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Width {
    /// Mean of the bounding extents along frames and beams, `count · pitch` each.
    pub extent_mm: f64,
    /// Diameter of the disc with the component's area.
    pub equivalent_diameter_mm: f64,
}

pub fn defect_width(pixels: &[(usize, usize)], calib: &AxisCalib) -> Result<Width> {
    if pixels.is_empty() {
        return Err(Error::arg("pixels", "empty component"));
    }
    let (fmin, fmax) = min_max(pixels.iter().map(|p| p.0));
    let (bmin, bmax) = min_max(pixels.iter().map(|p| p.1));
    let ef = (fmax - fmin + 1) as f64 * calib.scan_step_mm as f64;
    let eb = (bmax - bmin + 1) as f64 * calib.beam_pitch_mm as f64;
    let area = pixels.len() as f64 * calib.pixel_area_mm2();
    Ok(Width {
        extent_mm: 0.5 * (ef + eb),
        equivalent_diameter_mm: (4.0 * area / std::f64::consts::PI).sqrt(),
    })
}

fn min_max(it: impl Iterator<Item = usize>) -> (usize, usize) {
    it.fold((usize::MAX, 0), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Centroid in mm (frame axis, beam axis).
pub fn centroid_mm(pixels: &[(usize, usize)], calib: &AxisCalib) -> (f64, f64) {
    let n = pixels.len() as f64;
    let f = pixels.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let b = pixels.iter().map(|p| p.1 as f64).sum::<f64>() / n;
    (f * calib.scan_step_mm as f64, b * calib.beam_pitch_mm as f64)
}

pub fn in_plane_distance(pred: &[(usize, usize)], reference: &[(usize, usize)], calib: &AxisCalib) -> f64 {
    let (a, b) = (centroid_mm(pred, calib), centroid_mm(reference, calib));
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Mean depth of the first contiguous flagged run in the component's
/// centroid column (or its nearest pixel when the centroid falls outside).
pub fn column_depth(mask: &ScanVolume, pixels: &[(usize, usize)]) -> Result<Option<f64>> {
    if pixels.is_empty() {
        return Err(Error::arg("pixels", "empty component"));
    }
    let n = pixels.len() as f64;
    let cf = pixels.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let cb = pixels.iter().map(|p| p.1 as f64).sum::<f64>() / n;
    let &(f, b) = pixels
        .iter()
        .min_by(|x, y| {
            let dx = (x.0 as f64 - cf).powi(2) + (x.1 as f64 - cb).powi(2);
            let dy = (y.0 as f64 - cf).powi(2) + (y.1 as f64 - cb).powi(2);
            dx.total_cmp(&dy).then(x.cmp(y))
        })
        .unwrap();
    let calib = mask.calib();
    let mut run = Vec::new();
    for t in 0..mask.n_time() {
        if mask.get(f, t, b) != 0.0 {
            run.push(calib.depth_mm(t as f64));
        } else if !run.is_empty() {
            break;
        }
    }
    Ok((!run.is_empty()).then(|| run.iter().sum::<f64>() / run.len() as f64))
}

/// Flags set anywhere along the time axis.
pub fn project_mask(mask: &ScanVolume) -> Result<Grid<bool>> {
    if mask.kind() != VolumeKind::Mask {
        return Err(Error::arg("mask", "expected a mask volume"));
    }
    let (nf, nt, nb) = mask.dims();
    let mut g = Grid::filled(nf, nb, false);
    for f in 0..nf {
        for t in 0..nt {
            for b in 0..nb {
                if mask.get(f, t, b) != 0.0 {
                    g.set(f, b, true);
                }
            }
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageDetection {
    pub stage: String,
    pub tp: usize,
    pub fp: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DefectEval {
    pub id: usize,
    pub shape: DefectShape,
    pub detected: bool,
    pub true_width_mm: f64,
    pub measured_width_mm: Option<f64>,
    pub equivalent_diameter_mm: Option<f64>,
    pub sizing_error_mm: Option<f64>,
    pub in_plane_mm: Option<f64>,
    pub true_depth_mm: f64,
    pub measured_depth_mm: Option<f64>,
    pub depth_error_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStat {
    /// True width of the group; `None` for the all-defects row.
    pub width_mm: Option<f64>,
    pub n: usize,
    pub mae_mm: f64,
    pub std_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub stages: Vec<StageDetection>,
    pub defects: Vec<DefectEval>,
    pub groups: Vec<GroupStat>,
    pub overall: GroupStat,
}

impl EvalReport {
    pub fn final_stage(&self) -> &StageDetection {
        self.stages.last().expect("report has at least one stage")
    }

    /// (measured, true) widths of detected defects.
    pub fn width_pairs(&self) -> Vec<(f64, f64)> {
        self.defects
            .iter()
            .filter_map(|d| d.measured_width_mm.map(|m| (m, d.true_width_mm)))
            .collect()
    }
}

/// Mean and population standard deviation of absolute errors.
pub fn mae_std(errors: &[f64]) -> (f64, f64) {
    if errors.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = errors.len() as f64;
    let abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    let mean = abs.iter().sum::<f64>() / n;
    let var = abs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Half width of the depth gate used for the 6 dB reference C-scan.
pub const REFERENCE_GATE_MM: f64 = 0.5;

/// Scores every stage's mask and measures each defect on the last one.
///
/// `envelope`, when given, supplies the amplitude C-scan for the 6 dB
/// reference masks used by the in-plane localization.
pub fn evaluate(stages: &[(&str, &ScanVolume)], truth: &[DefectRecord], envelope: Option<&ScanVolume>) -> Result<EvalReport> {
    let (_, last) = *stages.last().ok_or_else(|| Error::arg("stages", "no masks to evaluate"))?;
    let (nf, _, nb) = last.dims();
    let calib = *last.calib();
    let footprints: Vec<Vec<(usize, usize)>> = truth.iter().map(|d| d.footprint(nf, nb, &calib)).collect();
    let mut stage_rows = Vec::new();
    for &(name, m) in stages {
        if (m.n_frames(), m.n_beams()) != (nf, nb) {
            return Err(Error::arg("stages", format!("stage {name} has a different plan view")));
        }
        let det = detection_against(&project_mask(m)?, &footprints)?;
        stage_rows.push(StageDetection {
            stage: name.to_string(),
            tp: det.tp,
            fp: det.fp,
            accuracy: det.accuracy,
        });
    }
    if let Some(e) = envelope {
        if (e.n_frames(), e.n_beams()) != (nf, nb) {
            return Err(Error::arg("envelope", "plan view differs from the mask"));
        }
    }

    let plan = project_mask(last)?;
    let lab = label_components(&plan, Connectivity::Eight);
    let comps = lab.pixels();
    let mut defects = Vec::new();
    for (d, fp) in truth.iter().zip(&footprints) {
        let mut overlap = vec![0usize; lab.count + 1];
        for &(f, b) in fp {
            overlap[lab.labels.get(f, b) as usize] += 1;
        }
        let truth_c = centroid_mm(fp, &calib);
        let best = (1..=lab.count).filter(|&l| overlap[l] > 0).min_by(|&x, &y| {
            let dist = |l: usize| {
                let c = centroid_mm(&comps[l], &calib);
                (c.0 - truth_c.0).powi(2) + (c.1 - truth_c.1).powi(2)
            };
            overlap[y].cmp(&overlap[x]).then(dist(x).total_cmp(&dist(y)))
        });
        let mut row = DefectEval {
            id: d.id,
            shape: d.shape,
            detected: best.is_some(),
            true_width_mm: d.width_mm,
            measured_width_mm: None,
            equivalent_diameter_mm: None,
            sizing_error_mm: None,
            in_plane_mm: None,
            true_depth_mm: d.depth_mm,
            measured_depth_mm: None,
            depth_error_mm: None,
        };
        if let Some(l) = best {
            let px = &comps[l];
            let w = defect_width(px, &calib)?;
            row.measured_width_mm = Some(w.extent_mm);
            row.equivalent_diameter_mm = Some(w.equivalent_diameter_mm);
            row.sizing_error_mm = Some(w.extent_mm - d.width_mm);
            if let Some(e) = envelope {
                let ec = e.calib();
                let t = ec.time_of_depth(d.depth_mm);
                let half = ec.time_of_depth(d.depth_mm + REFERENCE_GATE_MM) - t;
                let lo = (t - half).floor().max(0.0) as usize;
                let hi = ((t + half).ceil() as usize + 1).min(e.n_time());
                let field = cscan_amplitude(e, (lo, hi))?;
                let seed = (d.center_frame, d.center_beam);
                if field.get(seed.0, seed.1) > 0.0 {
                    let ref_mask = six_db_mask(&field, seed)?;
                    let ref_px: Vec<(usize, usize)> = (0..nf)
                        .flat_map(|f| (0..nb).map(move |b| (f, b)))
                        .filter(|&(f, b)| ref_mask.get(f, b))
                        .collect();
                    row.in_plane_mm = Some(in_plane_distance(px, &ref_px, &calib));
                }
            }
            if d.shape == DefectShape::Circle {
                if let Some(depth) = column_depth(last, px)? {
                    row.measured_depth_mm = Some(depth);
                    row.depth_error_mm = Some(depth - d.depth_mm);
                }
            }
        }
        defects.push(row);
    }

    let mut widths: Vec<f64> = truth.iter().map(|d| d.width_mm).collect();
    widths.sort_by(f64::total_cmp);
    widths.dedup();
    let group = |w: Option<f64>| {
        let errs: Vec<f64> = defects
            .iter()
            .filter(|d| w.is_none_or(|w| d.true_width_mm == w))
            .filter_map(|d| d.sizing_error_mm)
            .collect();
        let (mae, std) = mae_std(&errs);
        GroupStat {
            width_mm: w,
            n: errs.len(),
            mae_mm: mae,
            std_mm: std,
        }
    };
    let groups = widths.iter().map(|&w| group(Some(w))).collect();
    let overall = group(None);
    Ok(EvalReport {
        stages: stage_rows,
        defects,
        groups,
        overall,
    })
}

/// One evaluated run for the sizing table.
#[derive(Debug, Clone, PartialEq)]
pub struct SizingRun {
    pub sample: String,
    pub confidence: f64,
    pub report: EvalReport,
}

/// CSV with one row per (sample, width group, confidence), the all-defects
/// group labelled `mean`.
pub fn sizing_table(runs: &[SizingRun]) -> String {
    let mut s = String::from("sample,width_mm,confidence,n,mae_mm,std_mm\n");
    for r in runs {
        for g in r.report.groups.iter().chain(std::iter::once(&r.report.overall)) {
            let w = g.width_mm.map_or("mean".to_string(), |w| w.to_string());
            let _ = writeln!(s, "{},{},{},{},{},{}", r.sample, w, r.confidence, g.n, g.mae_mm, g.std_mm);
        }
    }
    s
}

pub fn detection_table(stages: &[StageDetection]) -> String {
    let mut s = String::from("stage,tp,fp,accuracy\n");
    for st in stages {
        let _ = writeln!(s, "{},{},{},{:.2}", st.stage, st.tp, st.fp, st.accuracy);
    }
    s
}

pub fn localization_table(defects: &[DefectEval]) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    let mut s = String::from("id,shape,detected,in_plane_mm,true_depth_mm,measured_depth_mm,depth_error_mm\n");
    for d in defects {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            d.id,
            d.shape.as_str(),
            d.detected,
            opt(d.in_plane_mm),
            d.true_depth_mm,
            opt(d.measured_depth_mm),
            opt(d.depth_error_mm)
        );
    }
    s
}

/// Mean signed oversize, `mean(measured − true)`.
pub fn calibration_offset(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::arg("pairs", "no detected defects to calibrate on"));
    }
    Ok(pairs.iter().map(|(m, t)| m - t).sum::<f64>() / pairs.len() as f64)
}

/// MAE after subtracting `offset` from every measured width.
pub fn corrected_mae(offset: f64, pairs: &[(f64, f64)]) -> f64 {
    let errs: Vec<f64> = pairs.iter().map(|(m, t)| m - offset - t).collect();
    mae_std(&errs).0
}
