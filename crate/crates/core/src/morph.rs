//! Connected-component labeling and per-plane area opening.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{AxisCalib, Grid, ScanVolume, VolumeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[serde(rename = "8")]
    Eight,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            _ => Err(Error::arg("connectivity", format!("{n} is not 4 or 8"))),
        }
    }

    /// Already-visited neighbours in raster order.
    fn back_neighbours(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (0, -1)],
            Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1)],
        }
    }
}

/// Component labels: 0 is background, components are numbered from 1 in
/// order of their first pixel in raster order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelField {
    pub labels: Grid<u32>,
    pub count: usize,
}

impl LabelField {
    /// Pixel count per label, index 0 unused.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.count + 1];
        for &l in &self.labels.data {
            s[l as usize] += 1;
        }
        s
    }

    /// Pixel coordinates `(row, col)` for each label, index 0 unused.
    pub fn pixels(&self) -> Vec<Vec<(usize, usize)>> {
        let mut out = vec![Vec::new(); self.count + 1];
        let cols = self.labels.cols;
        for (i, &l) in self.labels.data.iter().enumerate() {
            if l != 0 {
                out[l as usize].push((i / cols, i % cols));
            }
        }
        out
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

/// Two-pass union-find labeling.
pub fn label_components(field: &Grid<bool>, conn: Connectivity) -> LabelField {
    let (rows, cols) = (field.rows, field.cols);
    let mut provisional = vec![0u32; rows * cols];
    let mut parent: Vec<u32> = vec![0];
    for r in 0..rows {
        for c in 0..cols {
            if !field.get(r, c) {
                continue;
            }
            let mut label = 0u32;
            for &(dr, dc) in conn.back_neighbours() {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nc >= cols as isize {
                    continue;
                }
                let n = provisional[nr as usize * cols + nc as usize];
                if n == 0 {
                    continue;
                }
                if label == 0 {
                    label = find(&mut parent, n);
                } else {
                    let (a, b) = (find(&mut parent, label), find(&mut parent, n));
                    if a != b {
                        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                        parent[hi as usize] = lo;
                        label = lo;
                    }
                }
            }
            if label == 0 {
                label = parent.len() as u32;
                parent.push(label);
            }
            provisional[r * cols + c] = label;
        }
    }
    let mut remap = vec![0u32; parent.len()];
    let mut next = 0u32;
    let mut labels = Grid::filled(rows, cols, 0u32);
    for (i, &p) in provisional.iter().enumerate() {
        if p == 0 {
            continue;
        }
        let root = find(&mut parent, p) as usize;
        if remap[root] == 0 {
            next += 1;
            remap[root] = next;
        }
        labels.data[i] = remap[root];
    }
    LabelField {
        labels,
        count: next as usize,
    }
}

/// Removes components with fewer than `filter` pixels.
pub fn area_opening_2d(field: &Grid<bool>, filter: usize, conn: Connectivity) -> Result<Grid<bool>> {
    if filter < 1 {
        return Err(Error::arg("filter", "must be >= 1"));
    }
    let lab = label_components(field, conn);
    let sizes = lab.sizes();
    let data = lab
        .labels
        .data
        .iter()
        .map(|&l| l != 0 && sizes[l as usize] >= filter)
        .collect();
    Ok(Grid {
        rows: field.rows,
        cols: field.cols,
        data,
    })
}

/// Area opening applied independently to every depth plane (frames × beams at fixed time).
pub fn area_opening(vol: &ScanVolume, filter: usize, conn: Connectivity) -> Result<ScanVolume> {
    if vol.kind() != VolumeKind::Mask {
        return Err(Error::arg("vol", "area opening needs a mask volume"));
    }
    if filter < 1 {
        return Err(Error::arg("filter", "must be >= 1"));
    }
    let (nf, nt, nb) = vol.dims();
    let mut out = vec![0f32; vol.data().len()];
    let mut plane = Grid::filled(nf, nb, false);
    for t in 0..nt {
        for f in 0..nf {
            for b in 0..nb {
                plane.set(f, b, vol.get(f, t, b) != 0.0);
            }
        }
        if plane.count() == 0 {
            continue;
        }
        let kept = area_opening_2d(&plane, filter, conn)?;
        for f in 0..nf {
            for b in 0..nb {
                if kept.get(f, b) {
                    out[vol.index(f, t, b)] = 1.0;
                }
            }
        }
    }
    vol.with_data(VolumeKind::Mask, out)
}

/// Pixel-count filter equivalent to a disc of diameter `min_defect_mm`.
pub fn filter_from_min_size(min_defect_mm: f64, calib: &AxisCalib) -> Result<usize> {
    if !(min_defect_mm > 0.0 && min_defect_mm.is_finite()) {
        return Err(Error::arg("min_defect_mm", format!("{min_defect_mm} must be positive")));
    }
    let area = calib.pixel_area_mm2();
    if !(area > 0.0 && area.is_finite()) {
        return Err(Error::arg("calib", "scan step and beam pitch must be positive"));
    }
    let r = min_defect_mm / 2.0;
    Ok((std::f64::consts::PI * r * r / area).floor() as usize)
}
