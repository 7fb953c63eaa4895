//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::VecDeque;

use rand::Rng;
use sweepseg::morph::Connectivity;
use sweepseg::net::{NetConfig, ProbNet};
use sweepseg::volume::Grid;
use sweepseg::weibull::WeibullParams;

/// Trapezoid rule on `[lo, hi]` with `n` intervals.
pub fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let inner: f64 = (1..n).map(|i| f(lo + i as f64 * h)).sum();
    h * (0.5 * (f(lo) + f(hi)) + inner)
}

/// `∫₀^∞ g(x) dx` for integrands with Weibull-like tails at scale `a`,
/// shape `b`, computed in `z = ln(x/a)` where the integrand decays
/// double-exponentially on the right and exponentially on the left.
pub fn weibull_integral(g: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (lo, hi) = (-60.0 / b, 5.0 / b);
    trapezoid(
        |z| {
            let x = a * z.exp();
            g(x) * x
        },
        lo,
        hi,
        40_000,
    )
}

/// Log density from the unnormalized kernel and a numerically integrated normalizer.
pub fn quadrature_log_pdf(a: f64, b: f64, x: f64) -> f64 {
    let kernel = |x: f64| ((b - 1.0) * x.ln() - (x / a).powf(b)).exp();
    let z = weibull_integral(kernel, a, b);
    (b - 1.0) * x.ln() - (x / a).powf(b) - z.ln()
}

/// Numerically integrated mean of the library density.
pub fn quadrature_mean(p: &WeibullParams) -> f64 {
    weibull_integral(|x| x * p.log_pdf(x).unwrap().exp(), p.scale, p.shape)
}

fn neighbours(conn: Connectivity) -> &'static [(isize, isize)] {
    match conn {
        Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
        Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)],
    }
}

/// Breadth-first flood fill, labels numbered by first pixel in raster order.
pub fn flood_labels(g: &Grid<bool>, conn: Connectivity) -> (Vec<u32>, usize) {
    let mut labels = vec![0u32; g.rows * g.cols];
    let mut next = 0u32;
    for start in 0..labels.len() {
        if !g.data[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (r, c) = ((i / g.cols) as isize, (i % g.cols) as isize);
            for &(dr, dc) in neighbours(conn) {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= g.rows as isize || nc >= g.cols as isize {
                    continue;
                }
                let j = nr as usize * g.cols + nc as usize;
                if g.data[j] && labels[j] == 0 {
                    labels[j] = next;
                    queue.push_back(j);
                }
            }
        }
    }
    (labels, next as usize)
}

/// Keeps pixels whose flood-filled component has at least `filter` pixels.
pub fn flood_opening(g: &Grid<bool>, filter: usize, conn: Connectivity) -> Vec<bool> {
    let (labels, n) = flood_labels(g, conn);
    let mut sizes = vec![0usize; n + 1];
    for &l in &labels {
        sizes[l as usize] += 1;
    }
    labels.iter().map(|&l| l != 0 && sizes[l as usize] >= filter).collect()
}

pub fn random_field(rng: &mut impl Rng, rows: usize, cols: usize, density: f64) -> Grid<bool> {
    Grid {
        rows,
        cols,
        data: (0..rows * cols).map(|_| rng.random_bool(density)).collect(),
    }
}

/// Two blocks, two heads: small enough for finite differences on every parameter.
pub fn tiny_net() -> NetConfig {
    NetConfig {
        window: 8,
        heads: vec![3, 5],
        channels: vec![2, 3],
        fc: vec![6, 4],
        leaky_slope: 0.01,
        mean_scaling: true,
    }
}

/// Worst per-parameter relative error of the analytic gradient against
/// central differences, `|g − fd| / max(|g| + |fd|, 1e-5·max(1, |L|))`.
/// The floor sits above the differencing roundoff, about `1e-16·|L|/h`, so
/// gradients that vanish to that level are compared in absolute terms.
pub fn gradient_check(seed: u64, rng: &mut impl Rng) -> f64 {
    let net = ProbNet::new(tiny_net(), seed).unwrap();
    let rows = 5;
    let w = net.window();
    let inputs: Vec<f64> = (0..rows * w).map(|_| rng.random_range(0.05..1.0)).collect();
    let targets: Vec<f64> = (0..rows).map(|_| rng.random_range(0.05..1.0)).collect();
    let (loss, grad) = net.loss_and_grad(&inputs, &targets).unwrap();
    let floor = 1e-5 * loss.abs().max(1.0);
    let mut worst: f64 = 0.0;
    for k in 0..net.param_count() {
        let p = net.params()[k];
        let h = 1e-6 * p.abs().max(1.0);
        let eval = |v: f64| {
            let mut n = net.clone();
            n.params_mut()[k] = v;
            n.loss(&inputs, &targets).unwrap()
        };
        let fd = (eval(p + h) - eval(p - h)) / (2.0 * h);
        let rel = (grad[k] - fd).abs() / (grad[k].abs() + fd.abs()).max(floor);
        worst = worst.max(rel);
    }
    worst
}
