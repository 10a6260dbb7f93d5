//! Shared fixtures and brute-force oracles for the integration tests.
//!
//! The oracles are straight-line rewrites of the formulas with no candidate
//! pruning, no precomputation and no shared helpers from the library.

#![allow(dead_code)]

use std::f64::consts::PI;

use mtcc::image::Mask;
use mtcc::matcher::SimilarityMatrix;
use mtcc::synthetic::{ImpressionParams, SyntheticFinger};
use mtcc::{CylinderParams, FeatureKind, Minutia, Template, TextureMaps};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` minutiae spread over a disc of radius `spread` around `(cx, cy)`.
pub fn random_minutiae(r: &mut ChaCha8Rng, n: usize, cx: f64, cy: f64, spread: f64) -> Vec<Minutia> {
    (0..n)
        .map(|_| {
            let a = r.random_range(0.0..2.0 * PI);
            let d = spread * r.random_range(0.0f64..1.0).sqrt();
            Minutia::new(
                cx + d * a.cos(),
                cy + d * a.sin(),
                r.random_range(0.0..2.0 * PI),
                r.random_range(0.0..1.0),
            )
        })
        .collect()
}

pub fn full_maps(w: u32, h: u32) -> TextureMaps {
    TextureMaps::blank(Mask::full(w, h))
}

pub fn oracle_dphi(a: f64, b: f64) -> f64 {
    let d = a - b;
    if (-PI..PI).contains(&d) {
        d
    } else if d < -PI {
        2.0 * PI + d
    } else {
        -2.0 * PI + d
    }
}

/// Kind-O value of cell (i, j, k) around `ms[m]`, by direct evaluation.
pub fn oracle_cell_o(ms: &[Minutia], m: usize, i: usize, j: usize, k: usize, p: &CylinderParams) -> f64 {
    let c = &ms[m];
    let ds = 2.0 * p.radius / p.ns as f64;
    let dd = 2.0 * PI / p.nd as f64;
    let half = (p.ns as f64 + 1.0) / 2.0;
    let (di, dj) = (i as f64 - half, j as f64 - half);
    let (s, co) = c.theta.sin_cos();
    let px = c.x + ds * (co * di + s * dj);
    let py = c.y + ds * (-s * di + co * dj);
    let phik = -PI + (k as f64 - 0.5) * dd;

    let mut sum = 0.0;
    let mut any = false;
    for (t, mt) in ms.iter().enumerate() {
        if t == m {
            continue;
        }
        let dist = ((mt.x - px).powi(2) + (mt.y - py).powi(2)).sqrt();
        if dist > 3.0 * p.sigma_s {
            continue;
        }
        any = true;
        let gs = (-(dist * dist) / (2.0 * p.sigma_s * p.sigma_s)).exp() / (p.sigma_s * (2.0 * PI).sqrt());
        let alpha = oracle_dphi(c.theta, mt.theta);
        let x = oracle_dphi(phik, alpha);
        let sq = p.sigma_d * std::f64::consts::SQRT_2;
        let gd = 0.5 * (libm::erf((x + dd / 2.0) / sq) - libm::erf((x - dd / 2.0) / sq));
        sum += gs * gd;
    }
    if !any {
        return match p.empty_cell {
            mtcc::template::EmptyCellValue::Sigmoid => 1.0 / (1.0 + (-p.tau_psi * (0.0 - p.mu_psi)).exp()),
            mtcc::template::EmptyCellValue::Zero => 0.0,
        };
    }
    1.0 / (1.0 + (-p.tau_psi * (sum - p.mu_psi)).exp())
}

/// Kind-O LSM by direct evaluation of the matchability test and Euclidean
/// similarity.
pub fn oracle_lsm_o(a: &Template, b: &Template) -> Vec<f64> {
    let p = &a.params;
    let nc = p.n_cells();
    let mut out = Vec::new();
    for ca in &a.cylinders {
        for cb in &b.cylinders {
            let mut joint = 0usize;
            for c in 0..nc {
                if ca.cell_valid[c] && cb.cell_valid[c] {
                    joint += 1;
                }
            }
            let rot = oracle_dphi(ca.center.theta, cb.center.theta).abs();
            if rot > p.delta_theta || (joint as f64 / nc as f64) < p.min_me {
                out.push(0.0);
                continue;
            }
            let (mut d2, mut a2, mut b2) = (0.0, 0.0, 0.0);
            for c in 0..nc {
                if ca.cell_valid[c] && cb.cell_valid[c] {
                    let (x, y) = (ca.values[c] as f64, cb.values[c] as f64);
                    d2 += (x - y) * (x - y);
                    a2 += x * x;
                    b2 += y * y;
                }
            }
            let den = a2.sqrt() + b2.sqrt();
            out.push(if den < 1e-6 { 0.0 } else { 1.0 - d2.sqrt() / den });
        }
    }
    out
}

/// Greedy selection by repeated full scans for the current maximum.
pub fn oracle_lss(m: &SimilarityMatrix, n: usize) -> Vec<(usize, usize, f64)> {
    let mut used_r = vec![false; m.rows()];
    let mut used_c = vec![false; m.cols()];
    let mut out = Vec::new();
    while out.len() < n {
        let mut best: Option<(usize, usize, f64)> = None;
        for (r, &ur) in used_r.iter().enumerate() {
            for (c, &uc) in used_c.iter().enumerate() {
                if ur || uc {
                    continue;
                }
                let v = m.get(r, c);
                if v <= 0.0 {
                    continue;
                }
                // Row-major scan keeps the first of equal values, i.e. the
                // smallest (row, col).
                if best.is_none_or(|(_, _, bv)| v > bv) {
                    best = Some((r, c, v));
                }
            }
        }
        match best {
            Some((r, c, v)) => {
                used_r[r] = true;
                used_c[c] = true;
                out.push((r, c, v));
            }
            None => break,
        }
    }
    out
}

/// Raster used for synthetic impressions.
pub const BENCH_DIMS: (u32, u32) = (360, 400);

pub struct SyntheticSample {
    pub subject: usize,
    pub impression: usize,
    pub image: mtcc::GrayImage,
    pub minutiae: Vec<Minutia>,
}

/// `subjects x impressions` synthetic samples with the default distortions.
pub fn synthetic_dataset(subjects: usize, impressions: usize, seed_base: u64) -> Vec<SyntheticSample> {
    let (w, h) = BENCH_DIMS;
    let mut out = Vec::new();
    for s in 1..=subjects {
        let f = SyntheticFinger::generate(seed_base + s as u64);
        for i in 1..=impressions {
            let imp = f.impression(i as u64, w, h, &ImpressionParams::default());
            out.push(SyntheticSample {
                subject: s,
                impression: i,
                image: imp.image,
                minutiae: imp.minutiae,
            });
        }
    }
    out
}

pub fn texture_kinds() -> [FeatureKind; 5] {
    [
        FeatureKind::F,
        FeatureKind::E,
        FeatureKind::CO,
        FeatureKind::CF,
        FeatureKind::CE,
    ]
}
