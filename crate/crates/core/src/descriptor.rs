//! Cylinder construction for the minutia-only and texture descriptors.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::stft::{wrap_angle, TextureMaps};
use crate::template::{Cylinder, CylinderParams, EmptyCellValue, FeatureKind, Minutia, Template};

/// 1-based cell coordinates: `i`, `j` across the base, `k` the section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellIndex {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

impl CellIndex {
    pub fn new(i: usize, j: usize, k: usize, p: &CylinderParams) -> Result<Self> {
        if !(1..=p.ns).contains(&i) || !(1..=p.ns).contains(&j) || !(1..=p.nd).contains(&k) {
            return Err(Error::InvalidParams(format!(
                "cell ({i}, {j}, {k}) outside {}x{}x{}",
                p.ns, p.ns, p.nd
            )));
        }
        Ok(Self { i, j, k })
    }

    pub fn linear(&self, p: &CylinderParams) -> usize {
        (self.k - 1) * p.ns * p.ns + (self.j - 1) * p.ns + (self.i - 1)
    }

    pub fn from_linear(idx: usize, p: &CylinderParams) -> Self {
        let per_section = p.ns * p.ns;
        Self {
            i: idx % p.ns + 1,
            j: idx % per_section / p.ns + 1,
            k: idx / per_section + 1,
        }
    }
}

/// Angle associated with section `k`.
pub fn cell_angle(k: usize, p: &CylinderParams) -> Result<f64> {
    if !(1..=p.nd).contains(&k) {
        return Err(Error::InvalidParams(format!("section {k} outside 1..={}", p.nd)));
    }
    Ok(section_angle(k, p))
}

#[inline]
fn section_angle(k: usize, p: &CylinderParams) -> f64 {
    -PI + (k as f64 - 0.5) * p.delta_d()
}

/// Centre of cell `(i, j)` of the cylinder around `m`.
pub fn cell_center(m: &Minutia, i: usize, j: usize, p: &CylinderParams) -> (f64, f64) {
    let half = (p.ns as f64 + 1.0) / 2.0;
    let di = i as f64 - half;
    let dj = j as f64 - half;
    let (s, c) = m.theta.sin_cos();
    let ds = p.delta_s();
    (m.x + ds * (c * di + s * dj), m.y + ds * (-s * di + c * dj))
}

/// Difference of two angles folded into [-pi, pi).
#[inline]
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = a - b;
    let r = if d < -PI {
        2.0 * PI + d
    } else if d >= PI {
        d - 2.0 * PI
    } else {
        d
    };
    if (-PI..PI).contains(&r) {
        r
    } else {
        wrap_angle(d)
    }
}

#[inline]
pub fn sigmoid(v: f64, mu: f64, tau: f64) -> f64 {
    1.0 / (1.0 + (-tau * (v - mu)).exp())
}

/// Normalized Gaussian of the spatial distance.
#[inline]
pub fn gaussian_spatial(t: f64, sigma: f64) -> f64 {
    (-(t * t) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * PI).sqrt())
}

pub fn spatial_contribution(m_t: &Minutia, cell_pt: (f64, f64), p: &CylinderParams) -> f64 {
    gaussian_spatial(m_t.distance(cell_pt.0, cell_pt.1), p.sigma_s)
}

/// Mass of a zero-mean Gaussian over the sector of width `delta` centred on `x`.
#[inline]
pub fn gaussian_sector(x: f64, sigma: f64, delta: f64) -> f64 {
    let s = sigma * std::f64::consts::SQRT_2;
    0.5 * (libm::erf((x + delta / 2.0) / s) - libm::erf((x - delta / 2.0) / s))
}

pub fn directional_contribution(alpha: f64, d_phik: f64, p: &CylinderParams) -> f64 {
    gaussian_sector(angle_diff(d_phik, alpha), p.sigma_d, p.delta_d())
}

/// The angle the directional Gaussian consumes for one cell/neighbour pair.
///
/// Kinds O, F and E need the neighbour `m_t`; the cell-centred kinds read the
/// map at `cell_pt` and return `None` when that point is off the raster.
pub fn angular_value(
    kind: FeatureKind,
    m: &Minutia,
    m_t: Option<&Minutia>,
    cell_pt: (f64, f64),
    maps: &TextureMaps,
) -> Option<f64> {
    let at = |map: &crate::image::FloatMap, q: &Minutia| map.sample_clamped(q.x, q.y) as f64;
    match kind {
        FeatureKind::O => m_t.map(|t| angle_diff(m.theta, t.theta)),
        FeatureKind::F => m_t.map(|t| angle_diff(at(&maps.frequency, m), at(&maps.frequency, t))),
        FeatureKind::E => m_t.map(|t| angle_diff(at(&maps.energy, m), at(&maps.energy, t))),
        FeatureKind::CO => {
            let cell = maps.orientation.sample(cell_pt.0, cell_pt.1)? as f64;
            Some(angle_diff(wrap_angle(2.0 * m.theta), cell))
        }
        FeatureKind::CF => {
            let cell = maps.frequency.sample(cell_pt.0, cell_pt.1)? as f64;
            Some(angle_diff(at(&maps.frequency, m), cell))
        }
        FeatureKind::CE => {
            let cell = maps.energy.sample(cell_pt.0, cell_pt.1)? as f64;
            Some(angle_diff(at(&maps.energy, m), cell))
        }
    }
}

/// Indices of the minutiae within 3 sigma_S of `cell_pt`, skipping `exclude`.
pub fn cell_neighborhood(
    cell_pt: (f64, f64),
    minutiae: &[Minutia],
    exclude: Option<usize>,
    p: &CylinderParams,
) -> Vec<usize> {
    let r = 3.0 * p.sigma_s;
    minutiae
        .iter()
        .enumerate()
        .filter(|&(t, mt)| Some(t) != exclude && mt.distance(cell_pt.0, cell_pt.1) <= r)
        .map(|(t, _)| t)
        .collect()
}

pub fn cell_validity(cell_pt: (f64, f64), maps: &TextureMaps) -> bool {
    maps.mask.contains_point(cell_pt.0, cell_pt.1)
}

fn empty_value(p: &CylinderParams) -> f64 {
    match p.empty_cell {
        EmptyCellValue::Sigmoid => sigmoid(0.0, p.mu_psi, p.tau_psi),
        EmptyCellValue::Zero => 0.0,
    }
}

/// Value of one cell of the cylinder around `minutiae[m_idx]`.
pub fn cell_value(
    kind: FeatureKind,
    m_idx: usize,
    cell: CellIndex,
    minutiae: &[Minutia],
    maps: &TextureMaps,
    p: &CylinderParams,
) -> f64 {
    let m = &minutiae[m_idx];
    let pt = cell_center(m, cell.i, cell.j, p);
    let d_phik = section_angle(cell.k, p);
    let neighbors = cell_neighborhood(pt, minutiae, Some(m_idx), p);
    if neighbors.is_empty() {
        return empty_value(p);
    }
    let cell_factor = if kind.is_cell_centered() {
        match angular_value(kind, m, None, pt, maps) {
            Some(a) => Some(directional_contribution(a, d_phik, p)),
            None => return empty_value(p),
        }
    } else {
        None
    };
    let mut sum = 0.0;
    for t in neighbors {
        let mt = &minutiae[t];
        let cd = match cell_factor {
            Some(f) => f,
            None => {
                let a = angular_value(kind, m, Some(mt), pt, maps).expect("neighbour supplied");
                directional_contribution(a, d_phik, p)
            }
        };
        sum += spatial_contribution(mt, pt, p) * cd;
    }
    sigmoid(sum, p.mu_psi, p.tau_psi)
}

/// Unquantized cell values and validity flags for every cell, in linear order.
pub fn cylinder_cells(
    kind: FeatureKind,
    m_idx: usize,
    minutiae: &[Minutia],
    maps: &TextureMaps,
    p: &CylinderParams,
) -> (Vec<f64>, Vec<bool>) {
    let m = &minutiae[m_idx];
    let nc = p.n_cells();
    let mut values = vec![0.0; nc];
    let mut valid = vec![false; nc];

    // Only minutiae that can reach some cell centre are worth scanning.
    let reach = (p.ns as f64 - 1.0) / 2.0 * p.delta_s() * std::f64::consts::SQRT_2 + 3.0 * p.sigma_s + 1e-6;
    let candidates: Vec<usize> = (0..minutiae.len())
        .filter(|&t| t != m_idx && minutiae[t].distance(m.x, m.y) <= reach)
        .collect();
    let radius = 3.0 * p.sigma_s;
    let empty = empty_value(p);
    let sections: Vec<f64> = (1..=p.nd).map(|k| section_angle(k, p)).collect();

    let mut spatial: Vec<(usize, f64)> = Vec::new();
    for j in 1..=p.ns {
        for i in 1..=p.ns {
            let pt = cell_center(m, i, j, p);
            let cell_ok = cell_validity(pt, maps);
            spatial.clear();
            for &t in &candidates {
                let mt = &minutiae[t];
                if mt.distance(pt.0, pt.1) <= radius {
                    spatial.push((t, spatial_contribution(mt, pt, p)));
                }
            }
            let cell_angle = if kind.is_cell_centered() {
                angular_value(kind, m, None, pt, maps)
            } else {
                None
            };
            for (k0, &d_phik) in sections.iter().enumerate() {
                let idx = k0 * p.ns * p.ns + (j - 1) * p.ns + (i - 1);
                valid[idx] = cell_ok;
                if !cell_ok {
                    continue;
                }
                if spatial.is_empty() {
                    values[idx] = empty;
                    continue;
                }
                let cell_factor = cell_angle.map(|a| directional_contribution(a, d_phik, p));
                let mut sum = 0.0;
                for &(t, cs) in &spatial {
                    let cd = match cell_factor {
                        Some(f) => f,
                        None => {
                            let a = angular_value(kind, m, Some(&minutiae[t]), pt, maps).expect("neighbour supplied");
                            directional_contribution(a, d_phik, p)
                        }
                    };
                    sum += cs * cd;
                }
                values[idx] = sigmoid(sum, p.mu_psi, p.tau_psi);
            }
        }
    }
    (values, valid)
}

/// Number of other minutiae within `R + 3 sigma_S` of `minutiae[m_idx]`.
pub fn neighbor_count(m_idx: usize, minutiae: &[Minutia], p: &CylinderParams) -> usize {
    let m = &minutiae[m_idx];
    let r = p.radius + 3.0 * p.sigma_s;
    minutiae
        .iter()
        .enumerate()
        .filter(|&(t, mt)| t != m_idx && mt.distance(m.x, m.y) <= r)
        .count()
}

pub fn build_cylinder(
    kind: FeatureKind,
    m_idx: usize,
    minutiae: &[Minutia],
    maps: &TextureMaps,
    p: &CylinderParams,
) -> Cylinder {
    let (values, cell_valid) = cylinder_cells(kind, m_idx, minutiae, maps, p);
    let valid_cells = cell_valid.iter().filter(|&&v| v).count();
    let valid = valid_cells as f64 / p.n_cells() as f64 >= p.min_vc && neighbor_count(m_idx, minutiae, p) >= p.min_m;
    Cylinder {
        center: minutiae[m_idx],
        values: values.into_iter().map(|v| v as f32).collect(),
        cell_valid,
        valid,
    }
}

/// Builds every cylinder (in parallel) and keeps the valid ones in input order.
pub fn build_template(
    kind: FeatureKind,
    minutiae: &[Minutia],
    maps: &TextureMaps,
    p: &CylinderParams,
) -> Result<Template> {
    p.validate()?;
    let cylinders: Vec<Cylinder> = (0..minutiae.len())
        .into_par_iter()
        .map(|idx| build_cylinder(kind, idx, minutiae, maps, p))
        .collect::<Vec<_>>()
        .into_iter()
        .filter(|c| c.valid)
        .collect();
    if cylinders.is_empty() {
        return Err(Error::EmptyTemplate);
    }
    Template::new(kind, p.clone(), maps.dims(), cylinders)
}
