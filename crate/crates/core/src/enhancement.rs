//! Foreground segmentation and the enhancement chain
//! (STFT filtering, Gabor smoothing, SMQT normalization).

use std::collections::{HashMap, VecDeque};
use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{GrayImage, Mask};
use crate::stft::{stft_analyze, StftParams, TextureMaps};

#[derive(Debug, Clone, PartialEq)]
pub struct EnhancementParams {
    /// Segmentation block side, pixels.
    pub block_size: usize,
    /// A block is foreground when its variance reaches this fraction of the
    /// mean block variance.
    pub variance_threshold_ratio: f64,
    pub smqt_levels: u8,
    pub gabor_kernel_radius: usize,
    pub gabor_sigma: f64,
}

impl Default for EnhancementParams {
    fn default() -> Self {
        Self {
            block_size: 16,
            variance_threshold_ratio: 0.1,
            smqt_levels: 8,
            gabor_kernel_radius: 11,
            gabor_sigma: 4.0,
        }
    }
}

impl EnhancementParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if self.block_size < 4 {
            return bad("enhancement: block_size must be >= 4");
        }
        if !(self.variance_threshold_ratio > 0.0 && self.variance_threshold_ratio < 1.0) {
            return bad("enhancement: variance_threshold_ratio must be in (0, 1)");
        }
        if !(1..=8).contains(&self.smqt_levels) {
            return bad("enhancement: smqt_levels must be in 1..=8");
        }
        if !(self.gabor_sigma > 0.0) {
            return bad("enhancement: gabor_sigma must be positive");
        }
        Ok(())
    }
}

/// Per-block intensity variance over the full blocks of the image, row-major
/// on the block grid. Partial border blocks are not included.
pub fn block_variances(img: &GrayImage, block: usize) -> (usize, usize, Vec<f64>) {
    let bw = img.width() as usize / block;
    let bh = img.height() as usize / block;
    let mut out = Vec::with_capacity(bw * bh);
    let n = (block * block) as f64;
    for by in 0..bh {
        for bx in 0..bw {
            let (mut s, mut s2) = (0.0, 0.0);
            for y in by * block..(by + 1) * block {
                for x in bx * block..(bx + 1) * block {
                    let v = img.get(x as u32, y as u32) as f64;
                    s += v;
                    s2 += v * v;
                }
            }
            let mean = s / n;
            out.push((s2 / n - mean * mean).max(0.0));
        }
    }
    (bw, bh, out)
}

/// Boolean grid with 3x3 morphology; out-of-grid neighbours are ignored.
#[derive(Debug, Clone, PartialEq)]
struct Grid {
    w: usize,
    h: usize,
    cells: Vec<bool>,
}

impl Grid {
    fn neighbourhood(&self, x: usize, y: usize) -> impl Iterator<Item = bool> + '_ {
        let xs = x.saturating_sub(1)..=(x + 1).min(self.w - 1);
        let ys = y.saturating_sub(1)..=(y + 1).min(self.h - 1);
        ys.flat_map(move |yy| xs.clone().map(move |xx| self.cells[yy * self.w + xx]))
    }

    fn dilate(&self) -> Grid {
        let cells = (0..self.w * self.h)
            .map(|i| self.neighbourhood(i % self.w, i / self.w).any(|b| b))
            .collect();
        Grid { cells, ..*self }
    }

    fn erode(&self) -> Grid {
        let cells = (0..self.w * self.h)
            .map(|i| self.neighbourhood(i % self.w, i / self.w).all(|b| b))
            .collect();
        Grid { cells, ..*self }
    }

    /// 4-connected components of cells equal to `value`, as index lists in
    /// raster order of their first cell.
    fn components(&self, value: bool) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.cells.len()];
        let mut comps = Vec::new();
        for start in 0..self.cells.len() {
            if seen[start] || self.cells[start] != value {
                continue;
            }
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(i) = queue.pop_front() {
                comp.push(i);
                let (x, y) = (i % self.w, i / self.w);
                let mut push = |j: usize| {
                    if !seen[j] && self.cells[j] == value {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                };
                if x > 0 {
                    push(i - 1);
                }
                if x + 1 < self.w {
                    push(i + 1);
                }
                if y > 0 {
                    push(i - self.w);
                }
                if y + 1 < self.h {
                    push(i + self.w);
                }
            }
            comps.push(comp);
        }
        comps
    }

    fn fill_holes(&mut self) {
        for comp in self.components(false) {
            let touches_border = comp.iter().any(|&i| {
                let (x, y) = (i % self.w, i / self.w);
                x == 0 || y == 0 || x + 1 == self.w || y + 1 == self.h
            });
            if !touches_border {
                for i in comp {
                    self.cells[i] = true;
                }
            }
        }
    }

    fn keep_largest(&mut self) {
        let comps = self.components(true);
        let Some(best) = comps
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.len().cmp(&b.len()).then(ib.cmp(ia)))
            .map(|(i, _)| i)
        else {
            return;
        };
        self.cells.iter_mut().for_each(|c| *c = false);
        for &i in &comps[best] {
            self.cells[i] = true;
        }
    }
}

/// Block-variance segmentation followed by 3x3 closing and opening on the
/// block grid, hole filling and largest-component selection.
pub fn segment(img: &GrayImage, p: &EnhancementParams) -> Result<Mask> {
    p.validate()?;
    let bs = p.block_size;
    let (bw, bh, vars) = block_variances(img, bs);
    let (w, h) = img.dims();
    if vars.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mean = vars.iter().sum::<f64>() / vars.len() as f64;
    let thr = p.variance_threshold_ratio * mean;
    let grid = Grid {
        w: bw,
        h: bh,
        cells: vars.iter().map(|&v| v > 0.0 && v >= thr).collect(),
    };
    let mut grid = grid.dilate().erode().erode().dilate();
    grid.fill_holes();
    grid.keep_largest();

    let mut mask = Mask::empty(w, h);
    for by in 0..bh {
        for bx in 0..bw {
            if grid.cells[by * bw + bx] {
                for y in by * bs..(by + 1) * bs {
                    for x in bx * bs..(bx + 1) * bs {
                        mask.set(x as u32, y as u32, true);
                    }
                }
            }
        }
    }
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(mask)
}

/// Zero-mean even-symmetric Gabor kernel, unit response to its own tuned
/// sinusoid. `ridge_angle` follows the on-screen counter-clockwise convention.
pub fn gabor_kernel(ridge_angle: f64, frequency: f64, sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as i64;
    let side = 2 * radius + 1;
    let (nx, ny) = (ridge_angle.sin(), ridge_angle.cos());
    let mut envelope = Vec::with_capacity(side * side);
    let mut carrier = Vec::with_capacity(side * side);
    for dy in -r..=r {
        for dx in -r..=r {
            let (dx, dy) = (dx as f64, dy as f64);
            envelope.push((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp());
            carrier.push((2.0 * PI * frequency * (dx * nx + dy * ny)).cos());
        }
    }
    let mut k: Vec<f64> = envelope.iter().zip(&carrier).map(|(e, c)| e * c).collect();
    let dc = k.iter().sum::<f64>() / k.len() as f64;
    k.iter_mut().for_each(|v| *v -= dc);
    let gain: f64 = k.iter().zip(&carrier).map(|(v, c)| v * c).sum();
    if gain.abs() > 1e-12 {
        k.iter_mut().for_each(|v| *v /= gain);
    }
    k
}

/// Orientation- and frequency-adaptive Gabor filtering driven by the texture
/// maps; output rescaled to 0..=255.
pub fn gabor_enhance(img: &GrayImage, maps: &TextureMaps, p: &EnhancementParams) -> Result<GrayImage> {
    if img.dims() != maps.dims() {
        return Err(Error::DimensionMismatch {
            expected: img.dims(),
            actual: maps.dims(),
        });
    }
    let (w, h) = (img.width() as usize, img.height() as usize);
    let radius = p.gabor_kernel_radius;
    let side = 2 * radius + 1;

    // The maps are piecewise constant, so there are few distinct kernels.
    let mut keys = Vec::with_capacity(w * h);
    let mut bank: HashMap<(u32, u32), usize> = HashMap::new();
    let mut kernels: Vec<Vec<f64>> = Vec::new();
    for y in 0..h as u32 {
        for x in 0..w as u32 {
            let key = (maps.orientation.get(x, y).to_bits(), maps.frequency.get(x, y).to_bits());
            let id = *bank.entry(key).or_insert_with(|| {
                kernels.push(gabor_kernel(
                    maps.ridge_angle(x, y),
                    maps.decoded_frequency(x, y),
                    p.gabor_sigma,
                    radius,
                ));
                kernels.len() - 1
            });
            keys.push(id);
        }
    }

    let r = radius as i64;
    let out: Vec<f64> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let keys = &keys;
            let kernels = &kernels;
            (0..w).map(move |x| {
                let k = &kernels[keys[y * w + x]];
                let mut acc = 0.0;
                for dy in -r..=r {
                    let yy = (y as i64 + dy).clamp(0, h as i64 - 1) as u32;
                    let row = ((dy + r) as usize) * side;
                    for dx in -r..=r {
                        let xx = (x as i64 + dx).clamp(0, w as i64 - 1) as u32;
                        acc += k[row + (dx + r) as usize] * img.get(xx, yy) as f64;
                    }
                }
                acc
            })
        })
        .collect();
    Ok(GrayImage::from_f64_rescaled(img.width(), img.height(), &out))
}

/// Successive Mean Quantization Transform over the whole image.
pub fn smqt_normalize(img: &GrayImage, levels: u8) -> Result<GrayImage> {
    if !(1..=8).contains(&levels) {
        return Err(Error::InvalidParams(format!(
            "smqt levels must be in 1..=8, got {levels}"
        )));
    }
    let mut hist = [0u64; 256];
    for &p in img.pixels() {
        hist[p as usize] += 1;
    }
    let present: Vec<u8> = (0..=255u8).filter(|&v| hist[v as usize] > 0).collect();
    let mut codes = [0u32; 256];
    smqt_split(&present, &hist, levels, 0, &mut codes);
    let max_code = (1u32 << levels) - 1;
    let lut: Vec<u8> = codes
        .iter()
        .map(|&c| ((c as f64) * 255.0 / max_code as f64).round() as u8)
        .collect();
    GrayImage::new(
        img.width(),
        img.height(),
        img.pixels().iter().map(|&p| lut[p as usize]).collect(),
    )
}

fn smqt_split(values: &[u8], hist: &[u64; 256], depth: u8, code: u32, codes: &mut [u32; 256]) {
    if depth == 0 {
        for &v in values {
            codes[v as usize] = code;
        }
        return;
    }
    if values.is_empty() {
        return;
    }
    let (mut n, mut s) = (0u64, 0u64);
    for &v in values {
        n += hist[v as usize];
        s += hist[v as usize] * v as u64;
    }
    let mean = s as f64 / n as f64;
    let split = values.partition_point(|&v| (v as f64) <= mean);
    smqt_split(&values[..split], hist, depth - 1, code << 1, codes);
    smqt_split(&values[split..], hist, depth - 1, (code << 1) | 1, codes);
}

/// segment -> STFT analysis/enhancement -> Gabor -> SMQT.
pub fn enhance_pipeline(img: &GrayImage, p: &EnhancementParams, stft: &StftParams) -> Result<(GrayImage, TextureMaps)> {
    let mask = segment(img, p)?;
    let (stft_img, maps) = stft_analyze(img, &mask, stft)?;
    let gabor = gabor_enhance(&stft_img, &maps, p)?;
    let out = smqt_normalize(&gabor, p.smqt_levels)?;
    Ok((out, maps))
}
