//! Short-time Fourier analysis of ridge texture.
//!
//! The image is scanned with overlapping square windows (origins on a
//! `window_size - overlap` stride). Each window is mean-centred, tapered with
//! a raised cosine, zero-padded and transformed. From its power spectrum we
//! read three scalars: the dominant ridge orientation (energy-weighted
//! double-angle average), the dominant ridge frequency (energy-weighted mean
//! radius inside the ridge band) and the log of the total power. Every pixel
//! takes the values of the window whose central stride cell owns it.
//!
//! The same pass produces the contextually filtered image: each window's
//! spectrum is shaped by radial and angular Butterworth filters around its
//! dominant frequency/orientation, root-filtered, inverted and overlap-added.
//!
//! Angle convention: orientations are measured counter-clockwise as seen on
//! screen (pixel `y` grows downward), the same convention as minutia
//! directions. `orientation` stores the doubled ridge angle in [-pi, pi).

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::image::{FloatMap, GrayImage, Mask};

/// `ln` of this value is reported for windows without any AC power.
pub const ENERGY_FLOOR: f64 = 1e-10;

/// In-band power below this leaves a window's frequency undefined.
const MIN_BAND_POWER: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct StftParams {
    pub window_size: usize,
    pub overlap: usize,
    pub fft_size: usize,
    /// Ridge frequency band in cycles/pixel.
    pub freq_band: (f64, f64),
    pub root_exponent: f64,
    /// Butterworth orders (radial, angular).
    pub bandpass_orders: (u32, u32),
    /// Radial pass-band width, cycles/pixel.
    pub radial_bandwidth: f64,
    /// Angular pass-band half width, radians.
    pub angular_bandwidth: f64,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            window_size: 14,
            overlap: 6,
            fft_size: 32,
            freq_band: (1.0 / 25.0, 1.0 / 3.0),
            root_exponent: 0.45,
            bandpass_orders: (2, 2),
            radial_bandwidth: 0.05,
            angular_bandwidth: PI / 8.0,
        }
    }
}

impl StftParams {
    pub fn stride(&self) -> usize {
        self.window_size - self.overlap
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if self.window_size == 0 || self.overlap >= self.window_size {
            return bad("stft: need window_size > overlap >= 0");
        }
        if self.fft_size < self.window_size {
            return bad("stft: fft_size must be >= window_size");
        }
        let (lo, hi) = self.freq_band;
        if !(lo > 0.0 && lo < hi && hi < 0.5) {
            return bad("stft: freq_band must satisfy 0 < min < max < 0.5");
        }
        if !(self.root_exponent >= 0.0) || !(self.radial_bandwidth > 0.0) || !(self.angular_bandwidth > 0.0) {
            return bad("stft: root exponent must be >= 0 and bandwidths > 0");
        }
        if self.bandpass_orders.0 == 0 || self.bandpass_orders.1 == 0 {
            return bad("stft: Butterworth orders must be positive");
        }
        Ok(())
    }
}

/// Per-pixel texture angles derived from the STFT pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureMaps {
    /// Doubled ridge orientation, [-pi, pi).
    pub orientation: FloatMap,
    /// Ridge frequency normalized onto [-pi, pi).
    pub frequency: FloatMap,
    /// Log-energy normalized onto [-pi, pi).
    pub energy: FloatMap,
    pub mask: Mask,
    /// Ridge frequency in cycles/pixel; NaN where no window had in-band energy.
    pub raw_frequency: FloatMap,
    pub raw_energy: FloatMap,
    /// Bounds used to normalize `raw_frequency`.
    pub freq_band: (f64, f64),
    /// Bounds used to normalize `raw_energy`.
    pub energy_bounds: (f64, f64),
}

impl TextureMaps {
    /// Maps with a mask only: every angle is zero. Enough for minutia-only
    /// (kind O) cylinders, which never read the texture maps.
    pub fn blank(mask: Mask) -> Self {
        let (w, h) = mask.dims();
        Self {
            orientation: FloatMap::filled(w, h, 0.0),
            frequency: FloatMap::filled(w, h, 0.0),
            energy: FloatMap::filled(w, h, 0.0),
            raw_frequency: FloatMap::filled(w, h, f32::NAN),
            raw_energy: FloatMap::filled(w, h, 0.0),
            mask,
            freq_band: StftParams::default().freq_band,
            energy_bounds: (0.0, 0.0),
        }
    }

    pub fn dims(&self) -> (u32, u32) {
        self.mask.dims()
    }

    /// Ridge frequency (cycles/pixel) decoded back from the `frequency` angle.
    pub fn decoded_frequency(&self, x: u32, y: u32) -> f64 {
        let (lo, hi) = self.freq_band;
        let a = self.frequency.get(x, y) as f64;
        lo + (a + PI) / (2.0 * PI) * (hi - lo)
    }

    /// Undoubled ridge orientation in [-pi/2, pi/2).
    pub fn ridge_angle(&self, x: u32, y: u32) -> f64 {
        self.orientation.get(x, y) as f64 / 2.0
    }
}

/// Wraps an angle into [-pi, pi).
#[inline]
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

/// Maps `lo..=hi` linearly onto `-pi..=pi`, clamping outside values.
/// NaN entries map to `-pi`.
pub fn normalize_to_angle(raw: &FloatMap, lo: f64, hi: f64) -> Result<FloatMap> {
    if !(hi > lo) {
        return Err(Error::InvalidParams(format!(
            "normalize_to_angle: need hi > lo, got [{lo}, {hi}]"
        )));
    }
    let data = raw
        .data()
        .iter()
        .map(|&v| {
            let v = v as f64;
            if v.is_nan() {
                return -PI as f32;
            }
            let t = (v.clamp(lo, hi) - lo) / (hi - lo);
            (-PI + 2.0 * PI * t) as f32
        })
        .collect();
    FloatMap::new(raw.width(), raw.height(), data)
}

/// Window origins along one axis: `0, stride, 2*stride, ...` until the
/// image is covered. Trailing windows may hang past the border.
pub fn window_origins(len: usize, window: usize, overlap: usize) -> Vec<usize> {
    let stride = window - overlap;
    if len < window {
        return Vec::new();
    }
    let count = (len - window).div_ceil(stride) + 1;
    (0..count).map(|i| i * stride).collect()
}

/// Index of the window whose central stride cell contains pixel `pos`.
#[inline]
fn owner(pos: usize, overlap: usize, stride: usize, count: usize) -> usize {
    let half = overlap / 2;
    if pos < half {
        0
    } else {
        ((pos - half) / stride).min(count - 1)
    }
}

/// Raised-cosine taper of length `n`, strictly positive.
pub fn raised_cosine(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * (i as f64 + 0.5) / n as f64).cos())
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct WindowEstimate {
    /// Energy-weighted doubled spectral angle (direction of the ridge normal).
    spectral_angle2: f64,
    frequency: f64,
    defined: bool,
    log_energy: f64,
}

struct Fft2 {
    size: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(size: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            size,
            row_fwd: planner.plan_fft_forward(size),
            row_inv: planner.plan_fft_inverse(size),
        }
    }

    fn run(&self, buf: &mut [Complex<f64>], inverse: bool) {
        let n = self.size;
        let fft = if inverse { &self.row_inv } else { &self.row_fwd };
        for row in buf.chunks_exact_mut(n) {
            fft.process(row);
        }
        let mut col = vec![Complex::new(0.0, 0.0); n];
        for x in 0..n {
            for y in 0..n {
                col[y] = buf[y * n + x];
            }
            fft.process(&mut col);
            for y in 0..n {
                buf[y * n + x] = col[y];
            }
        }
        if inverse {
            let s = 1.0 / (n * n) as f64;
            buf.iter_mut().for_each(|c| *c *= s);
        }
    }
}

/// Signed frequency (cycles/sample) of FFT bin `k`.
#[inline]
fn bin_freq(k: usize, n: usize) -> f64 {
    if k < n / 2 {
        k as f64 / n as f64
    } else {
        (k as f64 - n as f64) / n as f64
    }
}

/// Extracts the mean-centred, tapered window at `(ox, oy)`. Samples past
/// the image border are zero after centring.
fn tapered_window(img: &GrayImage, ox: usize, oy: usize, taper: &[f64]) -> Vec<f64> {
    let n = taper.len();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in oy..(oy + n).min(h) {
        for x in ox..(ox + n).min(w) {
            sum += img.get(x as u32, y as u32) as f64;
            count += 1;
        }
    }
    let mean = sum / count as f64;
    let mut out = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            let (x, y) = (ox + i, oy + j);
            if x < w && y < h {
                out[j * n + i] = (img.get(x as u32, y as u32) as f64 - mean) * taper[i] * taper[j];
            }
        }
    }
    out
}

/// Power spectrum of a tapered window zero-padded to `fft_size`, scaled so
/// that its sum equals the window's sum of squares.
pub fn window_power_spectrum(window: &[f64], window_size: usize, fft_size: usize) -> Vec<f64> {
    let fft = Fft2::new(fft_size);
    let spec = forward_spectrum(&fft, window, window_size);
    let scale = 1.0 / (fft_size * fft_size) as f64;
    spec.iter().map(|c| c.norm_sqr() * scale).collect()
}

fn forward_spectrum(fft: &Fft2, window: &[f64], window_size: usize) -> Vec<Complex<f64>> {
    let n = fft.size;
    let mut buf = vec![Complex::new(0.0, 0.0); n * n];
    for j in 0..window_size {
        for i in 0..window_size {
            buf[j * n + i] = Complex::new(window[j * window_size + i], 0.0);
        }
    }
    fft.run(&mut buf, false);
    buf
}

fn estimate(spec: &[Complex<f64>], n: usize, p: &StftParams) -> WindowEstimate {
    let (lo, hi) = p.freq_band;
    let scale = 1.0 / (n * n) as f64;
    let mut total = 0.0;
    let mut band = 0.0;
    let mut radius_acc = 0.0;
    let (mut c2, mut s2) = (0.0, 0.0);
    for v in 0..n {
        let fv = bin_freq(v, n);
        for u in 0..n {
            let fu = bin_freq(u, n);
            let power = spec[v * n + u].norm_sqr() * scale;
            total += power;
            let r = (fu * fu + fv * fv).sqrt();
            if r >= lo && r <= hi {
                band += power;
                radius_acc += power * r;
                let phi = fv.atan2(fu);
                c2 += power * (2.0 * phi).cos();
                s2 += power * (2.0 * phi).sin();
            }
        }
    }
    let defined = band > MIN_BAND_POWER;
    WindowEstimate {
        spectral_angle2: if defined { s2.atan2(c2) } else { 0.0 },
        frequency: if defined { radius_acc / band } else { f64::NAN },
        defined,
        log_energy: (total + ENERGY_FLOOR).ln(),
    }
}

/// Contextual filtering of one window's spectrum; returns the real
/// `window_size`-square output patch.
fn enhance_window(fft: &Fft2, mut spec: Vec<Complex<f64>>, est: &WindowEstimate, p: &StftParams) -> Vec<f64> {
    let n = fft.size;
    let r0 = est.frequency;
    let phi0 = est.spectral_angle2 / 2.0;
    let (nr, na) = (p.bandpass_orders.0 as i32, p.bandpass_orders.1 as i32);
    for v in 0..n {
        let fv = bin_freq(v, n);
        for u in 0..n {
            let fu = bin_freq(u, n);
            let r = (fu * fu + fv * fv).sqrt();
            let radial = if r == 0.0 {
                0.0
            } else {
                let a = (r * p.radial_bandwidth).powi(2 * nr);
                let b = (r * r - r0 * r0).powi(2 * nr);
                (a / (a + b)).sqrt()
            };
            let phi = fv.atan2(fu);
            let d = wrap_angle(2.0 * (phi - phi0)) / 2.0;
            let angular = 1.0 / (1.0 + (d / p.angular_bandwidth).powi(2 * na)).sqrt();
            let c = &mut spec[v * n + u];
            let gain = radial * angular * c.norm().powf(p.root_exponent);
            *c *= gain;
        }
    }
    fft.run(&mut spec, true);
    let ws = p.window_size;
    let mut out = vec![0.0; ws * ws];
    for j in 0..ws {
        for i in 0..ws {
            out[j * ws + i] = spec[j * n + i].re;
        }
    }
    out
}

/// Multi-source BFS over the window grid: windows without in-band energy
/// take the estimate of the nearest defined window.
fn fill_undefined(est: &mut [WindowEstimate], nx: usize, ny: usize) {
    let mut queue: VecDeque<usize> = (0..est.len()).filter(|&i| est[i].defined).collect();
    if queue.is_empty() {
        return;
    }
    let mut done: Vec<bool> = est.iter().map(|e| e.defined).collect();
    while let Some(i) = queue.pop_front() {
        let (bx, by) = (i % nx, i / nx);
        let mut neighbours = [None; 4];
        if bx > 0 {
            neighbours[0] = Some(i - 1);
        }
        if bx + 1 < nx {
            neighbours[1] = Some(i + 1);
        }
        if by > 0 {
            neighbours[2] = Some(i - nx);
        }
        if by + 1 < ny {
            neighbours[3] = Some(i + nx);
        }
        for j in neighbours.into_iter().flatten() {
            if !done[j] {
                done[j] = true;
                let energy = est[j].log_energy;
                est[j] = WindowEstimate {
                    log_energy: energy,
                    ..est[i]
                };
                queue.push_back(j);
            }
        }
    }
}

/// Runs the windowed analysis. Returns the STFT-enhanced image and the
/// texture maps.
pub fn stft_analyze(img: &GrayImage, mask: &Mask, p: &StftParams) -> Result<(GrayImage, TextureMaps)> {
    p.validate()?;
    let (w, h) = img.dims();
    if mask.dims() != img.dims() {
        return Err(Error::DimensionMismatch {
            expected: img.dims(),
            actual: mask.dims(),
        });
    }
    if (w as usize) < p.window_size || (h as usize) < p.window_size {
        return Err(Error::WindowTooLarge {
            window: p.window_size,
            width: w,
            height: h,
        });
    }
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }

    let ws = p.window_size;
    let xs = window_origins(w as usize, ws, p.overlap);
    let ys = window_origins(h as usize, ws, p.overlap);
    let (nx, ny) = (xs.len(), ys.len());
    let taper = raised_cosine(ws);
    let fft = Fft2::new(p.fft_size);

    let spectra: Vec<(Vec<Complex<f64>>, WindowEstimate)> = (0..nx * ny)
        .into_par_iter()
        .map(|idx| {
            let (ox, oy) = (xs[idx % nx], ys[idx / nx]);
            let win = tapered_window(img, ox, oy, &taper);
            let spec = forward_spectrum(&fft, &win, ws);
            let est = estimate(&spec, p.fft_size, p);
            (spec, est)
        })
        .collect();

    let mut estimates: Vec<WindowEstimate> = spectra.iter().map(|(_, e)| *e).collect();
    fill_undefined(&mut estimates, nx, ny);
    let any_defined = estimates.iter().any(|e| e.defined);

    let patches: Vec<Vec<f64>> = spectra
        .into_par_iter()
        .zip(estimates.par_iter())
        .map(|((spec, _), est)| {
            if est.defined {
                enhance_window(&fft, spec, est, p)
            } else {
                vec![0.0; ws * ws]
            }
        })
        .collect();

    // Weighted overlap-add, in window order so the result is schedule-free.
    let (wu, hu) = (w as usize, h as usize);
    let mut acc = vec![0.0; wu * hu];
    let mut weight = vec![0.0; wu * hu];
    for (idx, patch) in patches.iter().enumerate() {
        let (ox, oy) = (xs[idx % nx], ys[idx / nx]);
        for j in 0..ws {
            let y = oy + j;
            if y >= hu {
                break;
            }
            for i in 0..ws {
                let x = ox + i;
                if x >= wu {
                    break;
                }
                acc[y * wu + x] += patch[j * ws + i];
                weight[y * wu + x] += taper[i] * taper[j];
            }
        }
    }
    for (a, wt) in acc.iter_mut().zip(&weight) {
        if *wt > 0.0 {
            *a /= wt;
        }
    }
    let enhanced = GrayImage::from_f64_rescaled(w, h, &acc);

    let stride = p.stride();
    let col_owner: Vec<usize> = (0..wu).map(|x| owner(x, p.overlap, stride, nx)).collect();
    let mut orientation = FloatMap::filled(w, h, 0.0);
    let mut raw_frequency = FloatMap::filled(w, h, f32::NAN);
    let mut raw_energy = FloatMap::filled(w, h, 0.0);
    for y in 0..hu {
        let by = owner(y, p.overlap, stride, ny);
        for x in 0..wu {
            let est = &estimates[by * nx + col_owner[x]];
            let (xu, yu) = (x as u32, y as u32);
            raw_energy.set(xu, yu, est.log_energy as f32);
            if any_defined {
                // Ridges run perpendicular to the spectral peak; the sign flip
                // converts from pixel (y-down) to on-screen counter-clockwise.
                orientation.set(xu, yu, wrap_angle(PI - est.spectral_angle2) as f32);
                raw_frequency.set(xu, yu, est.frequency as f32);
            }
        }
    }

    wrap_map(&mut orientation);
    let (flo, fhi) = p.freq_band;
    let mut frequency = normalize_to_angle(&raw_frequency, flo, fhi)?;
    wrap_map(&mut frequency);

    let (elo, ehi) = mask
        .bits()
        .iter()
        .zip(raw_energy.data())
        .filter(|(&m, _)| m)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, &v)| {
            (lo.min(v as f64), hi.max(v as f64))
        });
    let energy = if ehi > elo {
        let mut e = normalize_to_angle(&raw_energy, elo, ehi)?;
        wrap_map(&mut e);
        e
    } else {
        FloatMap::filled(w, h, 0.0)
    };

    Ok((
        enhanced,
        TextureMaps {
            orientation,
            frequency,
            energy,
            mask: mask.clone(),
            raw_frequency,
            raw_energy,
            freq_band: p.freq_band,
            energy_bounds: (elo, ehi),
        },
    ))
}

fn wrap_map(map: &mut FloatMap) {
    for v in map.data_mut() {
        if *v as f64 >= PI {
            *v = -PI as f32;
        }
    }
}
