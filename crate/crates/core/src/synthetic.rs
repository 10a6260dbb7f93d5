//! Seeded synthetic fingerprints for tests and benchmarks.
//!
//! A finger is an elliptical patch of concentric ridges around a core,
//! bent by a few low-frequency phase waves. Minutiae are scattered over the
//! patch and point along the local ridge flow. Impressions apply a rigid
//! motion, jitter the minutia coordinates and drop a fraction of them.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::image::GrayImage;
use crate::template::Minutia;

/// Rotation by `angle` (counter-clockwise on screen) about `(cx, cy)`,
/// followed by a shift of `(tx, ty)`. Minutia directions gain `angle`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RigidTransform {
    pub angle: f64,
    pub tx: f64,
    pub ty: f64,
    pub cx: f64,
    pub cy: f64,
}

impl RigidTransform {
    pub fn new(angle: f64, tx: f64, ty: f64, cx: f64, cy: f64) -> Self {
        Self { angle, tx, ty, cx, cy }
    }

    pub fn apply_point(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        (self.cx + self.tx + c * dx + s * dy, self.cy + self.ty - s * dx + c * dy)
    }

    pub fn invert_point(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx - self.tx, y - self.cy - self.ty);
        (self.cx + c * dx - s * dy, self.cy + s * dx + c * dy)
    }

    pub fn apply_minutia(&self, m: &Minutia) -> Minutia {
        let (x, y) = self.apply_point(m.x, m.y);
        Minutia::new(x, y, m.theta + self.angle, m.quality)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PhaseWave {
    amplitude: f64,
    wx: f64,
    wy: f64,
    offset: f64,
}

/// Impression distortion limits.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpressionParams {
    pub max_rotation: f64,
    pub max_translation: f64,
    pub jitter_sigma: f64,
    pub drop_fraction: f64,
}

impl Default for ImpressionParams {
    fn default() -> Self {
        Self {
            max_rotation: 30f64.to_radians(),
            max_translation: 20.0,
            jitter_sigma: 1.5,
            drop_fraction: 0.10,
        }
    }
}

pub struct Impression {
    pub image: GrayImage,
    /// Sorted by descending quality.
    pub minutiae: Vec<Minutia>,
    pub transform: RigidTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFinger {
    pub seed: u64,
    /// Ellipse semi-axes of the finger area.
    pub semi_axes: (f64, f64),
    core: (f64, f64),
    base_frequency: f64,
    waves: Vec<PhaseWave>,
    amplitude_wave: PhaseWave,
    /// Minutiae relative to the finger centre.
    local_minutiae: Vec<Minutia>,
}

const BACKGROUND: f64 = 205.0;

impl SyntheticFinger {
    pub fn generate(seed: u64) -> Self {
        Self::generate_with(seed, 42)
    }

    /// A finger carrying about `minutiae` minutiae.
    pub fn generate_with(seed: u64, minutiae: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let semi_axes = (rng.random_range(115.0..130.0), rng.random_range(140.0..160.0));
        let core = (rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0));
        let base_frequency = rng.random_range(0.095..0.125);
        let wave = |rng: &mut ChaCha8Rng, amp: std::ops::Range<f64>| {
            let dir = rng.random_range(0.0..2.0 * PI);
            let k = rng.random_range(0.008..0.022);
            PhaseWave {
                amplitude: rng.random_range(amp),
                wx: k * dir.cos(),
                wy: k * dir.sin(),
                offset: rng.random_range(0.0..2.0 * PI),
            }
        };
        let waves = (0..3).map(|_| wave(&mut rng, 0.6..2.2)).collect();
        let amplitude_wave = wave(&mut rng, 0.15..0.3);
        let mut finger = Self {
            seed,
            semi_axes,
            core,
            base_frequency,
            waves,
            amplitude_wave,
            local_minutiae: Vec::new(),
        };

        let (a, b) = (semi_axes.0 - 18.0, semi_axes.1 - 18.0);
        let mut placed: Vec<Minutia> = Vec::with_capacity(minutiae);
        let mut attempts = 0;
        while placed.len() < minutiae && attempts < 20_000 {
            attempts += 1;
            let x = rng.random_range(-a..a);
            let y = rng.random_range(-b..b);
            if (x / a).powi(2) + (y / b).powi(2) > 1.0 {
                continue;
            }
            if ((x - core.0).powi(2) + (y - core.1).powi(2)).sqrt() < 20.0 {
                continue;
            }
            if placed.iter().any(|m| m.distance(x, y) < 14.0) {
                continue;
            }
            let (gx, gy) = finger.phase_gradient(x, y);
            // The ridge runs perpendicular to the phase gradient; the
            // direction angle is measured with y pointing up.
            let flow = (-gx).atan2(-gy);
            let theta = if rng.random_bool(0.5) { flow } else { flow + PI };
            placed.push(Minutia::new(x, y, theta, rng.random_range(0.3..1.0)));
        }
        placed.sort_by(|p, q| q.quality.total_cmp(&p.quality));
        finger.local_minutiae = placed;
        finger
    }

    fn phase(&self, x: f64, y: f64) -> f64 {
        let r = ((x - self.core.0).powi(2) + (y - self.core.1).powi(2)).sqrt();
        let mut ph = 2.0 * PI * self.base_frequency * r;
        for w in &self.waves {
            ph += w.amplitude * (w.wx * x + w.wy * y + w.offset).sin();
        }
        ph
    }

    fn phase_gradient(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.core.0, y - self.core.1);
        let r = (dx * dx + dy * dy).sqrt().max(1e-9);
        let k = 2.0 * PI * self.base_frequency / r;
        let (mut gx, mut gy) = (k * dx, k * dy);
        for w in &self.waves {
            let c = w.amplitude * (w.wx * x + w.wy * y + w.offset).cos();
            gx += c * w.wx;
            gy += c * w.wy;
        }
        (gx, gy)
    }

    /// Local ridge frequency in cycles per pixel at a finger-frame point.
    pub fn local_frequency(&self, x: f64, y: f64) -> f64 {
        let (gx, gy) = self.phase_gradient(x, y);
        (gx * gx + gy * gy).sqrt() / (2.0 * PI)
    }

    fn inside(&self, x: f64, y: f64) -> bool {
        (x / self.semi_axes.0).powi(2) + (y / self.semi_axes.1).powi(2) <= 1.0
    }

    fn to_local(t: &RigidTransform, x: f64, y: f64, w: u32, h: u32) -> (f64, f64) {
        let (ux, uy) = t.invert_point(x, y);
        (ux - w as f64 / 2.0, uy - h as f64 / 2.0)
    }

    /// Renders the finger moved by `t`, the finger centred on the raster
    /// before the move. Noise is seeded by the finger seed.
    pub fn render(&self, t: &RigidTransform, w: u32, h: u32) -> GrayImage {
        self.render_with_noise(t, w, h, self.seed)
    }

    pub fn render_with_noise(&self, t: &RigidTransform, w: u32, h: u32, noise_seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed ^ 0x5eed_f1e1d);
        let ridge_noise = Normal::new(0.0, 9.0).expect("valid sigma");
        let bg_noise = Normal::new(0.0, 1.5).expect("valid sigma");
        let aw = self.amplitude_wave;
        GrayImage::from_fn(w, h, |px, py| {
            let (x, y) = Self::to_local(t, px as f64, py as f64, w, h);
            let v = if self.inside(x, y) {
                let amp = 70.0 * (1.0 - aw.amplitude * (0.5 + 0.5 * (aw.wx * x + aw.wy * y + aw.offset).sin()));
                128.0 + amp * self.phase(x, y).cos() + ridge_noise.sample(&mut rng)
            } else {
                BACKGROUND + bg_noise.sample(&mut rng)
            };
            v.round().clamp(0.0, 255.0) as u8
        })
        .expect("raster size matches")
    }

    /// Ground-truth minutiae under `t` on a `w x h` raster, kept only when
    /// they land on it.
    pub fn minutiae(&self, t: &RigidTransform, w: u32, h: u32) -> Vec<Minutia> {
        self.local_minutiae
            .iter()
            .map(|m| {
                let c = Minutia::new(m.x + w as f64 / 2.0, m.y + h as f64 / 2.0, m.theta, m.quality);
                t.apply_minutia(&c)
            })
            .filter(|m| m.x >= 0.0 && m.y >= 0.0 && m.x <= (w - 1) as f64 && m.y <= (h - 1) as f64)
            .collect()
    }

    pub fn minutia_count(&self) -> usize {
        self.local_minutiae.len()
    }

    /// Impression number `index`: a random rigid motion about the raster
    /// centre, jittered coordinates and a dropped fraction of minutiae.
    pub fn impression(&self, index: u64, w: u32, h: u32, p: &ImpressionParams) -> Impression {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ index);
        let transform = RigidTransform::new(
            rng.random_range(-p.max_rotation..=p.max_rotation),
            rng.random_range(-p.max_translation..=p.max_translation),
            rng.random_range(-p.max_translation..=p.max_translation),
            w as f64 / 2.0,
            h as f64 / 2.0,
        );
        let image = self.render_with_noise(&transform, w, h, self.seed ^ (index << 32) ^ 0xabcd);
        let mut ms = self.minutiae(&transform, w, h);
        let drop = (ms.len() as f64 * p.drop_fraction).round() as usize;
        let mut order: Vec<usize> = (0..ms.len()).collect();
        order.shuffle(&mut rng);
        let dropped = &order[..drop];
        let jitter = Normal::new(0.0, p.jitter_sigma.max(1e-12)).expect("valid sigma");
        let mut kept = Vec::with_capacity(ms.len() - drop);
        for (i, m) in ms.iter_mut().enumerate() {
            let (jx, jy) = (jitter.sample(&mut rng), jitter.sample(&mut rng));
            if dropped.contains(&i) {
                continue;
            }
            let x = (m.x + jx).clamp(0.0, (w - 1) as f64);
            let y = (m.y + jy).clamp(0.0, (h - 1) as f64);
            kept.push(Minutia::new(x, y, m.theta, m.quality));
        }
        Impression {
            image,
            minutiae: kept,
            transform,
        }
    }
}

/// Uniform 8-bit noise.
pub fn noise_image(w: u32, h: u32, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GrayImage::from_fn(w, h, |_, _| rng.random::<u8>()).expect("raster size matches")
}

/// Minutiae in the text format read by `parse_minutiae`.
pub fn minutiae_to_text(ms: &[Minutia]) -> String {
    ms.iter()
        .map(|m| format!("{} {} {} {}\n", m.x, m.y, m.theta, m.quality))
        .collect()
}
