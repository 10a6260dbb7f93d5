//! Raster types shared by the pipeline and their file I/O.
//!
//! Grayscale images are read and written as PNG, BMP or binary PGM. Angle
//! maps can be exported as PGM (angle mapped linearly onto 0..=255) or as a
//! raw float dump: `width: u32`, `height: u32`, then `width * height` f32
//! values, all little-endian.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use image::{GrayImage as LumaImage, ImageFormat};

use crate::error::{Error, FormatError, Result};

/// Row-major 8-bit grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParams(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width as usize * height as usize {
            return Err(Error::InvalidParams(format!(
                "pixel count {} does not match {width}x{height}",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    /// Rescales a float buffer of the same geometry onto 0..=255. A flat
    /// buffer maps to mid-gray.
    pub(crate) fn from_f64_rescaled(width: u32, height: u32, data: &[f64]) -> Self {
        let (lo, hi) = data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        let span = hi - lo;
        let flat = !(span > 1e-9 * lo.abs().max(hi.abs()).max(1.0));
        let pixels = data
            .iter()
            .map(|&v| {
                if flat {
                    128
                } else {
                    ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
                }
            })
            .collect();
        Self { width, height, pixels }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let luma = img.into_luma8();
        let (w, h) = luma.dimensions();
        Self::new(w, h, luma.into_raw())
    }

    /// Writes the image; the format follows the file extension
    /// (`png`, `bmp`, `pgm`).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        if ext == "pgm" {
            return write_pgm(path, self.width, self.height, &self.pixels);
        }
        let format = ImageFormat::from_extension(&ext)
            .ok_or_else(|| Error::InvalidParams(format!("unsupported image extension: {}", path.display())))?;
        let buf =
            LumaImage::from_raw(self.width, self.height, self.pixels.clone()).expect("pixel buffer matches dimensions");
        buf.save_with_format(path, format).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn write_pgm(path: &Path, width: u32, height: u32, pixels: &[u8]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "P5\n{width} {height}\n255\n")?;
    out.write_all(pixels)?;
    out.flush()?;
    Ok(())
}

/// Foreground mask; `true` marks valid fingerprint area.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(Error::InvalidParams(format!(
                "mask bit count {} does not match {width}x{height}",
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width as usize * height as usize],
        }
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Mask lookup at a sub-pixel point, rounded to the nearest pixel.
    /// Points outside the raster are `false`.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        match round_to_pixel(x, y, self.width, self.height) {
            Some((px, py)) => self.get(px, py),
            None => false,
        }
    }

    pub fn to_image(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_image().save(path)
    }

    /// Any non-zero pixel is foreground.
    pub fn from_image(img: &GrayImage) -> Self {
        Self {
            width: img.width,
            height: img.height,
            bits: img.pixels.iter().map(|&p| p != 0).collect(),
        }
    }
}

/// Rounds a point to the nearest pixel, `None` when it falls off the raster.
#[inline]
pub fn round_to_pixel(x: f64, y: f64, width: u32, height: u32) -> Option<(u32, u32)> {
    let px = x.round();
    let py = y.round();
    if px >= 0.0 && py >= 0.0 && px < width as f64 && py < height as f64 {
        Some((px as u32, py as u32))
    } else {
        None
    }
}

/// Row-major f32 raster used for the texture maps.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatMap {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

const MAP_HEADER_LEN: usize = 8;

impl FloatMap {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::InvalidParams(format!(
                "map value count {} does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: u32, height: u32, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: f32) {
        self.data[y as usize * self.width as usize + x as usize] = v;
    }

    /// Nearest-pixel lookup; `None` off the raster.
    pub fn sample(&self, x: f64, y: f64) -> Option<f32> {
        round_to_pixel(x, y, self.width, self.height).map(|(px, py)| self.get(px, py))
    }

    /// Nearest-pixel lookup with coordinates clamped onto the raster.
    pub fn sample_clamped(&self, x: f64, y: f64) -> f32 {
        let px = x.round().clamp(0.0, (self.width - 1) as f64) as u32;
        let py = y.round().clamp(0.0, (self.height - 1) as f64) as u32;
        self.get(px, py)
    }

    /// Angle in [-pi, pi] mapped linearly onto 0..=255; NaN becomes 0.
    pub fn angle_to_image(&self) -> GrayImage {
        let pixels = self
            .data
            .iter()
            .map(|&a| {
                if a.is_nan() {
                    0
                } else {
                    (((a as f64 + PI) / (2.0 * PI)) * 255.0).round().clamp(0.0, 255.0) as u8
                }
            })
            .collect();
        GrayImage {
            width: self.width,
            height: self.height,
            pixels,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(MAP_HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        if bytes.len() < MAP_HEADER_LEN {
            return Err(FormatError::Truncated {
                needed: MAP_HEADER_LEN,
                available: bytes.len(),
            });
        }
        let width = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let count = (width as usize)
            .checked_mul(height as usize)
            .ok_or_else(|| FormatError::InvalidField("map dimensions overflow".into()))?;
        let needed = count
            .checked_mul(4)
            .and_then(|n| n.checked_add(MAP_HEADER_LEN))
            .ok_or_else(|| FormatError::InvalidField("map dimensions overflow".into()))?;
        if bytes.len() != needed {
            return Err(FormatError::Truncated {
                needed,
                available: bytes.len(),
            });
        }
        let data = bytes[MAP_HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { width, height, data })
    }

    pub fn save_raw(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load_raw(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(Self::from_bytes(&bytes)?)
    }
}
