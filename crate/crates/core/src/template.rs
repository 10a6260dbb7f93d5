//! Minutiae, cylinders, templates and the binary template format.
//!
//! Template file layout (all integers and floats little-endian):
//!
//! ```text
//! "MTCC"            4 bytes magic
//! version           u8 (= 1)
//! kind              u8 (0=O 1=F 2=E 3=CO 4=CF 5=CE)
//! N_S, N_D          u8, u8
//! R                 f32
//! width, height     u16, u16
//! cylinder count    u16
//! per cylinder:     x f32, y f32, theta f32, quality f32,
//!                   validity bitmask ceil(N_C/8) bytes (LSB first),
//!                   N_C cell values f32
//! CRC32             u32 over every preceding byte
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, FormatError, Result};

pub const MAGIC: &[u8; 4] = b"MTCC";
pub const FORMAT_VERSION: u8 = 1;
const HEADER_LEN: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minutia {
    pub x: f64,
    pub y: f64,
    /// Direction in [0, 2pi), counter-clockwise as seen on screen.
    pub theta: f64,
    pub quality: f64,
}

impl Minutia {
    pub fn new(x: f64, y: f64, theta: f64, quality: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_direction(theta),
            quality,
        }
    }

    /// The same minutia with every field rounded through f32, i.e. exactly
    /// what the template file can hold.
    pub fn quantized(&self) -> Self {
        let theta = self.theta as f32;
        let theta = if theta >= std::f32::consts::TAU { 0.0 } else { theta };
        Self {
            x: self.x as f32 as f64,
            y: self.y as f32 as f64,
            theta: theta as f64,
            quality: self.quality as f32 as f64,
        }
    }

    pub fn distance(&self, x: f64, y: f64) -> f64 {
        ((self.x - x).powi(2) + (self.y - y).powi(2)).sqrt()
    }
}

/// Reduces an angle into [0, 2pi).
pub fn normalize_direction(theta: f64) -> f64 {
    let t = theta.rem_euclid(2.0 * PI);
    if t >= 2.0 * PI {
        0.0
    } else {
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    /// Minutia directions (classic cylinder code).
    O,
    /// Ridge frequency at the minutiae.
    F,
    /// Ridge energy at the minutiae.
    E,
    /// Orientation sampled at each cell centre.
    CO,
    /// Frequency sampled at each cell centre.
    CF,
    /// Energy sampled at each cell centre.
    CE,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 6] = [Self::O, Self::F, Self::E, Self::CO, Self::CF, Self::CE];

    pub fn code(self) -> u8 {
        match self {
            Self::O => 0,
            Self::F => 1,
            Self::E => 2,
            Self::CO => 3,
            Self::CF => 4,
            Self::CE => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn is_cell_centered(self) -> bool {
        matches!(self, Self::CO | Self::CF | Self::CE)
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::O => "o",
            Self::F => "f",
            Self::E => "e",
            Self::CO => "co",
            Self::CF => "cf",
            Self::CE => "ce",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| Error::InvalidParams(format!("unknown feature kind `{s}` (expected o|f|e|co|cf|ce)")))
    }
}

/// What a cell with no neighbour minutiae holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmptyCellValue {
    /// Psi applied to a zero sum, i.e. Z(0, mu_psi, tau_psi).
    Sigmoid,
    /// Literal zero.
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CylinderParams {
    pub radius: f64,
    pub ns: usize,
    pub nd: usize,
    pub sigma_s: f64,
    pub sigma_d: f64,
    pub omega: f64,
    pub mu_psi: f64,
    pub tau_psi: f64,
    pub min_vc: f64,
    pub min_m: usize,
    pub min_me: f64,
    pub delta_theta: f64,
    pub empty_cell: EmptyCellValue,
}

impl Default for CylinderParams {
    fn default() -> Self {
        Self {
            radius: 65.0,
            ns: 18,
            nd: 5,
            sigma_s: 6.0,
            sigma_d: 5.0 * PI / 36.0,
            omega: 0.0,
            mu_psi: 5.0 / 1000.0,
            tau_psi: 400.0,
            min_vc: 0.20,
            min_m: 1,
            min_me: 0.20,
            delta_theta: 2.0 * PI / 3.0,
            empty_cell: EmptyCellValue::Sigmoid,
        }
    }
}

impl CylinderParams {
    pub fn n_cells(&self) -> usize {
        self.ns * self.ns * self.nd
    }

    pub fn delta_s(&self) -> f64 {
        2.0 * self.radius / self.ns as f64
    }

    pub fn delta_d(&self) -> f64 {
        2.0 * PI / self.nd as f64
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("radius", self.radius),
            ("sigma_s", self.sigma_s),
            ("sigma_d", self.sigma_d),
            ("mu_psi", self.mu_psi),
            ("tau_psi", self.tau_psi),
            ("delta_theta", self.delta_theta),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("cylinder: {name} must be positive")));
            }
        }
        if self.ns == 0 || self.nd == 0 || self.ns > 255 || self.nd > 255 {
            return Err(Error::InvalidParams("cylinder: ns, nd must be in 1..=255".into()));
        }
        if !(self.omega >= 0.0) {
            return Err(Error::InvalidParams("cylinder: omega must be >= 0".into()));
        }
        for (name, v) in [("min_vc", self.min_vc), ("min_me", self.min_me)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidParams(format!("cylinder: {name} must be in (0, 1]")));
            }
        }
        if self.min_m == 0 {
            return Err(Error::InvalidParams("cylinder: min_m must be positive".into()));
        }
        Ok(())
    }
}

/// One minutia's cell code.
#[derive(Debug, Clone, PartialEq)]
pub struct Cylinder {
    pub center: Minutia,
    /// Cell values, linear index `(k-1)*N_S^2 + (j-1)*N_S + (i-1)`.
    pub values: Vec<f32>,
    pub cell_valid: Vec<bool>,
    pub valid: bool,
}

impl Cylinder {
    pub fn valid_cells(&self) -> usize {
        self.cell_valid.iter().filter(|&&v| v).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub kind: FeatureKind,
    pub params: CylinderParams,
    pub image_dims: (u32, u32),
    pub cylinders: Vec<Cylinder>,
}

impl Template {
    /// Checks the template invariants and rounds every cylinder centre
    /// through f32 so the in-memory value equals what the file stores.
    pub fn new(
        kind: FeatureKind,
        params: CylinderParams,
        image_dims: (u32, u32),
        mut cylinders: Vec<Cylinder>,
    ) -> Result<Self> {
        let nc = params.n_cells();
        for (idx, c) in cylinders.iter_mut().enumerate() {
            if !c.valid {
                return Err(Error::InvalidParams(format!("cylinder {idx} is not valid")));
            }
            if c.values.len() != nc || c.cell_valid.len() != nc {
                return Err(Error::InvalidParams(format!(
                    "cylinder {idx} has {} values / {} flags, expected {nc}",
                    c.values.len(),
                    c.cell_valid.len()
                )));
            }
            for (v, &ok) in c.values.iter_mut().zip(&c.cell_valid) {
                if !ok {
                    *v = 0.0;
                }
            }
            c.center = c.center.quantized();
        }
        Ok(Self {
            kind,
            params,
            image_dims,
            cylinders,
        })
    }

    pub fn len(&self) -> usize {
        self.cylinders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cylinders.is_empty()
    }

    pub fn minutiae(&self) -> impl Iterator<Item = &Minutia> {
        self.cylinders.iter().map(|c| &c.center)
    }
}

/// Parses `x y theta quality` lines (`#` starts a comment) and returns the
/// minutiae sorted by descending quality, ties in input order.
pub fn parse_minutiae(text: &str) -> Result<Vec<Minutia>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            line: lineno + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        }
        let mut vals = [0.0f64; 4];
        for (slot, (name, field)) in vals.iter_mut().zip(["x", "y", "theta", "quality"].iter().zip(&fields)) {
            *slot = field
                .parse::<f64>()
                .map_err(|_| err(format!("{name}: not a number: `{field}`")))?;
            if !slot.is_finite() {
                return Err(err(format!("{name}: non-finite value `{field}`")));
            }
        }
        let [x, y, theta, quality] = vals;
        if !(0.0..=1.0).contains(&quality) {
            return Err(err(format!("quality {quality} outside [0, 1]")));
        }
        out.push(Minutia::new(x, y, theta, quality));
    }
    out.sort_by(|a, b| b.quality.total_cmp(&a.quality));
    Ok(out)
}

pub fn parse_minutiae_bytes(bytes: &[u8]) -> Result<Vec<Minutia>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count(),
        message: "invalid UTF-8".into(),
    })?;
    parse_minutiae(text)
}

fn cylinder_record_len(nc: usize) -> usize {
    16 + nc.div_ceil(8) + 4 * nc
}

pub fn serialize_template(t: &Template) -> Result<Vec<u8>> {
    let p = &t.params;
    let to_u8 = |v: usize, name: &str| {
        u8::try_from(v).map_err(|_| Error::InvalidParams(format!("{name} = {v} does not fit in u8")))
    };
    let to_u16 = |v: usize, name: &str| {
        u16::try_from(v).map_err(|_| Error::InvalidParams(format!("{name} = {v} does not fit in u16")))
    };
    let ns = to_u8(p.ns, "N_S")?;
    let nd = to_u8(p.nd, "N_D")?;
    let width = to_u16(t.image_dims.0 as usize, "image width")?;
    let height = to_u16(t.image_dims.1 as usize, "image height")?;
    let count = to_u16(t.cylinders.len(), "cylinder count")?;
    let nc = p.n_cells();

    let mut out = Vec::with_capacity(HEADER_LEN + t.cylinders.len() * cylinder_record_len(nc) + 4);
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.push(t.kind.code());
    out.push(ns);
    out.push(nd);
    out.extend_from_slice(&(p.radius as f32).to_le_bytes());
    out.extend_from_slice(&width.to_le_bytes());
    out.extend_from_slice(&height.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for c in &t.cylinders {
        if c.values.len() != nc || c.cell_valid.len() != nc {
            return Err(Error::InvalidParams("cylinder size does not match params".into()));
        }
        let m = &c.center;
        for v in [m.x, m.y, m.theta, m.quality] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let mut bits = vec![0u8; nc.div_ceil(8)];
        for (i, &ok) in c.cell_valid.iter().enumerate() {
            if ok {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        out.extend_from_slice(&bits);
        for v in &c.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let v = self.buf[self.pos..self.pos + N].try_into().unwrap();
        self.pos += N;
        v
    }
    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }
    fn u16(&mut self) -> u16 {
        u16::from_le_bytes(self.take())
    }
    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take())
    }
}

/// Decodes a template file. Parameters not stored in the file (everything
/// but R, N_S, N_D) take their defaults.
pub fn deserialize_template(bytes: &[u8]) -> Result<Template, FormatError> {
    let truncated = |needed: usize| FormatError::Truncated {
        needed,
        available: bytes.len(),
    };
    if bytes.len() < MAGIC.len() {
        return Err(truncated(MAGIC.len()));
    }
    if &bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    if bytes.len() < 5 {
        return Err(truncated(5));
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(bytes[4]));
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(truncated(HEADER_LEN + 4));
    }
    let mut r = Reader { buf: bytes, pos: 5 };
    let kind_code = r.u8();
    let ns = r.u8() as usize;
    let nd = r.u8() as usize;
    let radius = r.f32();
    let width = r.u16();
    let height = r.u16();
    let count = r.u16() as usize;
    let nc = ns * nd * ns;
    let needed = HEADER_LEN + count * cylinder_record_len(nc) + 4;
    if bytes.len() < needed {
        return Err(truncated(needed));
    }
    if bytes.len() > needed {
        return Err(FormatError::InvalidField(format!(
            "{} trailing bytes after checksum",
            bytes.len() - needed
        )));
    }
    let body = &bytes[..needed - 4];
    let stored = u32::from_le_bytes(bytes[needed - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(FormatError::ChecksumMismatch { stored, computed });
    }

    let kind = FeatureKind::from_code(kind_code)
        .ok_or_else(|| FormatError::InvalidField(format!("feature kind code {kind_code}")))?;
    if ns == 0 || nd == 0 {
        return Err(FormatError::InvalidField("N_S and N_D must be positive".into()));
    }
    if !(radius.is_finite() && radius > 0.0) {
        return Err(FormatError::InvalidField(format!("radius {radius}")));
    }
    let params = CylinderParams {
        radius: radius as f64,
        ns,
        nd,
        ..CylinderParams::default()
    };

    let mut cylinders = Vec::with_capacity(count);
    for idx in 0..count {
        let [x, y, theta, quality] = [r.f32(), r.f32(), r.f32(), r.f32()];
        if ![x, y, theta, quality].iter().all(|v| v.is_finite()) {
            return Err(FormatError::InvalidField(format!(
                "cylinder {idx}: non-finite minutia field"
            )));
        }
        if !(0.0..std::f32::consts::TAU).contains(&theta) {
            return Err(FormatError::InvalidField(format!(
                "cylinder {idx}: theta {theta} outside [0, 2pi)"
            )));
        }
        let bits = &bytes[r.pos..r.pos + nc.div_ceil(8)];
        r.pos += bits.len();
        let cell_valid: Vec<bool> = (0..nc).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
        let mut values = Vec::with_capacity(nc);
        for ok in &cell_valid {
            let v = r.f32();
            if !(0.0..=1.0).contains(&v) || (!ok && v != 0.0) {
                return Err(FormatError::InvalidField(format!("cylinder {idx}: cell value {v}")));
            }
            values.push(v);
        }
        cylinders.push(Cylinder {
            center: Minutia {
                x: x as f64,
                y: y as f64,
                theta: theta as f64,
                quality: quality as f64,
            },
            values,
            cell_valid,
            valid: true,
        });
    }
    Ok(Template {
        kind,
        params,
        image_dims: (width as u32, height as u32),
        cylinders,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_sorts_by_quality() {
        let m = parse_minutiae("10 20 0.5 0.8\n30 40 1.0 0.9").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].quality, 0.9);
        assert_eq!((m[0].x, m[0].y), (30.0, 40.0));
    }

    #[test]
    fn parse_is_stable_on_ties_and_skips_comments() {
        let text = "# header\n1 1 0 0.5\n\n2 2 0 0.7 # inline\n3 3 0 0.5\n";
        let m = parse_minutiae(text).unwrap();
        let xs: Vec<f64> = m.iter().map(|m| m.x).collect();
        assert_eq!(xs, vec![2.0, 1.0, 3.0]);
    }

    #[test]
    fn parse_normalizes_theta() {
        let m = parse_minutiae("5 5 -1.5707963 1.0").unwrap();
        assert!((m[0].theta - 4.712389).abs() < 1e-6);
        let m = parse_minutiae("5 5 7.0 1.0").unwrap();
        assert!((m[0].theta - (7.0 - 2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match parse_minutiae("a b c d") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
        match parse_minutiae("1 2 3 0.5\n1 2 inf 0.5") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(parse_minutiae("1 2 NaN 0.5").is_err());
        assert!(parse_minutiae("1 2 3").is_err());
        assert!(parse_minutiae("1 2 3 1.5").is_err());
    }

    #[test]
    fn kind_labels() {
        for k in FeatureKind::ALL {
            assert_eq!(k.label().parse::<FeatureKind>().unwrap(), k);
            assert_eq!(FeatureKind::from_code(k.code()), Some(k));
        }
        assert!("x".parse::<FeatureKind>().is_err());
        assert_eq!(FeatureKind::from_code(6), None);
    }

    #[test]
    fn table_defaults() {
        let p = CylinderParams::default();
        assert_eq!(p.n_cells(), 1620);
        assert!((p.delta_s() - 130.0 / 18.0).abs() < 1e-12);
        p.validate().unwrap();
    }

    #[test]
    fn empty_template_is_header_only() {
        let t = Template::new(FeatureKind::CF, CylinderParams::default(), (388, 374), vec![]).unwrap();
        let bytes = serialize_template(&t).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 4);
        assert_eq!(deserialize_template(&bytes).unwrap(), t);
    }

    #[test]
    fn zero_cylinder_round_trip() {
        let p = CylinderParams::default();
        let c = Cylinder {
            center: Minutia::new(12.5, 40.25, 1.0, 0.75),
            values: vec![0.0; p.n_cells()],
            cell_valid: vec![true; p.n_cells()],
            valid: true,
        };
        let t = Template::new(FeatureKind::O, p, (300, 300), vec![c]).unwrap();
        let bytes = serialize_template(&t).unwrap();
        let back = deserialize_template(&bytes).unwrap();
        assert_eq!(back, t);
        assert_eq!(serialize_template(&back).unwrap(), bytes);
    }

    #[test]
    fn distinct_decode_errors() {
        let t = Template::new(FeatureKind::E, CylinderParams::default(), (10, 10), vec![]).unwrap();
        let good = serialize_template(&t).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert_eq!(deserialize_template(&bad), Err(FormatError::BadMagic));

        let mut bad = good.clone();
        bad[4] = 2;
        assert_eq!(deserialize_template(&bad), Err(FormatError::UnsupportedVersion(2)));

        assert!(matches!(
            deserialize_template(&good[..good.len() - 1]),
            Err(FormatError::Truncated { .. })
        ));

        let mut bad = good.clone();
        bad[12] ^= 0x01;
        assert!(matches!(
            deserialize_template(&bad),
            Err(FormatError::ChecksumMismatch { .. })
        ));
    }
}
