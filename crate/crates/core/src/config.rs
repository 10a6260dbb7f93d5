//! Flat `section.key = value` configuration covering every tunable.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::enhancement::EnhancementParams;
use crate::error::{Error, Result};
use crate::matcher::RelaxParams;
use crate::stft::StftParams;
use crate::template::{CylinderParams, EmptyCellValue, FeatureKind};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub enhancement: EnhancementParams,
    pub stft: StftParams,
    pub cylinder: CylinderParams,
    pub relax: RelaxParams,
    pub kinds: Vec<FeatureKind>,
    /// 0 lets the thread pool pick.
    pub workers: usize,
    pub subjects: usize,
    pub impressions: usize,
    pub image_ext: String,
    pub minutiae_ext: String,
    /// Template cache directory; empty means `<out>/cache`.
    pub cache_dir: String,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            enhancement: EnhancementParams::default(),
            stft: StftParams::default(),
            cylinder: CylinderParams::default(),
            relax: RelaxParams::default(),
            kinds: FeatureKind::ALL.to_vec(),
            workers: 0,
            subjects: 100,
            impressions: 8,
            image_ext: "tif".into(),
            minutiae_ext: "min".into(),
            cache_dir: String::new(),
        }
    }
}

fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("invalid value `{v}`"))
}

pub fn parse_kinds(v: &str) -> Result<Vec<FeatureKind>> {
    if v.trim() == "all" {
        return Ok(FeatureKind::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in v.split(',') {
        let k: FeatureKind = part.trim().parse()?;
        if !out.contains(&k) {
            out.push(k);
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidParams("empty kind list".into()));
    }
    Ok(out)
}

fn empty_cell_label(v: EmptyCellValue) -> &'static str {
    match v {
        EmptyCellValue::Sigmoid => "sigmoid",
        EmptyCellValue::Zero => "zero",
    }
}

impl Config {
    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let e = &self.enhancement;
        let s = &self.stft;
        let c = &self.cylinder;
        let r = &self.relax;
        vec![
            ("enhance.block_size", e.block_size.to_string()),
            (
                "enhance.variance_threshold_ratio",
                e.variance_threshold_ratio.to_string(),
            ),
            ("enhance.smqt_levels", e.smqt_levels.to_string()),
            ("enhance.gabor_kernel_radius", e.gabor_kernel_radius.to_string()),
            ("enhance.gabor_sigma", e.gabor_sigma.to_string()),
            ("stft.window_size", s.window_size.to_string()),
            ("stft.overlap", s.overlap.to_string()),
            ("stft.fft_size", s.fft_size.to_string()),
            ("stft.freq_low", s.freq_band.0.to_string()),
            ("stft.freq_high", s.freq_band.1.to_string()),
            ("stft.root_exponent", s.root_exponent.to_string()),
            ("stft.radial_order", s.bandpass_orders.0.to_string()),
            ("stft.angular_order", s.bandpass_orders.1.to_string()),
            ("stft.radial_bandwidth", s.radial_bandwidth.to_string()),
            ("stft.angular_bandwidth", s.angular_bandwidth.to_string()),
            ("cylinder.radius", c.radius.to_string()),
            ("cylinder.ns", c.ns.to_string()),
            ("cylinder.nd", c.nd.to_string()),
            ("cylinder.sigma_s", c.sigma_s.to_string()),
            ("cylinder.sigma_d", c.sigma_d.to_string()),
            ("cylinder.omega", c.omega.to_string()),
            ("cylinder.mu_psi", c.mu_psi.to_string()),
            ("cylinder.tau_psi", c.tau_psi.to_string()),
            ("cylinder.min_vc", c.min_vc.to_string()),
            ("cylinder.min_m", c.min_m.to_string()),
            ("cylinder.min_me", c.min_me.to_string()),
            ("cylinder.delta_theta", c.delta_theta.to_string()),
            ("cylinder.empty_cell", empty_cell_label(c.empty_cell).to_string()),
            ("relax.w_r", r.w_r.to_string()),
            ("relax.mu1", r.mu1.to_string()),
            ("relax.tau1", r.tau1.to_string()),
            ("relax.mu2", r.mu2.to_string()),
            ("relax.tau2", r.tau2.to_string()),
            ("relax.mu3", r.mu3.to_string()),
            ("relax.tau3", r.tau3.to_string()),
            ("relax.n_rel", r.n_rel.to_string()),
            ("relax.mu_p", r.mu_p.to_string()),
            ("relax.tau_p", r.tau_p.to_string()),
            ("relax.min_np", r.min_np.to_string()),
            ("relax.max_np", r.max_np.to_string()),
            ("relax.n_r_factor", r.n_r_factor.to_string()),
            ("relax.score_source", r.score_source.to_string()),
            (
                "run.kinds",
                self.kinds.iter().map(|k| k.label()).collect::<Vec<_>>().join(","),
            ),
            ("run.workers", self.workers.to_string()),
            ("run.subjects", self.subjects.to_string()),
            ("run.impressions", self.impressions.to_string()),
            ("run.image_ext", self.image_ext.clone()),
            ("run.minutiae_ext", self.minutiae_ext.clone()),
            ("run.cache_dir", self.cache_dir.clone()),
        ]
    }

    /// Sets one key. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        let e = &mut self.enhancement;
        let s = &mut self.stft;
        let c = &mut self.cylinder;
        let r = &mut self.relax;
        match key.trim() {
            "enhance.block_size" => e.block_size = num(v)?,
            "enhance.variance_threshold_ratio" => e.variance_threshold_ratio = num(v)?,
            "enhance.smqt_levels" => e.smqt_levels = num(v)?,
            "enhance.gabor_kernel_radius" => e.gabor_kernel_radius = num(v)?,
            "enhance.gabor_sigma" => e.gabor_sigma = num(v)?,
            "stft.window_size" => s.window_size = num(v)?,
            "stft.overlap" => s.overlap = num(v)?,
            "stft.fft_size" => s.fft_size = num(v)?,
            "stft.freq_low" => s.freq_band.0 = num(v)?,
            "stft.freq_high" => s.freq_band.1 = num(v)?,
            "stft.root_exponent" => s.root_exponent = num(v)?,
            "stft.radial_order" => s.bandpass_orders.0 = num(v)?,
            "stft.angular_order" => s.bandpass_orders.1 = num(v)?,
            "stft.radial_bandwidth" => s.radial_bandwidth = num(v)?,
            "stft.angular_bandwidth" => s.angular_bandwidth = num(v)?,
            "cylinder.radius" => c.radius = num(v)?,
            "cylinder.ns" => c.ns = num(v)?,
            "cylinder.nd" => c.nd = num(v)?,
            "cylinder.sigma_s" => c.sigma_s = num(v)?,
            "cylinder.sigma_d" => c.sigma_d = num(v)?,
            "cylinder.omega" => c.omega = num(v)?,
            "cylinder.mu_psi" => c.mu_psi = num(v)?,
            "cylinder.tau_psi" => c.tau_psi = num(v)?,
            "cylinder.min_vc" => c.min_vc = num(v)?,
            "cylinder.min_m" => c.min_m = num(v)?,
            "cylinder.min_me" => c.min_me = num(v)?,
            "cylinder.delta_theta" => c.delta_theta = num(v)?,
            "cylinder.empty_cell" => {
                c.empty_cell = match v {
                    "sigmoid" => EmptyCellValue::Sigmoid,
                    "zero" => EmptyCellValue::Zero,
                    _ => return Err(format!("invalid value `{v}` (expected sigmoid|zero)")),
                }
            }
            "relax.w_r" => r.w_r = num(v)?,
            "relax.mu1" => r.mu1 = num(v)?,
            "relax.tau1" => r.tau1 = num(v)?,
            "relax.mu2" => r.mu2 = num(v)?,
            "relax.tau2" => r.tau2 = num(v)?,
            "relax.mu3" => r.mu3 = num(v)?,
            "relax.tau3" => r.tau3 = num(v)?,
            "relax.n_rel" => r.n_rel = num(v)?,
            "relax.mu_p" => r.mu_p = num(v)?,
            "relax.tau_p" => r.tau_p = num(v)?,
            "relax.min_np" => r.min_np = num(v)?,
            "relax.max_np" => r.max_np = num(v)?,
            "relax.n_r_factor" => r.n_r_factor = num(v)?,
            "relax.score_source" => r.score_source = v.parse().map_err(|e: Error| e.to_string())?,
            "run.kinds" => self.kinds = parse_kinds(v).map_err(|e| e.to_string())?,
            "run.workers" => self.workers = num(v)?,
            "run.subjects" => self.subjects = num(v)?,
            "run.impressions" => self.impressions = num(v)?,
            "run.image_ext" => self.image_ext = v.to_string(),
            "run.minutiae_ext" => self.minutiae_ext = v.to_string(),
            "run.cache_dir" => self.cache_dir = v.to_string(),
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: "expected `key = value`".into(),
            })?;
            self.set(k, v)
                .map_err(|message| Error::Parse { line: n + 1, message })?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// The entries of the given sections, used to key caches.
    pub fn section_text(&self, prefixes: &[&str]) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            if prefixes.iter().any(|p| k.starts_with(p)) {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.enhancement.validate()?;
        self.stft.validate()?;
        self.cylinder.validate()?;
        self.relax.validate()?;
        if self.kinds.is_empty() {
            return Err(Error::InvalidParams("run.kinds is empty".into()));
        }
        if self.subjects < 2 || self.impressions < 2 {
            return Err(Error::InvalidParams(
                "run.subjects and run.impressions must be >= 2".into(),
            ));
        }
        Ok(())
    }
}
