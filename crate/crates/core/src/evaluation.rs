//! Verification protocol: genuine/impostor scoring and error-rate metrics.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matcher::{global_score, RelaxParams};
use crate::template::{deserialize_template, FeatureKind, Template};

/// FMR ceiling of the FMR1000 operating point.
pub const FMR1000_TARGET: f64 = 0.001;

/// `<subject>_<impression>.<ext>` files under `root`, both indices 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetLayout {
    pub root: PathBuf,
    pub subjects: usize,
    pub impressions: usize,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>, subjects: usize, impressions: usize) -> Result<Self> {
        if subjects < 2 || impressions < 2 {
            return Err(Error::InvalidParams(format!(
                "dataset needs >= 2 subjects and impressions, got {subjects}x{impressions}"
            )));
        }
        Ok(Self {
            root: root.into(),
            subjects,
            impressions,
        })
    }

    pub fn file_stem(subject: usize, impression: usize) -> String {
        format!("{subject}_{impression}")
    }

    pub fn path(&self, subject: usize, impression: usize, ext: &str) -> PathBuf {
        self.root
            .join(format!("{}.{ext}", Self::file_stem(subject, impression)))
    }

    pub fn template_path(&self, subject: usize, impression: usize, kind: FeatureKind) -> PathBuf {
        self.path(subject, impression, &format!("{kind}.mtcc"))
    }

    /// Every unordered impression pair within each subject.
    pub fn genuine_pairs(&self) -> Vec<(Sample, Sample)> {
        let mut out = Vec::with_capacity(pair_counts(self.subjects, self.impressions).0);
        for s in 1..=self.subjects {
            for i in 1..=self.impressions {
                for j in i + 1..=self.impressions {
                    out.push((Sample::new(s, i), Sample::new(s, j)));
                }
            }
        }
        out
    }

    /// Every unordered subject pair, first impressions only.
    pub fn impostor_pairs(&self) -> Vec<(Sample, Sample)> {
        let mut out = Vec::with_capacity(pair_counts(self.subjects, self.impressions).1);
        for s in 1..=self.subjects {
            for t in s + 1..=self.subjects {
                out.push((Sample::new(s, 1), Sample::new(t, 1)));
            }
        }
        out
    }
}

/// Genuine and impostor comparison counts for a dataset shape.
pub fn pair_counts(subjects: usize, impressions: usize) -> (usize, usize) {
    (
        subjects * impressions * impressions.saturating_sub(1) / 2,
        subjects * subjects.saturating_sub(1) / 2,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sample {
    pub subject: usize,
    pub impression: usize,
}

impl Sample {
    pub fn new(subject: usize, impression: usize) -> Self {
        Self { subject, impression }
    }
}

impl std::fmt::Display for Sample {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}_{}", self.subject, self.impression)
    }
}

/// Supplies the template of one sample, or the reason it is unavailable.
pub trait TemplateSource: Sync {
    fn load(&self, sample: Sample, kind: FeatureKind) -> std::result::Result<Template, String>;
}

/// Reads `<root>/<subject>_<impression>.<kind>.mtcc`.
pub struct DirectorySource {
    layout: DatasetLayout,
}

impl DirectorySource {
    pub fn new(layout: DatasetLayout) -> Self {
        Self { layout }
    }
}

impl TemplateSource for DirectorySource {
    fn load(&self, sample: Sample, kind: FeatureKind) -> std::result::Result<Template, String> {
        let path = self.layout.template_path(sample.subject, sample.impression, kind);
        let bytes = fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        deserialize_template(&bytes).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// Templates held in memory, keyed by sample.
#[derive(Default)]
pub struct MemorySource {
    templates: std::collections::BTreeMap<Sample, Template>,
}

impl MemorySource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, sample: Sample, t: Template) {
        self.templates.insert(sample, t);
    }
}

impl TemplateSource for MemorySource {
    fn load(&self, sample: Sample, _kind: FeatureKind) -> std::result::Result<Template, String> {
        self.templates
            .get(&sample)
            .cloned()
            .ok_or_else(|| format!("no template for {sample}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedPair {
    pub a: Sample,
    pub b: Sample,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub fmr: f64,
    pub fnmr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fmr1000 {
    /// FNMR at the operating point.
    pub fnmr: f64,
    /// FMR actually reached there.
    pub fmr: f64,
    pub threshold: f64,
    /// False when there are fewer than 1000 impostor scores, so the
    /// operating point is the closest achievable one rather than 0.1%.
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub kind: FeatureKind,
    pub genuine_scores: Vec<f64>,
    pub impostor_scores: Vec<f64>,
    pub eer: f64,
    pub fmr1000: Fmr1000,
    pub det_points: Vec<DetPoint>,
    /// (FMR, 1 - FNMR) per threshold.
    pub roc_points: Vec<(f64, f64)>,
    pub skipped: Vec<SkippedPair>,
}

impl EvalReport {
    pub fn from_scores(
        kind: FeatureKind,
        genuine: Vec<f64>,
        impostor: Vec<f64>,
        skipped: Vec<SkippedPair>,
    ) -> Result<Self> {
        let det_points = det_curve(&genuine, &impostor)?;
        let eer = eer_from_curve(&det_points);
        let fmr1000 = fmr1000_from_curve(&det_points, impostor.len());
        let roc_points = det_points.iter().map(|p| (p.fmr, 1.0 - p.fnmr)).collect();
        Ok(Self {
            kind,
            genuine_scores: genuine,
            impostor_scores: impostor,
            eer,
            fmr1000,
            det_points,
            roc_points,
            skipped,
        })
    }
}

/// Scores every protocol pair from templates on disk.
pub fn run_protocol(layout: &DatasetLayout, kind: FeatureKind, rp: &RelaxParams) -> Result<EvalReport> {
    let source = DirectorySource::new(layout.clone());
    run_protocol_with(layout, &source, kind, rp)
}

/// Scores every protocol pair. Pairs whose templates cannot be obtained score
/// 0 and are listed in `skipped`. Scoring runs in parallel; the output order
/// is fixed by the pair enumeration.
pub fn run_protocol_with(
    layout: &DatasetLayout,
    source: &dyn TemplateSource,
    kind: FeatureKind,
    rp: &RelaxParams,
) -> Result<EvalReport> {
    rp.validate()?;
    let mut samples: Vec<Sample> = Vec::new();
    for s in 1..=layout.subjects {
        for i in 1..=layout.impressions {
            samples.push(Sample::new(s, i));
        }
    }
    let loaded: Vec<std::result::Result<Template, String>> = samples
        .par_iter()
        .map(|&s| {
            source.load(s, kind).and_then(|t| {
                if t.kind == kind {
                    Ok(t)
                } else {
                    Err(format!("{s}: template kind {} where {kind} was expected", t.kind))
                }
            })
        })
        .collect();
    let index = |s: Sample| (s.subject - 1) * layout.impressions + (s.impression - 1);

    let score_all = |pairs: Vec<(Sample, Sample)>| -> Result<(Vec<f64>, Vec<SkippedPair>)> {
        let results: Vec<std::result::Result<f64, SkippedPair>> = pairs
            .par_iter()
            .map(|&(a, b)| {
                let skip = |reason: &String| SkippedPair {
                    a,
                    b,
                    reason: reason.clone(),
                };
                let ta = loaded[index(a)].as_ref().map_err(skip)?;
                let tb = loaded[index(b)].as_ref().map_err(skip)?;
                global_score(ta, tb, rp)
                    .map(|m| m.score)
                    .map_err(|e| skip(&e.to_string()))
            })
            .collect();
        let mut scores = Vec::with_capacity(results.len());
        let mut skipped = Vec::new();
        for r in results {
            match r {
                Ok(s) => scores.push(s),
                Err(sk) => {
                    scores.push(0.0);
                    skipped.push(sk);
                }
            }
        }
        Ok((scores, skipped))
    };
    let (genuine, mut skipped) = score_all(layout.genuine_pairs())?;
    let (impostor, skipped_imp) = score_all(layout.impostor_pairs())?;
    skipped.extend(skipped_imp);
    EvalReport::from_scores(kind, genuine, impostor, skipped)
}

fn check_scores(genuine: &[f64], impostor: &[f64]) -> Result<()> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::EmptyScores);
    }
    if genuine.iter().chain(impostor).any(|s| s.is_nan()) {
        return Err(Error::InvalidParams("scores must not be NaN".into()));
    }
    Ok(())
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// (FMR, FNMR) at threshold `t`: impostors `>= t` are false matches,
/// genuines `< t` false non-matches.
pub fn error_rates(genuine: &[f64], impostor: &[f64], t: f64) -> (f64, f64) {
    let fm = impostor.iter().filter(|&&s| s >= t).count();
    let fnm = genuine.iter().filter(|&&s| s < t).count();
    (fm as f64 / impostor.len() as f64, fnm as f64 / genuine.len() as f64)
}

/// Error rates at every distinct observed score plus `+inf`, thresholds
/// ascending.
pub fn det_curve(genuine: &[f64], impostor: &[f64]) -> Result<Vec<DetPoint>> {
    check_scores(genuine, impostor)?;
    let g = sorted(genuine);
    let im = sorted(impostor);
    let mut thresholds: Vec<f64> = g.iter().chain(&im).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    if thresholds.last() != Some(&f64::INFINITY) {
        thresholds.push(f64::INFINITY);
    }
    let points: Vec<DetPoint> = thresholds
        .into_iter()
        .map(|t| {
            let fm = im.len() - im.partition_point(|&s| s < t);
            let fnm = g.partition_point(|&s| s < t);
            DetPoint {
                threshold: t,
                fmr: fm as f64 / im.len() as f64,
                fnmr: fnm as f64 / g.len() as f64,
            }
        })
        .collect();
    for w in points.windows(2) {
        assert!(
            w[1].fmr <= w[0].fmr && w[1].fnmr >= w[0].fnmr,
            "error rates must be monotone in the threshold"
        );
    }
    Ok(points)
}

fn eer_from_curve(points: &[DetPoint]) -> f64 {
    let mut best = &points[0];
    for p in &points[1..] {
        if (p.fmr - p.fnmr).abs() < (best.fmr - best.fnmr).abs() {
            best = p;
        }
    }
    (best.fmr + best.fnmr) / 2.0
}

fn fmr1000_from_curve(points: &[DetPoint], impostors: usize) -> Fmr1000 {
    let p = points
        .iter()
        .find(|p| p.fmr <= FMR1000_TARGET)
        .expect("the +inf threshold always has FMR 0");
    Fmr1000 {
        fnmr: p.fnmr,
        fmr: p.fmr,
        threshold: p.threshold,
        exact: impostors >= 1000,
    }
}

/// Equal error rate: mean of FMR and FNMR at the threshold where they are
/// closest, the smaller threshold winning ties.
pub fn compute_eer(genuine: &[f64], impostor: &[f64]) -> Result<f64> {
    Ok(eer_from_curve(&det_curve(genuine, impostor)?))
}

/// FNMR at the lowest threshold whose FMR is at most 0.1%.
pub fn compute_fmr1000(genuine: &[f64], impostor: &[f64]) -> Result<Fmr1000> {
    Ok(fmr1000_from_curve(&det_curve(genuine, impostor)?, impostor.len()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Writes `det.csv` and `roc.csv` into `out_dir`, creating it if needed.
pub fn emit_curves(report: &EvalReport, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(out_dir)?;
    let mut det = String::from("threshold,fmr,fnmr\n");
    for p in &report.det_points {
        let _ = writeln!(det, "{},{},{}", p.threshold, p.fmr, p.fnmr);
    }
    let mut roc = String::from("fmr,tpr\n");
    for (fmr, tpr) in &report.roc_points {
        let _ = writeln!(roc, "{fmr},{tpr}");
    }
    let det_path = out_dir.join("det.csv");
    let roc_path = out_dir.join("roc.csv");
    write_file(&det_path, &det)?;
    write_file(&roc_path, &roc)?;
    Ok((det_path, roc_path))
}

fn parse_rows<const N: usize>(text: &str) -> Result<Vec<[f64; N]>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != N {
            return Err(Error::Parse {
                line: n + 1,
                message: format!("expected {N} columns"),
            });
        }
        let mut row = [0.0; N];
        for (slot, f) in row.iter_mut().zip(fields) {
            *slot = f.trim().parse().map_err(|_| Error::Parse {
                line: n + 1,
                message: format!("not a number: `{f}`"),
            })?;
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn parse_det_csv(text: &str) -> Result<Vec<DetPoint>> {
    Ok(parse_rows::<3>(text)?
        .into_iter()
        .map(|[threshold, fmr, fnmr]| DetPoint { threshold, fmr, fnmr })
        .collect())
}

pub fn parse_roc_csv(text: &str) -> Result<Vec<(f64, f64)>> {
    Ok(parse_rows::<2>(text)?.into_iter().map(|[a, b]| (a, b)).collect())
}

/// One row per report: kind, EER, FMR1000, genuine and impostor counts.
pub fn write_summary(reports: &[EvalReport], path: &Path) -> Result<()> {
    let mut s = String::from("kind,eer,fmr1000,genuine,impostor\n");
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.kind,
            r.eer,
            r.fmr1000.fnmr,
            r.genuine_scores.len(),
            r.impostor_scores.len()
        );
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_file(path, &s)
}
