//! Cylinder similarity, local similarity sort and relaxation.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::descriptor::{angle_diff, sigmoid};
use crate::error::{Error, Result};
use crate::template::{Cylinder, CylinderParams, FeatureKind, Minutia, Template};

/// Denominators below this are treated as zero by the similarity measures.
pub const ZERO_DENOMINATOR: f64 = 1e-6;

/// Which per-pair value the global score averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreSource {
    /// lambda after the last relaxation iteration.
    Relaxed,
    /// lambda before relaxation, i.e. the local similarity itself.
    Raw,
}

impl std::fmt::Display for ScoreSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Relaxed => "relaxed",
            Self::Raw => "raw",
        })
    }
}

impl std::str::FromStr for ScoreSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relaxed" => Ok(Self::Relaxed),
            "raw" => Ok(Self::Raw),
            _ => Err(Error::InvalidParams(format!(
                "unknown score source `{s}` (expected relaxed|raw)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxParams {
    pub w_r: f64,
    pub mu1: f64,
    pub tau1: f64,
    pub mu2: f64,
    pub tau2: f64,
    pub mu3: f64,
    pub tau3: f64,
    pub n_rel: usize,
    pub mu_p: f64,
    pub tau_p: f64,
    pub min_np: usize,
    pub max_np: usize,
    /// Pairs handed to relaxation: `n_R = min(n_r_factor * n_p, n_A, n_B)`.
    pub n_r_factor: usize,
    pub score_source: ScoreSource,
}

impl Default for RelaxParams {
    fn default() -> Self {
        Self {
            w_r: 0.6,
            mu1: 12.0,
            tau1: -0.8,
            mu2: PI / 12.0,
            tau2: -30.0,
            mu3: PI / 28.0,
            tau3: -10.0,
            n_rel: 4,
            mu_p: 30.0,
            tau_p: 2.0 / 5.0,
            min_np: 4,
            max_np: 10,
            n_r_factor: 2,
            score_source: ScoreSource::Relaxed,
        }
    }
}

impl RelaxParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.w_r) {
            return Err(Error::InvalidParams("relax: w_r must be in [0, 1]".into()));
        }
        let all = [
            self.mu1, self.tau1, self.mu2, self.tau2, self.mu3, self.tau3, self.mu_p, self.tau_p,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("relax: sigmoid constants must be finite".into()));
        }
        if self.min_np == 0 || self.min_np > self.max_np {
            return Err(Error::InvalidParams("relax: need 1 <= min_np <= max_np".into()));
        }
        if self.n_r_factor == 0 {
            return Err(Error::InvalidParams("relax: n_r_factor must be positive".into()));
        }
        Ok(())
    }
}

/// Row-major `n_A x n_B` matrix of cylinder similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidParams(format!(
                "matrix has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("matrix entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub reference: usize,
    pub query: usize,
    /// Local similarity before relaxation.
    pub similarity: f64,
    /// lambda after the last relaxation iteration.
    pub relaxed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub score: f64,
    pub pairs: Vec<MatchedPair>,
    /// Number of pairs the score is averaged over. `pairs` can be shorter
    /// when fewer cylinder pairs have positive similarity; the missing
    /// pairs count as zero.
    pub n_p: usize,
}

impl MatchResult {
    fn empty() -> Self {
        Self {
            score: 0.0,
            pairs: Vec::new(),
            n_p: 0,
        }
    }
}

fn check_cells(c: &Cylinder, p: &CylinderParams) -> Result<()> {
    let nc = p.n_cells();
    if c.values.len() != nc || c.cell_valid.len() != nc {
        return Err(Error::InvalidParams(format!(
            "cylinder has {} cells, params expect {nc}",
            c.values.len()
        )));
    }
    Ok(())
}

fn joint_valid_count(a: &Cylinder, b: &Cylinder) -> usize {
    a.cell_valid
        .iter()
        .zip(&b.cell_valid)
        .filter(|(x, y)| **x && **y)
        .count()
}

fn matchable_unchecked(a: &Cylinder, b: &Cylinder, p: &CylinderParams) -> bool {
    angle_diff(a.center.theta, b.center.theta).abs() <= p.delta_theta
        && joint_valid_count(a, b) as f64 / p.n_cells() as f64 >= p.min_me
}

pub fn matchable(a: &Cylinder, b: &Cylinder, p: &CylinderParams) -> Result<bool> {
    check_cells(a, p)?;
    check_cells(b, p)?;
    Ok(matchable_unchecked(a, b, p))
}

/// `1 - |a - b| / (|a| + |b|)`, 0 when the denominator vanishes.
fn normalized_distance_similarity(diff2: f64, a2: f64, b2: f64) -> f64 {
    let denom = a2.sqrt() + b2.sqrt();
    if denom < ZERO_DENOMINATOR {
        0.0
    } else {
        1.0 - diff2.sqrt() / denom
    }
}

fn euclidean_over(a: &Cylinder, b: &Cylinder) -> f64 {
    let (mut d2, mut a2, mut b2) = (0.0, 0.0, 0.0);
    for i in 0..a.values.len() {
        if a.cell_valid[i] && b.cell_valid[i] {
            let (x, y) = (a.values[i] as f64, b.values[i] as f64);
            d2 += (x - y) * (x - y);
            a2 += x * x;
            b2 += y * y;
        }
    }
    normalized_distance_similarity(d2, a2, b2)
}

/// Euclidean similarity over the cells valid in both cylinders.
pub fn similarity_euclidean(a: &Cylinder, b: &Cylinder, p: &CylinderParams) -> Result<f64> {
    if !matchable(a, b, p)? {
        return Ok(0.0);
    }
    Ok(euclidean_over(a, b))
}

/// Per-cylinder `cos(2v)` and `sin(2v)` of every cell value.
struct DoubleAngle {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl DoubleAngle {
    fn of(c: &Cylinder) -> Self {
        let (cos, sin) = c
            .values
            .iter()
            .map(|&v| ((2.0 * v as f64).cos(), (2.0 * v as f64).sin()))
            .unzip();
        Self { cos, sin }
    }
}

fn double_angle_over(a: &Cylinder, da: &DoubleAngle, b: &Cylinder, db: &DoubleAngle) -> f64 {
    let (mut cd, mut ca, mut cb) = (0.0, 0.0, 0.0);
    let (mut sd, mut sa, mut sb) = (0.0, 0.0, 0.0);
    for i in 0..a.values.len() {
        if a.cell_valid[i] && b.cell_valid[i] {
            let (x, y) = (da.cos[i], db.cos[i]);
            cd += (x - y) * (x - y);
            ca += x * x;
            cb += y * y;
            let (x, y) = (da.sin[i], db.sin[i]);
            sd += (x - y) * (x - y);
            sa += x * x;
            sb += y * y;
        }
    }
    let cos_d = normalized_distance_similarity(cd, ca, cb);
    let sin_d = normalized_distance_similarity(sd, sa, sb);
    (cos_d * cos_d + sin_d * sin_d).sqrt() / 2.0
}

/// Double-angle similarity over the cells valid in both cylinders; at most
/// `sqrt(2)/2`.
pub fn similarity_double_angle(a: &Cylinder, b: &Cylinder, p: &CylinderParams) -> Result<f64> {
    if !matchable(a, b, p)? {
        return Ok(0.0);
    }
    Ok(double_angle_over(a, &DoubleAngle::of(a), b, &DoubleAngle::of(b)))
}

fn check_compatible(ta: &Template, tb: &Template) -> Result<()> {
    if ta.kind != tb.kind {
        return Err(Error::KindMismatch(ta.kind, tb.kind));
    }
    let (pa, pb) = (&ta.params, &tb.params);
    if pa.ns != pb.ns || pa.nd != pb.nd || pa.radius as f32 != pb.radius as f32 {
        return Err(Error::InvalidParams(
            "templates were built with different cylinder geometry".into(),
        ));
    }
    for c in ta.cylinders.iter().chain(&tb.cylinders) {
        check_cells(c, pa)?;
    }
    Ok(())
}

/// Similarity of every reference cylinder against every query cylinder.
/// Matchability uses the reference template's parameters.
pub fn local_similarity_matrix(ta: &Template, tb: &Template) -> Result<SimilarityMatrix> {
    check_compatible(ta, tb)?;
    let p = &ta.params;
    let (na, nb) = (ta.len(), tb.len());
    let data: Vec<f64> = if ta.kind == FeatureKind::O {
        (0..na)
            .into_par_iter()
            .flat_map_iter(|r| {
                let a = &ta.cylinders[r];
                tb.cylinders.iter().map(move |b| {
                    if matchable_unchecked(a, b, p) {
                        euclidean_over(a, b)
                    } else {
                        0.0
                    }
                })
            })
            .collect()
    } else {
        let da: Vec<DoubleAngle> = ta.cylinders.iter().map(DoubleAngle::of).collect();
        let db: Vec<DoubleAngle> = tb.cylinders.iter().map(DoubleAngle::of).collect();
        (0..na)
            .into_par_iter()
            .flat_map_iter(|r| {
                let a = &ta.cylinders[r];
                let da = &da[r];
                tb.cylinders.iter().zip(&db).map(move |(b, db)| {
                    if matchable_unchecked(a, b, p) {
                        double_angle_over(a, da, b, db)
                    } else {
                        0.0
                    }
                })
            })
            .collect()
    };
    SimilarityMatrix::new(na, nb, data)
}

/// Number of pairs the global score averages.
pub fn compute_np(n_a: usize, n_b: usize, rp: &RelaxParams) -> usize {
    let n = n_a.min(n_b);
    let z = sigmoid(n as f64, rp.mu_p, rp.tau_p);
    let np = rp.min_np + (z * (rp.max_np - rp.min_np) as f64).round() as usize;
    let upper = rp.max_np.min(n);
    np.max(rp.min_np).min(upper)
}

/// Greedy one-to-one pick of up to `n` entries by descending similarity,
/// ties by (row, col). Non-positive entries are never selected.
pub fn lss_select(lsm: &SimilarityMatrix, n: usize) -> Vec<(usize, usize, f64)> {
    let mut entries: Vec<(usize, usize, f64)> = (0..lsm.rows)
        .flat_map(|r| (0..lsm.cols).map(move |c| (r, c)))
        .map(|(r, c)| (r, c, lsm.get(r, c)))
        .filter(|e| e.2 > 0.0)
        .collect();
    entries.sort_by(|x, y| y.2.total_cmp(&x.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
    let mut row_used = vec![false; lsm.rows];
    let mut col_used = vec![false; lsm.cols];
    let mut out = Vec::with_capacity(n.min(lsm.rows.min(lsm.cols)));
    for (r, c, s) in entries {
        if out.len() == n {
            break;
        }
        if row_used[r] || col_used[c] {
            continue;
        }
        row_used[r] = true;
        col_used[c] = true;
        out.push((r, c, s));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxedPair {
    pub reference: usize,
    pub query: usize,
    pub lambda0: f64,
    pub lambda: f64,
    pub efficiency: f64,
}

/// Screen angle of the vector from `v` to `u`, measured counter-clockwise
/// like minutia directions (pixel y points down).
#[inline]
fn radial_angle(u: &Minutia, v: &Minutia) -> f64 {
    angle_diff(u.theta, (-(u.y - v.y)).atan2(u.x - v.x))
}

/// Structural compatibility of pairs (a_t, b_t) and (a_k, b_k).
pub fn compatibility(at: &Minutia, ak: &Minutia, bt: &Minutia, bk: &Minutia, rp: &RelaxParams) -> f64 {
    let d1 = (at.distance(ak.x, ak.y) - bt.distance(bk.x, bk.y)).abs();
    let d2 = angle_diff(angle_diff(at.theta, ak.theta), angle_diff(bt.theta, bk.theta)).abs();
    let d3 = angle_diff(radial_angle(at, ak), radial_angle(bt, bk)).abs();
    sigmoid(d1, rp.mu1, rp.tau1) * sigmoid(d2, rp.mu2, rp.tau2) * sigmoid(d3, rp.mu3, rp.tau3)
}

/// Iteratively penalizes pairs that disagree geometrically with the others.
pub fn relax(pairs: &[(usize, usize, f64)], a: &[Minutia], b: &[Minutia], rp: &RelaxParams) -> Vec<RelaxedPair> {
    let n = pairs.len();
    let mut lambda: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    if n >= 2 && rp.n_rel > 0 {
        let mut rho = vec![0.0; n * n];
        for t in 0..n {
            for k in 0..n {
                if k != t {
                    let (at, bt) = (&a[pairs[t].0], &b[pairs[t].1]);
                    let (ak, bk) = (&a[pairs[k].0], &b[pairs[k].1]);
                    rho[t * n + k] = compatibility(at, ak, bt, bk, rp);
                }
            }
        }
        let mut next = vec![0.0; n];
        for _ in 0..rp.n_rel {
            for t in 0..n {
                let support: f64 = (0..n).filter(|&k| k != t).map(|k| rho[t * n + k] * lambda[k]).sum();
                next[t] = rp.w_r * lambda[t] + (1.0 - rp.w_r) * support / (n - 1) as f64;
            }
            std::mem::swap(&mut lambda, &mut next);
        }
    }
    pairs
        .iter()
        .zip(&lambda)
        .map(|(&(r, c, l0), &l)| RelaxedPair {
            reference: r,
            query: c,
            lambda0: l0,
            lambda: l,
            efficiency: if n < 2 || rp.n_rel == 0 {
                1.0
            } else if l0 == 0.0 {
                0.0
            } else {
                l / l0
            },
        })
        .collect()
}

/// Full template comparison.
pub fn global_score(ta: &Template, tb: &Template, rp: &RelaxParams) -> Result<MatchResult> {
    let lsm = local_similarity_matrix(ta, tb)?;
    Ok(score_from_matrix(&lsm, ta, tb, rp))
}

pub fn score_from_matrix(lsm: &SimilarityMatrix, ta: &Template, tb: &Template, rp: &RelaxParams) -> MatchResult {
    let (na, nb) = (ta.len(), tb.len());
    if na == 0 || nb == 0 {
        return MatchResult::empty();
    }
    let n_p = compute_np(na, nb, rp);
    let n_r = (rp.n_r_factor * n_p).min(na).min(nb);
    let selected = lss_select(lsm, n_r);
    if selected.is_empty() {
        return MatchResult {
            n_p,
            ..MatchResult::empty()
        };
    }
    let a: Vec<Minutia> = ta.minutiae().copied().collect();
    let b: Vec<Minutia> = tb.minutiae().copied().collect();
    let relaxed = relax(&selected, &a, &b, rp);

    let mut order: Vec<usize> = (0..relaxed.len()).collect();
    order.sort_by(|&x, &y| {
        relaxed[y]
            .efficiency
            .total_cmp(&relaxed[x].efficiency)
            .then(relaxed[y].lambda0.total_cmp(&relaxed[x].lambda0))
            .then(x.cmp(&y))
    });
    order.truncate(n_p);
    let pairs: Vec<MatchedPair> = order
        .iter()
        .map(|&i| MatchedPair {
            reference: relaxed[i].reference,
            query: relaxed[i].query,
            similarity: relaxed[i].lambda0,
            relaxed: relaxed[i].lambda,
        })
        .collect();
    let total: f64 = pairs
        .iter()
        .map(|p| match rp.score_source {
            ScoreSource::Relaxed => p.relaxed,
            ScoreSource::Raw => p.similarity,
        })
        .sum();
    MatchResult {
        score: (total / n_p as f64).clamp(0.0, 1.0),
        pairs,
        n_p,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cyl(theta: f64, values: &[f32], valid: &[bool]) -> Cylinder {
        Cylinder {
            center: Minutia::new(0.0, 0.0, theta, 1.0),
            values: values.to_vec(),
            cell_valid: valid.to_vec(),
            valid: true,
        }
    }

    fn tiny_params() -> CylinderParams {
        CylinderParams {
            ns: 1,
            nd: 2,
            ..CylinderParams::default()
        }
    }

    #[test]
    fn matchability() {
        let p = tiny_params();
        let a = cyl(0.0, &[0.5, 0.5], &[true, true]);
        let b = cyl(PI, &[0.5, 0.5], &[true, true]);
        assert!(!matchable(&a, &b, &p).unwrap());
        assert!(matchable(&a, &a, &p).unwrap());
        let c = cyl(0.0, &[0.0, 0.5], &[false, true]);
        let d = cyl(0.0, &[0.5, 0.0], &[true, false]);
        assert!(!matchable(&c, &d, &p).unwrap());
        assert!(matchable(&a, &cyl(0.0, &[0.1], &[true]), &p).is_err());
    }

    #[test]
    fn euclidean_cases() {
        let p = tiny_params();
        let a = cyl(0.0, &[1.0, 0.0], &[true, true]);
        let b = cyl(0.0, &[0.0, 1.0], &[true, true]);
        let s = similarity_euclidean(&a, &b, &p).unwrap();
        assert!((s - (1.0 - 2f64.sqrt() / 2.0)).abs() < 1e-12);
        assert_eq!(s, similarity_euclidean(&b, &a, &p).unwrap());
        assert_eq!(similarity_euclidean(&a, &a, &p).unwrap(), 1.0);
        let far = cyl(PI, &[1.0, 0.0], &[true, true]);
        assert_eq!(similarity_euclidean(&a, &far, &p).unwrap(), 0.0);
        let zero = cyl(0.0, &[0.0, 0.0], &[true, true]);
        assert_eq!(similarity_euclidean(&zero, &zero, &p).unwrap(), 0.0);
    }

    #[test]
    fn double_angle_cases() {
        let p = tiny_params();
        let a = cyl(0.0, &[0.3, 0.7], &[true, true]);
        let s = similarity_double_angle(&a, &a, &p).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
        let x = cyl(0.0, &[0.0, PI as f32], &[true, true]);
        let y = cyl(0.0, &[PI as f32, 0.0], &[true, true]);
        assert!((similarity_double_angle(&x, &y, &p).unwrap() - 0.5).abs() < 1e-6);
        let far = cyl(PI, &[0.3, 0.7], &[true, true]);
        assert_eq!(similarity_double_angle(&a, &far, &p).unwrap(), 0.0);
    }

    #[test]
    fn np_formula() {
        let rp = RelaxParams::default();
        assert_eq!(compute_np(30, 40, &rp), 7);
        assert_eq!(compute_np(1000, 1000, &rp), 10);
        assert_eq!(compute_np(2, 50, &rp), 2);
        assert_eq!(compute_np(5, 5, &rp), 4);
    }

    #[test]
    fn greedy_selection() {
        let m = SimilarityMatrix::new(2, 2, vec![0.9, 0.1, 0.2, 0.8]).unwrap();
        assert_eq!(lss_select(&m, 2), vec![(0, 0, 0.9), (1, 1, 0.8)]);
        let m = SimilarityMatrix::new(2, 2, vec![0.9, 0.8, 0.85, 0.1]).unwrap();
        assert_eq!(lss_select(&m, 2), vec![(0, 0, 0.9), (1, 1, 0.1)]);
        let m = SimilarityMatrix::new(2, 3, vec![0.5; 6]).unwrap();
        assert_eq!(lss_select(&m, 5), vec![(0, 0, 0.5), (1, 1, 0.5)]);
    }

    type Pairs = Vec<(usize, usize, f64)>;

    fn rigid_pairs(n: usize, phi: f64) -> (Vec<Minutia>, Vec<Minutia>, Pairs) {
        let a: Vec<Minutia> = (0..n)
            .map(|i| {
                let t = i as f64;
                Minutia::new(
                    100.0 + 37.0 * (t * 1.3).sin(),
                    120.0 + 41.0 * (t * 0.7).cos(),
                    t * 0.9,
                    1.0,
                )
            })
            .collect();
        let (s, c) = phi.sin_cos();
        let b: Vec<Minutia> = a
            .iter()
            .map(|m| {
                let (dx, dy) = (m.x - 100.0, m.y - 100.0);
                Minutia::new(110.0 + c * dx + s * dy, 95.0 - s * dx + c * dy, m.theta + phi, 1.0)
            })
            .collect();
        let pairs = (0..n).map(|i| (i, i, 1.0)).collect();
        (a, b, pairs)
    }

    #[test]
    fn rigid_pairs_follow_closed_form() {
        let rp = RelaxParams::default();
        let (a, b, pairs) = rigid_pairs(6, 0.4);
        let rho0 = sigmoid(0.0, rp.mu1, rp.tau1) * sigmoid(0.0, rp.mu2, rp.tau2) * sigmoid(0.0, rp.mu3, rp.tau3);
        let expect = (rp.w_r + (1.0 - rp.w_r) * rho0).powi(rp.n_rel as i32);
        for r in relax(&pairs, &a, &b, &rp) {
            assert!((r.efficiency - expect).abs() < 1e-9, "{} vs {expect}", r.efficiency);
        }
    }

    #[test]
    fn no_iterations_keep_lambda() {
        let rp = RelaxParams {
            n_rel: 0,
            ..RelaxParams::default()
        };
        let (a, b, pairs) = rigid_pairs(4, 0.1);
        for r in relax(&pairs, &a, &b, &rp) {
            assert_eq!(r.efficiency, 1.0);
            assert_eq!(r.lambda, r.lambda0);
        }
    }

    #[test]
    fn outlier_is_demoted() {
        let rp = RelaxParams::default();
        let (a, mut b, pairs) = rigid_pairs(10, -0.3);
        b[7] = Minutia::new(30.0, 200.0, 2.5, 1.0);
        let out = relax(&pairs, &a, &b, &rp);
        for (i, r) in out.iter().enumerate() {
            if i != 7 {
                assert!(out[7].efficiency < r.efficiency);
            }
        }
    }
}
