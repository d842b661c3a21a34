//! Evaluation metrics for weighted particle configurations.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::kernel::{cross_kernel, gram, KernelSpec};
use crate::msip::{ExactEmbedding, GmmExact};
use crate::targets::{GmmTarget, TargetDensity};

/// Weight sums smaller than this in magnitude cannot be normalized.
pub const NORMALIZE_TOL: f64 = 1e-12;

/// `w / Σ w`, keeping signs.
pub fn normalize_weights(w: &DVector<f64>) -> Result<DVector<f64>> {
    let sum = w.sum();
    if !(sum.abs() >= NORMALIZE_TOL) {
        return Err(Error::NonNormalizable { sum });
    }
    Ok(w / sum)
}

fn quad_form(k: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    (w.transpose() * k * w)[(0, 0)]
}

/// `MMD²` between `Σ w_i δ_{y_i}` and the normalized mixture, in closed form.
pub fn mmd2_vs_gmm(y: &DMatrix<f64>, w: &DVector<f64>, gmm: &GmmTarget, sigma: f64) -> Result<f64> {
    let exact = GmmExact::new(gmm, sigma);
    mmd2_vs_exact(y, w, &exact)
}

/// `MMD²` against any measure with exact embeddings, clamped at zero.
pub fn mmd2_vs_exact(y: &DMatrix<f64>, w: &DVector<f64>, emb: &dyn ExactEmbedding) -> Result<f64> {
    if y.nrows() != w.len() {
        return Err(Error::DimensionMismatch { expected: y.nrows(), found: w.len() });
    }
    if y.ncols() != emb.dim() {
        return Err(Error::DimensionMismatch { expected: emb.dim(), found: y.ncols() });
    }
    let spec = KernelSpec::new(emb.sigma(), 0.0)?;
    let (v0, _) = emb.embeddings(y);
    let k = gram(y, &spec);
    Ok((emb.energy() - 2.0 * w.dot(&v0) + quad_form(k.entries(), w)).max(0.0))
}

/// Empirical kernel mean embedding of a reference sample.
///
/// The sample's self-interaction `(1/N²) Σ κ(x, x')` is computed once, on a
/// grid of cells a cutoff radius wide for `d ≤ 3` (pairs beyond the cutoff
/// have `κ < 1e-17` and are skipped), and by direct summation otherwise.
#[derive(Debug, Clone)]
pub struct SampleEmbedding {
    x: DMatrix<f64>,
    spec: KernelSpec,
    /// `Σ_m κ(x_n, x_m)` for every sample.
    row_sums: Vec<f64>,
    self_term: f64,
}

/// `MMD²` estimate and its bootstrap standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleMmd {
    pub mmd2: f64,
    pub bootstrap_se: f64,
}

const CUTOFF_LOG: f64 = 39.143_946_580_277_8; // ln(1e17)
const GRID_MAX_DIM: usize = 3;

impl SampleEmbedding {
    pub fn new(x: DMatrix<f64>, sigma: f64) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(invalid("reference_sample", "need at least one sample"));
        }
        let spec = KernelSpec::new(sigma, 0.0)?;
        let n = x.nrows() as f64;
        let row_sums = if x.ncols() <= GRID_MAX_DIM {
            grid_row_sums(&x, &spec)
        } else {
            direct_row_sums(&x, &spec)
        };
        let self_term = row_sums.iter().sum::<f64>() / (n * n);
        Ok(Self { x, spec, row_sums, self_term })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// `(1/N²) Σ_{n,m} κ(x_n, x_m)`.
    pub fn self_term(&self) -> f64 {
        self.self_term
    }

    fn cross(&self, y: &DMatrix<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        if y.nrows() != w.len() {
            return Err(Error::DimensionMismatch { expected: y.nrows(), found: w.len() });
        }
        if y.ncols() != self.x.ncols() {
            return Err(Error::DimensionMismatch { expected: self.x.ncols(), found: y.ncols() });
        }
        // Σ_i w_i κ(x_n, y_i) for every sample n
        Ok(cross_kernel(&self.x, y, &self.spec) * w)
    }

    /// V-statistic `MMD²` (not clamped).
    pub fn mmd2(&self, y: &DMatrix<f64>, w: &DVector<f64>) -> Result<f64> {
        let kw = self.cross(y, w)?;
        let k = gram(y, &self.spec);
        Ok(self.self_term - 2.0 * kw.mean() + quad_form(k.entries(), w))
    }

    /// `MMD²` with a bootstrap standard error.
    ///
    /// The estimator is linearized around the sample: its fluctuation is
    /// `(2/N) Σ_n φ(x_n)` with `φ(x) = (1/N) Σ_m κ(x, x_m) - Σ_i w_i κ(x, y_i)`,
    /// and the bootstrap resamples the `φ(x_n)`. This needs the row sums of the
    /// sample Gram matrix, which are computed once at construction.
    pub fn mmd2_with_se(&self, y: &DMatrix<f64>, w: &DVector<f64>, resamples: usize, seed: u64) -> Result<SampleMmd> {
        if resamples < 2 {
            return Err(invalid("resamples", "need at least two bootstrap resamples"));
        }
        let mmd2 = self.mmd2(y, w)?;
        let kw = self.cross(y, w)?;
        let n = self.len();
        let phi: Vec<f64> = (0..n).map(|i| self.row_sums[i] / n as f64 - kw[i]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stats: Vec<f64> = (0..resamples)
            .map(|_| 2.0 * (0..n).map(|_| phi[rng.random_range(0..n)]).sum::<f64>() / n as f64)
            .collect();
        let mean = stats.iter().sum::<f64>() / resamples as f64;
        let var = stats.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (resamples - 1) as f64;
        Ok(SampleMmd { mmd2, bootstrap_se: var.sqrt() })
    }
}

/// V-statistic `MMD²` between `Σ w_i δ_{y_i}` and the empirical measure of `x`.
pub fn mmd2_vs_samples(y: &DMatrix<f64>, w: &DVector<f64>, x: &DMatrix<f64>, sigma: f64) -> Result<f64> {
    SampleEmbedding::new(x.clone(), sigma)?.mmd2(y, w)
}

fn cutoff_sq(spec: &KernelSpec) -> f64 {
    2.0 * spec.sigma * spec.sigma * CUTOFF_LOG
}

fn row_sq_dist(x: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    (0..x.ncols()).map(|j| (x[(a, j)] - x[(b, j)]).powi(2)).sum()
}

fn direct_row_sums(x: &DMatrix<f64>, spec: &KernelSpec) -> Vec<f64> {
    let n = x.nrows();
    let mut sums = vec![1.0; n];
    for a in 0..n {
        for b in (a + 1)..n {
            let k = spec.eval_sq(row_sq_dist(x, a, b));
            sums[a] += k;
            sums[b] += k;
        }
    }
    sums
}

type Cells = BTreeMap<Vec<i64>, Vec<usize>>;

fn build_cells(x: &DMatrix<f64>, width: f64) -> Cells {
    let mut cells: Cells = BTreeMap::new();
    for a in 0..x.nrows() {
        let key = x.row(a).iter().map(|v| (v / width).floor() as i64).collect();
        cells.entry(key).or_default().push(a);
    }
    cells
}

/// Offsets to the "forward" half of the 3^d neighborhood (lexicographically
/// positive), so each unordered pair of distinct cells is visited once.
fn forward_offsets(d: usize) -> Vec<Vec<i64>> {
    let mut all = vec![vec![]];
    for _ in 0..d {
        all = all
            .into_iter()
            .flat_map(|p: Vec<i64>| {
                (-1..=1).map(move |o| {
                    let mut q = p.clone();
                    q.push(o);
                    q
                })
            })
            .collect();
    }
    all.into_iter()
        .filter(|o| o.iter().find(|v| **v != 0).is_some_and(|v| *v > 0))
        .collect()
}

/// Visits every unordered pair of distinct rows within the cutoff.
fn for_each_close_pair(x: &DMatrix<f64>, spec: &KernelSpec, mut f: impl FnMut(usize, usize, f64)) {
    let r2 = cutoff_sq(spec);
    let cells = build_cells(x, r2.sqrt());
    let offsets = forward_offsets(x.ncols());
    let mut neighbor = vec![0i64; x.ncols()];
    for (key, members) in &cells {
        for (s, &a) in members.iter().enumerate() {
            for &b in &members[s + 1..] {
                let d2 = row_sq_dist(x, a, b);
                if d2 <= r2 {
                    f(a, b, spec.eval_sq(d2));
                }
            }
        }
        for off in &offsets {
            neighbor.iter_mut().zip(key.iter().zip(off)).for_each(|(n, (k, o))| *n = k + o);
            if let Some(others) = cells.get(&neighbor) {
                for &a in members {
                    for &b in others {
                        let d2 = row_sq_dist(x, a, b);
                        if d2 <= r2 {
                            f(a, b, spec.eval_sq(d2));
                        }
                    }
                }
            }
        }
    }
}

fn grid_row_sums(x: &DMatrix<f64>, spec: &KernelSpec) -> Vec<f64> {
    let mut sums = vec![1.0; x.nrows()];
    for_each_close_pair(x, spec, |a, b, k| {
        sums[a] += k;
        sums[b] += k;
    });
    sums
}

/// Inverse multiquadric kernel `k(x, y) = (c² + ‖x − y‖²/ℓ²)^β` used by the
/// Stein discrepancy, with the reported KSD `scale · √(max(0, ksd²))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsdParams {
    pub c2: f64,
    pub beta: f64,
    pub bandwidth: f64,
    pub scale: f64,
}

impl Default for KsdParams {
    fn default() -> Self {
        Self { c2: 1.0, beta: -0.5, bandwidth: 1.0, scale: 1.0 }
    }
}

impl KsdParams {
    pub fn with_bandwidth(bandwidth: f64) -> Self {
        Self { bandwidth, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c2 > 0.0 && self.c2.is_finite()) {
            return Err(invalid("c2", "must be positive"));
        }
        if !(self.beta > -1.0 && self.beta < 0.0) {
            return Err(invalid("beta", format!("must lie in (-1, 0), got {}", self.beta)));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(invalid("bandwidth", "must be positive"));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(invalid("scale", "must be positive"));
        }
        Ok(())
    }

    fn base(&self, r2: f64) -> f64 {
        self.c2 + r2 / (self.bandwidth * self.bandwidth)
    }

    /// `k(x, y)` as a function of `r = x − y`.
    pub fn imq(&self, r: &[f64]) -> f64 {
        self.base(sq_norm(r)).powf(self.beta)
    }

    /// `∇_x k(x, y)`; `∇_y k` is its negative.
    pub fn imq_grad_x(&self, r: &[f64]) -> Vec<f64> {
        let l2 = self.bandwidth * self.bandwidth;
        let c = 2.0 * self.beta / l2 * self.base(sq_norm(r)).powf(self.beta - 1.0);
        r.iter().map(|v| c * v).collect()
    }

    /// `tr(∇_x ∇_yᵀ k(x, y))`.
    pub fn imq_trace_xy(&self, r: &[f64]) -> f64 {
        let l2 = self.bandwidth * self.bandwidth;
        let r2 = sq_norm(r);
        let u = self.base(r2);
        let b = self.beta;
        -2.0 * b * r.len() as f64 / l2 * u.powf(b - 1.0) - 4.0 * b * (b - 1.0) / (l2 * l2) * r2 * u.powf(b - 2.0)
    }

    /// Stein kernel `k₀(x, y)` given the scores `sx`, `sy` at `x`, `y`.
    pub fn stein_kernel(&self, x: &[f64], y: &[f64], sx: &[f64], sy: &[f64]) -> f64 {
        let r: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        let k = self.imq(&r);
        let gx = self.imq_grad_x(&r);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        // ∇_y k = -∇_x k
        dot(sx, sy) * k - dot(sx, &gx) + dot(sy, &gx) + self.imq_trace_xy(&r)
    }
}

fn sq_norm(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn scores_at(y: &DMatrix<f64>, target: &TargetDensity) -> Result<Vec<Vec<f64>>> {
    if y.ncols() != target.dim() {
        return Err(Error::DimensionMismatch { expected: target.dim(), found: y.ncols() });
    }
    y.row_iter()
        .enumerate()
        .map(|(i, row)| {
            let x: Vec<f64> = row.iter().copied().collect();
            let s = target.score(&x).ok_or(Error::EstimatorUnavailable("ksd"))?;
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteScore { particle: i });
            }
            Ok(s)
        })
        .collect()
}

/// Stein-kernel Gram matrix `[k₀(y_i, y_j)]`.
pub fn stein_gram(y: &DMatrix<f64>, target: &TargetDensity, p: &KsdParams) -> Result<DMatrix<f64>> {
    p.validate()?;
    let scores = scores_at(y, target)?;
    let rows: Vec<Vec<f64>> = y.row_iter().map(|r| r.iter().copied().collect()).collect();
    let m = rows.len();
    let mut k0 = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = p.stein_kernel(&rows[i], &rows[j], &scores[i], &scores[j]);
            k0[(i, j)] = v;
            k0[(j, i)] = v;
        }
    }
    Ok(k0)
}

/// `Σ_{i,j} w_i w_j k₀(y_i, y_j)` with `w` normalized to unit sum first.
pub fn ksd2(y: &DMatrix<f64>, w: &DVector<f64>, target: &TargetDensity, p: &KsdParams) -> Result<f64> {
    if y.nrows() != w.len() {
        return Err(Error::DimensionMismatch { expected: y.nrows(), found: w.len() });
    }
    let w = normalize_weights(w)?;
    Ok(quad_form(&stein_gram(y, target, p)?, &w))
}

/// Reported KSD: `scale · √(max(0, ksd²))`.
pub fn ksd(y: &DMatrix<f64>, w: &DVector<f64>, target: &TargetDensity, p: &KsdParams) -> Result<f64> {
    Ok(p.scale * ksd2(y, w, target, p)?.max(0.0).sqrt())
}

/// `-Σ w_k log π̃(y_k)`; zero weights contribute nothing.
pub fn weighted_loglik(y: &DMatrix<f64>, w: &DVector<f64>, target: &TargetDensity) -> Result<f64> {
    if y.nrows() != w.len() {
        return Err(Error::DimensionMismatch { expected: y.nrows(), found: w.len() });
    }
    let mut total = 0.0;
    for (row, wk) in y.row_iter().zip(w.iter()) {
        if *wk != 0.0 {
            let x: Vec<f64> = row.iter().copied().collect();
            total -= wk * target.log_density(&x);
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coverage {
    pub covered: usize,
    pub per_mode: Vec<bool>,
}

/// Mode `k` is covered when a particle with normalized weight above
/// `1/(10M)` lies within `radius` of it.
pub fn mode_coverage(y: &DMatrix<f64>, w: &DVector<f64>, modes: &DMatrix<f64>, radius: f64) -> Result<Coverage> {
    if !(radius > 0.0) {
        return Err(invalid("radius", "must be positive"));
    }
    if y.ncols() != modes.ncols() {
        return Err(Error::DimensionMismatch { expected: modes.ncols(), found: y.ncols() });
    }
    let w = normalize_weights(w)?;
    let threshold = 1.0 / (10.0 * y.nrows() as f64);
    let per_mode: Vec<bool> = modes
        .row_iter()
        .map(|mode| {
            y.row_iter()
                .zip(w.iter())
                .any(|(yi, wi)| *wi > threshold && (yi - mode).norm() <= radius)
        })
        .collect();
    Ok(Coverage { covered: per_mode.iter().filter(|c| **c).count(), per_mode })
}

/// One recorded iteration of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub iteration: usize,
    pub mmd2: Option<f64>,
    pub ksd: Option<f64>,
    pub loglik: Option<f64>,
    pub wall_ms: f64,
    pub density_evals: usize,
    pub score_evals: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub algorithm: String,
    pub target: String,
    pub seed: u64,
    pub rows: Vec<MetricRow>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::make_benchmark;
    use approx::assert_relative_eq;

    #[test]
    fn normalization() {
        let w = normalize_weights(&DVector::from_vec(vec![2.0, 2.0])).unwrap();
        assert_eq!(w.as_slice(), &[0.5, 0.5]);
        let w = normalize_weights(&DVector::from_vec(vec![3.0, -1.0])).unwrap();
        assert_eq!(w.as_slice(), &[1.5, -0.5]);
        assert!(matches!(
            normalize_weights(&DVector::from_vec(vec![1e-13, -1e-13])),
            Err(Error::NonNormalizable { .. })
        ));
    }

    #[test]
    fn single_particle_mmd_on_standard_gaussian() {
        let gmm = GmmTarget::new(vec![1.0], vec![DVector::from_vec(vec![0.0])], vec![DMatrix::identity(1, 1)]).unwrap();
        let v = mmd2_vs_gmm(&DMatrix::from_element(1, 1, 0.0), &DVector::from_element(1, 1.0), &gmm, 1.0).unwrap();
        let expect = 1.0 / 3f64.sqrt() - 2.0 / 2f64.sqrt() + 1.0;
        assert_relative_eq!(v, expect, max_relative = 1e-12);
    }

    #[test]
    fn sample_mmd_against_itself_is_zero() {
        let x = DMatrix::from_row_slice(4, 2, &[0.0, 1.0, 2.0, 0.5, -1.0, 3.0, 0.2, 0.2]);
        let w = DVector::from_element(4, 0.25);
        assert!(mmd2_vs_samples(&x, &w, &x, 0.7).unwrap().abs() < 1e-15);
    }

    #[test]
    fn grid_row_sums_match_direct() {
        let t = make_benchmark("gmm5-aniso-2d", 2, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = t.reference_sample(600, &mut rng).unwrap();
        for sigma in [0.1, 0.5, 3.0] {
            let spec = KernelSpec::new(sigma, 0.0).unwrap();
            let gr = grid_row_sums(&x, &spec);
            let dr = direct_row_sums(&x, &spec);
            for (a, b) in gr.iter().zip(&dr) {
                assert_relative_eq!(a, b, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn forward_offsets_cover_half_neighborhood() {
        assert_eq!(forward_offsets(1), vec![vec![1]]);
        assert_eq!(forward_offsets(2).len(), 4);
        assert_eq!(forward_offsets(3).len(), 13);
    }

    #[test]
    fn sample_mmd_permutation_invariant() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.5]);
        let xp = DMatrix::from_row_slice(3, 1, &[2.5, 0.0, 1.0]);
        let y = DMatrix::from_row_slice(2, 1, &[0.3, 1.9]);
        let w = DVector::from_vec(vec![0.6, 0.4]);
        assert_relative_eq!(
            mmd2_vs_samples(&y, &w, &x, 0.8).unwrap(),
            mmd2_vs_samples(&y, &w, &xp, 0.8).unwrap(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn imq_derivatives_match_finite_differences() {
        let p = KsdParams { c2: 1.3, beta: -0.4, bandwidth: 0.8, scale: 1.0 };
        let x = [0.3, -0.7, 1.1];
        let y = [-0.2, 0.4, 0.9];
        let h = 1e-5;
        let k = |a: &[f64], b: &[f64]| {
            let r: Vec<f64> = a.iter().zip(b).map(|(u, v)| u - v).collect();
            p.imq(&r)
        };
        let r: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let g = p.imq_grad_x(&r);
        let mut trace_fd = 0.0;
        for j in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            assert_relative_eq!((k(&xp, &y) - k(&xm, &y)) / (2.0 * h), g[j], epsilon = 1e-8);
            let mut yp = y;
            let mut ym = y;
            yp[j] += h;
            ym[j] -= h;
            trace_fd += (k(&xp, &yp) - k(&xp, &ym) - k(&xm, &yp) + k(&xm, &ym)) / (4.0 * h * h);
        }
        assert_relative_eq!(trace_fd, p.imq_trace_xy(&r), epsilon = 1e-5);
    }

    #[test]
    fn stein_kernel_symmetric() {
        let p = KsdParams::default();
        let a = p.stein_kernel(&[0.1, 0.2], &[1.0, -1.0], &[0.5, 0.3], &[-0.2, 0.9]);
        let b = p.stein_kernel(&[1.0, -1.0], &[0.1, 0.2], &[-0.2, 0.9], &[0.5, 0.3]);
        assert_relative_eq!(a, b, max_relative = 1e-14);
    }

    #[test]
    fn ksd_invariant_to_weight_scale_and_normalization() {
        let t = make_benchmark("gmm", 2, 0).unwrap();
        let y = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 1.0]);
        let w = DVector::from_vec(vec![0.2, 0.5, 0.3]);
        let p = KsdParams::with_bandwidth(0.5);
        let a = ksd2(&y, &w, &t, &p).unwrap();
        let b = ksd2(&y, &(&w * 37.0), &t.with_log_scale_offset(5.0), &p).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-13);
        assert!(p.validate().is_ok());
        assert!(KsdParams { beta: -1.0, ..p }.validate().is_err());
    }

    #[test]
    fn loglik_examples() {
        let flat = TargetDensity::from_fn("flat", 1, |_: &[f64]| 0.0, None::<fn(&[f64]) -> Vec<f64>>);
        let y = DMatrix::from_element(1, 1, 0.4);
        assert_eq!(weighted_loglik(&y, &DVector::from_element(1, 1.0), &flat).unwrap(), 0.0);
        let m1 = TargetDensity::from_fn("m1", 1, |_: &[f64]| -1.0, None::<fn(&[f64]) -> Vec<f64>>);
        let y2 = DMatrix::from_element(2, 1, 0.4);
        assert_eq!(weighted_loglik(&y2, &DVector::from_element(2, 0.5), &m1).unwrap(), 1.0);
        let shifted = m1.with_log_scale_offset(3.0f64.ln());
        assert_relative_eq!(
            weighted_loglik(&y2, &DVector::from_element(2, 0.5), &shifted).unwrap(),
            1.0 - 3.0f64.ln(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn coverage_examples() {
        let modes = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 5.0, 5.0, -5.0, 5.0]);
        let w = DVector::from_element(3, 1.0);
        assert_eq!(mode_coverage(&modes, &w, &modes, 0.5).unwrap().covered, 3);
        let clumped = DMatrix::from_row_slice(3, 2, &[5.0, 5.0, 5.1, 5.0, 5.0, 4.9]);
        let c = mode_coverage(&clumped, &w, &modes, 0.5).unwrap();
        assert_eq!(c.covered, 1);
        assert_eq!(c.per_mode, vec![false, true, false]);
        // a particle with negligible weight does not count
        let w = DVector::from_vec(vec![1.0, 1.0, 1e-3]);
        assert_eq!(mode_coverage(&modes, &w, &modes, 0.5).unwrap().covered, 2);
    }
}
