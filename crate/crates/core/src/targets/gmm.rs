//! Gaussian mixtures with closed-form kernel embeddings.
//!
//! Convolving a mixture with the squared-exponential kernel of bandwidth σ
//! yields another mixture with covariances `Σ_k + σ²I`, scaled by
//! `Z_σ = (2πσ²)^{d/2}`. All evaluations go through per-component Cholesky
//! whitening and log-sum-exp.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};

use super::LogDensity;
use crate::error::{invalid, Error, Result};

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone)]
pub struct GmmTarget {
    dim: usize,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
    chol_lower: Vec<DMatrix<f64>>,
    /// `Σ_j log L_jj`, i.e. `½ log |Σ_k|`.
    half_log_dets: Vec<f64>,
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl GmmTarget {
    pub fn new(weights: Vec<f64>, means: Vec<DVector<f64>>, covs: Vec<DMatrix<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(invalid("weights", "mixture needs at least one component"));
        }
        if means.len() != k || covs.len() != k {
            return Err(invalid("means", "weights, means and covariances differ in length"));
        }
        let dim = means[0].len();
        let mut chol_lower = Vec::with_capacity(k);
        let mut half_log_dets = Vec::with_capacity(k);
        for (i, ((w, m), c)) in weights.iter().zip(&means).zip(&covs).enumerate() {
            if !(w.is_finite() && *w > 0.0) {
                return Err(invalid("weights", format!("component {i} has weight {w}")));
            }
            if m.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: m.len() });
            }
            if c.nrows() != dim || c.ncols() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: c.nrows() });
            }
            let chol = c
                .clone()
                .cholesky()
                .ok_or_else(|| invalid("covariances", format!("component {i} is not positive definite")))?;
            let l = chol.l();
            half_log_dets.push(l.diagonal().iter().map(|v| v.ln()).sum());
            chol_lower.push(l);
        }
        Ok(Self {
            dim,
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            weights,
            means,
            covs,
            chol_lower,
            half_log_dets,
        })
    }

    /// Mixture of isotropic components `N(μ_k, variance · I)`.
    pub fn isotropic(weights: Vec<f64>, means: &DMatrix<f64>, variance: f64) -> Result<Self> {
        let d = means.ncols();
        let means = means.row_iter().map(|r| r.transpose().into_owned()).collect();
        let covs = vec![DMatrix::identity(d, d) * variance; weights.len()];
        Self::new(weights, means, covs)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covs
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Same mixture with weights rescaled to sum to one.
    pub fn normalized(&self) -> Self {
        self.scaled(1.0 / self.total_weight())
    }

    /// Same mixture with every weight multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.weights.iter_mut().for_each(|w| *w *= c);
        out.log_weights = out.weights.iter().map(|w| w.ln()).collect();
        out
    }

    /// The mixture convolved with `N(0, extra_variance · I)`.
    pub fn convolved(&self, extra_variance: f64) -> Self {
        let covs = self
            .covs
            .iter()
            .map(|c| c + DMatrix::identity(self.dim, self.dim) * extra_variance)
            .collect();
        Self::new(self.weights.clone(), self.means.clone(), covs)
            .expect("adding a positive multiple of the identity keeps covariances positive definite")
    }

    /// Whitened residual `z_k = L_k⁻¹ (x - μ_k)`.
    fn whiten(&self, k: usize, x: &[f64]) -> DVector<f64> {
        let r = DVector::from_iterator(self.dim, x.iter().zip(self.means[k].iter()).map(|(a, b)| a - b));
        self.chol_lower[k]
            .solve_lower_triangular(&r)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// `log m_k + log N(x; μ_k, Σ_k)` for every component, plus the whitened residuals.
    fn component_terms(&self, x: &[f64]) -> (Vec<f64>, Vec<DVector<f64>>) {
        let zs: Vec<DVector<f64>> = (0..self.n_components()).map(|k| self.whiten(k, x)).collect();
        let terms = zs
            .iter()
            .enumerate()
            .map(|(k, z)| {
                self.log_weights[k] - 0.5 * self.dim as f64 * LOG_2PI - self.half_log_dets[k] - 0.5 * z.norm_squared()
            })
            .collect();
        (terms, zs)
    }

    /// `log Σ_k m_k N(x; μ_k, Σ_k)`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim, "GmmTarget::log_density: dimension mismatch");
        log_sum_exp(&self.component_terms(x).0)
    }

    /// Posterior component probabilities `r_k(x)`.
    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let terms = self.component_terms(x).0;
        let total = log_sum_exp(&terms);
        terms.iter().map(|t| (t - total).exp()).collect()
    }

    /// `∇ log π(x) = -Σ_k r_k(x) Σ_k⁻¹ (x - μ_k)`.
    pub fn score(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim, "GmmTarget::score: dimension mismatch");
        let (terms, zs) = self.component_terms(x);
        let total = log_sum_exp(&terms);
        let mut out = DVector::zeros(self.dim);
        for (k, z) in zs.iter().enumerate() {
            let r = (terms[k] - total).exp();
            if r == 0.0 {
                continue;
            }
            let precision_residual = self.chol_lower[k]
                .tr_solve_lower_triangular(z)
                .expect("Cholesky factor has a positive diagonal");
            out.axpy(-r, &precision_residual, 1.0);
        }
        out.data.into()
    }

    /// Closed-form kernel embeddings for bandwidth `sigma`.
    pub fn embedding(&self, sigma: f64) -> GmmEmbedding {
        GmmEmbedding {
            sigma,
            log_z_sigma: 0.5 * self.dim as f64 * (LOG_2PI + 2.0 * sigma.ln()),
            smoothed: self.convolved(sigma * sigma),
        }
    }

    /// `v₀(y) = ∫ κ_σ(x, y) π(x) dx`.
    pub fn v0(&self, y: &[f64], sigma: f64) -> f64 {
        self.embedding(sigma).v0(y)
    }

    /// `∇ log v₀(y)`.
    pub fn grad_log_v0(&self, y: &[f64], sigma: f64) -> Vec<f64> {
        self.embedding(sigma).grad_log_v0(y)
    }

    /// `C_π = ∫∫ κ_σ(x, x') π(dx) π(dx')` for the normalized mixture.
    pub fn kernel_energy(&self, sigma: f64) -> f64 {
        let total = self.total_weight();
        let log_z = 0.5 * self.dim as f64 * (LOG_2PI + 2.0 * sigma.ln());
        let mut terms = Vec::with_capacity(self.n_components().pow(2));
        for k in 0..self.n_components() {
            for l in 0..self.n_components() {
                let cov = &self.covs[k] + &self.covs[l] + DMatrix::identity(self.dim, self.dim) * (sigma * sigma);
                let single = GmmTarget::new(vec![1.0], vec![self.means[l].clone()], vec![cov])
                    .expect("sum of covariances is positive definite");
                let x: Vec<f64> = self.means[k].iter().copied().collect();
                terms.push(self.log_weights[k] + self.log_weights[l] - 2.0 * total.ln() + single.log_density(&x));
            }
        }
        (log_z + log_sum_exp(&terms)).exp()
    }

    /// Draws `n` iid samples from the normalized mixture.
    pub fn sample_rows(&self, n: usize, rng: &mut dyn RngCore) -> DMatrix<f64> {
        let pick = WeightedIndex::new(&self.weights).expect("weights are positive");
        let mut out = DMatrix::zeros(n, self.dim);
        let mut noise = DVector::zeros(self.dim);
        for i in 0..n {
            let k = pick.sample(rng);
            noise.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
            let x = &self.means[k] + &self.chol_lower[k] * &noise;
            out.row_mut(i).copy_from(&x.transpose());
        }
        out
    }
}

impl LogDensity for GmmTarget {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        GmmTarget::log_density(self, x)
    }

    fn score(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(GmmTarget::score(self, x))
    }

    fn has_score(&self) -> bool {
        true
    }

    fn gmm(&self) -> Option<&GmmTarget> {
        Some(self)
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Option<DMatrix<f64>> {
        Some(self.sample_rows(n, rng))
    }

    fn modes(&self) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_fn(self.n_components(), self.dim, |k, j| self.means[k][j]))
    }
}

/// Kernel embeddings of a mixture at a fixed bandwidth.
#[derive(Debug, Clone)]
pub struct GmmEmbedding {
    sigma: f64,
    log_z_sigma: f64,
    smoothed: GmmTarget,
}

impl GmmEmbedding {
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn log_v0(&self, y: &[f64]) -> f64 {
        self.log_z_sigma + self.smoothed.log_density(y)
    }

    pub fn v0(&self, y: &[f64]) -> f64 {
        self.log_v0(y).exp()
    }

    /// `∇ log v₀(y) = -Σ_k r_k(y) Σ̃_k⁻¹ (y - μ_k)` with `Σ̃_k = Σ_k + σ²I`.
    pub fn grad_log_v0(&self, y: &[f64]) -> Vec<f64> {
        self.smoothed.score(y)
    }

    /// `v₁(y) / v₀(y) = y + σ² ∇ log v₀(y)`.
    pub fn mean_shift(&self, y: &[f64]) -> Vec<f64> {
        let s2 = self.sigma * self.sigma;
        y.iter().zip(self.grad_log_v0(y)).map(|(a, g)| a + s2 * g).collect()
    }

    /// `v₁(y) = ∫ x κ_σ(x, y) π(x) dx`.
    pub fn v1(&self, y: &[f64]) -> Vec<f64> {
        let v0 = self.v0(y);
        self.mean_shift(y).into_iter().map(|m| m * v0).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn standard_normal_1d() -> GmmTarget {
        GmmTarget::new(vec![1.0], vec![DVector::from_vec(vec![0.0])], vec![DMatrix::identity(1, 1)]).unwrap()
    }

    fn random_mixture(seed: u64, k: usize, d: usize) -> GmmTarget {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut means = Vec::new();
        let mut covs = Vec::new();
        for _ in 0..k {
            weights.push(0.2 + rng.random::<f64>());
            means.push(DVector::from_fn(d, |_, _| 4.0 * rng.random::<f64>() - 2.0));
            let a = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5);
            covs.push(&a * a.transpose() + DMatrix::identity(d, d) * 0.3);
        }
        GmmTarget::new(weights, means, covs).unwrap()
    }

    /// Direct evaluation of the mixture density through explicit inverses.
    fn naive_density(t: &GmmTarget, x: &[f64]) -> f64 {
        let d = t.dim();
        let xv = DVector::from_column_slice(x);
        let mut total = 0.0;
        for k in 0..t.n_components() {
            let c = &t.covariances()[k];
            let r = &xv - &t.means()[k];
            let q = (r.transpose() * c.clone().try_inverse().unwrap() * &r)[(0, 0)];
            total += t.weights()[k] * (-0.5 * q).exp()
                / ((2.0 * std::f64::consts::PI).powi(d as i32) * c.determinant()).sqrt();
        }
        total
    }

    #[test]
    fn standard_normal_at_mode() {
        assert_relative_eq!(standard_normal_1d().log_density(&[0.0]), -0.918_938_533_204_672_7, max_relative = 1e-15);
    }

    #[test]
    fn symmetric_pair_at_center() {
        let a = 1.7;
        let t = GmmTarget::new(
            vec![0.5, 0.5],
            vec![DVector::from_vec(vec![-a]), DVector::from_vec(vec![a])],
            vec![DMatrix::identity(1, 1); 2],
        )
        .unwrap();
        let single = standard_normal_1d();
        assert_relative_eq!(t.log_density(&[0.0]), single.log_density(&[a]), max_relative = 1e-14);
        assert!(t.score(&[0.0])[0].abs() < 1e-15);
    }

    #[test]
    fn log_density_matches_naive_summation() {
        let t = random_mixture(3, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x = [3.0 * rng.random::<f64>() - 1.5, 3.0 * rng.random::<f64>() - 1.5];
            assert_relative_eq!(t.log_density(&x).exp(), naive_density(&t, &x), max_relative = 1e-12);
        }
    }

    #[test]
    fn log_density_is_finite_far_away() {
        let t = random_mixture(9, 3, 2);
        assert!(t.log_density(&[1e3, -1e3]).is_finite());
        assert!(t.score(&[1e3, -1e3]).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn standard_gaussian_score() {
        let t = standard_normal_1d();
        assert_relative_eq!(t.score(&[1.3])[0], -1.3, max_relative = 1e-15);
    }

    #[test]
    fn score_matches_finite_differences() {
        let t = random_mixture(11, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = 1e-5;
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| 3.0 * rng.random::<f64>() - 1.5).collect();
            let s = t.score(&x);
            let fd: Vec<f64> = (0..3)
                .map(|j| {
                    let mut up = x.clone();
                    let mut dn = x.clone();
                    up[j] += h;
                    dn[j] -= h;
                    (t.log_density(&up) - t.log_density(&dn)) / (2.0 * h)
                })
                .collect();
            let err: f64 = s.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(err <= 1e-6 * norm.max(1e-3), "err {err}, norm {norm}");
        }
    }

    #[test]
    fn v0_single_gaussian_closed_form() {
        // ∫ exp(-x²/2) N(x; 0, 1) dx evaluated by trapezoidal quadrature on [-12, 12].
        let n = 200_000;
        let h = 24.0 / n as f64;
        let quad: f64 = (0..=n)
            .map(|i| {
                let x = -12.0 + i as f64 * h;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * (-0.5 * x * x).exp() * (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
            })
            .sum::<f64>()
            * h;
        assert_relative_eq!(quad, std::f64::consts::FRAC_1_SQRT_2, max_relative = 1e-10);
        assert_relative_eq!(standard_normal_1d().v0(&[0.0], 1.0), quad, max_relative = 1e-10);
    }

    #[test]
    fn v0_scales_linearly_and_gradient_does_not() {
        let t = random_mixture(4, 3, 2);
        let scaled = t.scaled(37.0);
        let y = [0.4, -0.2];
        assert_relative_eq!(scaled.v0(&y, 0.6), 37.0 * t.v0(&y, 0.6), max_relative = 1e-13);
        let g = t.grad_log_v0(&y, 0.6);
        let gs = scaled.grad_log_v0(&y, 0.6);
        for (a, b) in g.iter().zip(&gs) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn grad_log_v0_single_gaussian() {
        assert_relative_eq!(standard_normal_1d().grad_log_v0(&[2.0], 1.0)[0], -1.0, max_relative = 1e-15);
    }

    #[test]
    fn grad_log_v0_matches_finite_differences() {
        let t = random_mixture(21, 3, 2);
        let emb = t.embedding(0.7);
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let y = [4.0 * rng.random::<f64>() - 2.0, 4.0 * rng.random::<f64>() - 2.0];
            let g = emb.grad_log_v0(&y);
            for j in 0..2 {
                let mut up = y;
                let mut dn = y;
                up[j] += h;
                dn[j] -= h;
                let fd = (emb.v0(&up).ln() - emb.v0(&dn).ln()) / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-6 * g[j].abs().max(1.0), "fd {fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn kernel_energy_single_gaussian() {
        // ∫∫ exp(-(x-x')²/2) N(x) N(x') = 1/√3.
        assert_relative_eq!(standard_normal_1d().kernel_energy(1.0), 0.577_350_269_189_625_8, max_relative = 1e-14);
    }

    #[test]
    fn kernel_energy_is_normalization_free() {
        let t = random_mixture(8, 3, 2);
        assert_relative_eq!(t.kernel_energy(0.5), t.scaled(1e4).kernel_energy(0.5), max_relative = 1e-12);
    }

    #[test]
    fn samples_have_mixture_mean() {
        let t = random_mixture(30, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = t.sample_rows(200_000, &mut rng);
        let total = t.total_weight();
        for j in 0..2 {
            let expected: f64 = (0..2).map(|k| t.weights()[k] / total * t.means()[k][j]).sum();
            let mean = s.column(j).mean();
            assert!((mean - expected).abs() < 0.02, "{mean} vs {expected}");
        }
    }

    #[test]
    fn rejects_bad_components() {
        let m = vec![DVector::from_vec(vec![0.0])];
        assert!(GmmTarget::new(vec![0.0], m.clone(), vec![DMatrix::identity(1, 1)]).is_err());
        assert!(GmmTarget::new(vec![1.0], m, vec![DMatrix::from_element(1, 1, -1.0)]).is_err());
    }
}
