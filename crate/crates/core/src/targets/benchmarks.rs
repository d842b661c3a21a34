//! Benchmark fixtures: GMM-d, the anisotropic five-mode planar mixture,
//! Neal's funnel and the Himmelblau density.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};

use super::{GmmTarget, LogDensity, TargetDensity};
use crate::error::{Error, Result};

pub const BENCHMARK_NAMES: [&str; 4] = ["gmm", "gmm5-aniso-2d", "funnel", "himmelblau"];

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

/// Builds a named benchmark target.
pub fn make_benchmark(name: &str, dim: usize, seed: u64) -> Result<TargetDensity> {
    if dim == 0 {
        return Err(Error::UnsupportedDimension(0));
    }
    match name {
        "gmm" => Ok(TargetDensity::new("gmm", gmm_benchmark(dim, seed))),
        "gmm5-aniso-2d" => {
            if dim != 2 {
                return Err(Error::UnsupportedDimension(dim));
            }
            Ok(TargetDensity::new("gmm5-aniso-2d", aniso_gmm5_2d()))
        }
        "funnel" => {
            if dim < 2 {
                return Err(Error::UnsupportedDimension(dim));
            }
            Ok(TargetDensity::new("funnel", Funnel::new(dim)))
        }
        "himmelblau" => {
            if dim != 2 {
                return Err(Error::UnsupportedDimension(dim));
            }
            Ok(TargetDensity::new("himmelblau", Himmelblau))
        }
        other => Err(Error::UnknownTarget(other.to_string())),
    }
}

/// Five equally weighted components `N(μ_k, 0.5 I_d)` with means drawn
/// uniformly from `[0, 7.5]^d`.
pub fn gmm_benchmark(dim: usize, seed: u64) -> GmmTarget {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = DMatrix::from_fn(5, dim, |_, _| rng.random_range(0.0..7.5));
    GmmTarget::isotropic(vec![0.2; 5], &means, 0.5).expect("isotropic fixture is valid")
}

/// Five equally weighted anisotropic components on a circle of radius 8.
///
/// Component `k` sits at angle `90° + 72°k` with covariance
/// `R(72°k) diag(1.2, 0.12) R(72°k)ᵀ`.
pub fn aniso_gmm5_2d() -> GmmTarget {
    let mut means = Vec::with_capacity(5);
    let mut covs = Vec::with_capacity(5);
    for k in 0..5 {
        let theta = (72.0 * k as f64).to_radians();
        let phi = (90.0 + 72.0 * k as f64).to_radians();
        means.push(DVector::from_vec(vec![8.0 * phi.cos(), 8.0 * phi.sin()]));
        let r = DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()]);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.2, 0.12]));
        let c = &r * d * r.transpose();
        // exact symmetry so the Cholesky factor is well defined
        covs.push((&c + c.transpose()) * 0.5);
    }
    GmmTarget::new(vec![0.2; 5], means, covs).expect("anisotropic fixture is valid")
}

/// Neal's funnel: `x₁ ~ N(0, 9)`, `x_j | x₁ ~ N(0, e^{x₁})` for `j ≥ 2`.
#[derive(Debug, Clone)]
pub struct Funnel {
    dim: usize,
    mean: f64,
    variance: f64,
}

impl Funnel {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            mean: 0.0,
            variance: 9.0,
        }
    }
}

impl LogDensity for Funnel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let x1 = x[0];
        let head = -0.5 * (LOG_2PI + self.variance.ln()) - 0.5 * (x1 - self.mean).powi(2) / self.variance;
        let inv_var = (-x1).exp();
        let tail: f64 = x[1..]
            .iter()
            .map(|xj| -0.5 * (LOG_2PI + x1) - 0.5 * xj * xj * inv_var)
            .sum();
        head + tail
    }

    fn score(&self, x: &[f64]) -> Option<Vec<f64>> {
        let x1 = x[0];
        let inv_var = (-x1).exp();
        let mut out = Vec::with_capacity(self.dim);
        let d_head = -(x1 - self.mean) / self.variance;
        let d_tail: f64 = x[1..].iter().map(|xj| -0.5 + 0.5 * xj * xj * inv_var).sum();
        out.push(d_head + d_tail);
        out.extend(x[1..].iter().map(|xj| -xj * inv_var));
        Some(out)
    }

    fn has_score(&self) -> bool {
        true
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Option<DMatrix<f64>> {
        let mut out = DMatrix::zeros(n, self.dim);
        for i in 0..n {
            let z: f64 = StandardNormal.sample(rng);
            let x1 = self.mean + self.variance.sqrt() * z;
            out[(i, 0)] = x1;
            let sd = (0.5 * x1).exp();
            for j in 1..self.dim {
                let z: f64 = StandardNormal.sample(rng);
                out[(i, j)] = sd * z;
            }
        }
        Some(out)
    }
}

/// `π(x) ∝ exp(-(x₁² + x₂ - 11)² - (x₁ + x₂² - 7)²)`.
#[derive(Debug, Clone, Copy)]
pub struct Himmelblau;

impl Himmelblau {
    /// The four global maximizers of the density.
    pub const MODES: [[f64; 2]; 4] = [
        [3.0, 2.0],
        [-2.805_118_086_952_745, 3.131_312_518_250_573],
        [-3.779_310_253_377_747, -3.283_185_991_286_17],
        [3.584_428_340_330_492, -1.848_126_526_964_404],
    ];

    const GRID_HALF_WIDTH: f64 = 6.0;
    const GRID_CELLS: usize = 1200;
}

impl LogDensity for Himmelblau {
    fn dim(&self) -> usize {
        2
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let a = x[0] * x[0] + x[1] - 11.0;
        let b = x[0] + x[1] * x[1] - 7.0;
        -(a * a) - b * b
    }

    fn score(&self, x: &[f64]) -> Option<Vec<f64>> {
        let a = x[0] * x[0] + x[1] - 11.0;
        let b = x[0] + x[1] * x[1] - 7.0;
        Some(vec![-(4.0 * x[0] * a + 2.0 * b), -(2.0 * a + 4.0 * x[1] * b)])
    }

    fn has_score(&self) -> bool {
        true
    }

    /// Importance resampling from a fine grid on `[-6, 6]²` with uniform
    /// jitter inside each cell.
    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Option<DMatrix<f64>> {
        let cells = Self::GRID_CELLS;
        let h = 2.0 * Self::GRID_HALF_WIDTH / cells as f64;
        let centre = |i: usize| -Self::GRID_HALF_WIDTH + (i as f64 + 0.5) * h;
        let mut weights = Vec::with_capacity(cells * cells);
        for i in 0..cells {
            for j in 0..cells {
                weights.push(self.log_density(&[centre(i), centre(j)]).exp());
            }
        }
        let pick = WeightedIndex::new(&weights).ok()?;
        let mut out = DMatrix::zeros(n, 2);
        for r in 0..n {
            let idx = pick.sample(rng);
            let (i, j) = (idx / cells, idx % cells);
            out[(r, 0)] = centre(i) + h * (rng.random::<f64>() - 0.5);
            out[(r, 1)] = centre(j) + h * (rng.random::<f64>() - 0.5);
        }
        Some(out)
    }

    fn modes(&self) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_fn(4, 2, |k, j| Self::MODES[k][j]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::score_fd_error;
    use approx::assert_relative_eq;

    fn probes(seed: u64, n: usize, d: usize, scale: f64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
    }

    #[test]
    fn himmelblau_global_mode() {
        let t = make_benchmark("himmelblau", 2, 0).unwrap();
        assert_eq!(t.log_density(&[3.0, 2.0]), 0.0);
        for m in Himmelblau::MODES {
            assert!(t.log_density(&m).abs() < 1e-20);
        }
    }

    #[test]
    fn funnel_score_at_origin() {
        let t = make_benchmark("funnel", 2, 0).unwrap();
        let s = t.score(&[0.0, 0.0]).unwrap();
        assert_relative_eq!(s[0], -0.5, max_relative = 1e-15);
        assert_eq!(s[1], 0.0);
        let h = 1e-6;
        let fd = (t.log_density(&[h, 0.0]) - t.log_density(&[-h, 0.0])) / (2.0 * h);
        assert_relative_eq!(fd, -0.5, max_relative = 1e-8);
    }

    #[test]
    fn funnel_normalization() {
        // x₁ marginal is N(0, 9): check at x₁ = 0 with x_{2:d} = 0.
        let t = make_benchmark("funnel", 3, 0).unwrap();
        let expected = -0.5 * (LOG_2PI + 9f64.ln()) - LOG_2PI;
        assert_relative_eq!(t.log_density(&[0.0, 0.0, 0.0]), expected, max_relative = 1e-14);
    }

    #[test]
    fn gmm_fixture_is_seeded() {
        let a = gmm_benchmark(2, 0);
        let b = gmm_benchmark(2, 0);
        let c = gmm_benchmark(2, 1);
        for k in 0..5 {
            for j in 0..2 {
                assert_eq!(a.means()[k][j].to_bits(), b.means()[k][j].to_bits());
                assert!((0.0..7.5).contains(&a.means()[k][j]));
            }
        }
        assert_ne!(a.means()[0][0], c.means()[0][0]);
    }

    #[test]
    fn aniso_fixture_geometry() {
        let t = aniso_gmm5_2d();
        for (k, m) in t.means().iter().enumerate() {
            assert_relative_eq!(m.norm(), 8.0, max_relative = 1e-14);
            let eig = t.covariances()[k].clone().symmetric_eigenvalues();
            let (lo, hi) = (eig.min(), eig.max());
            assert_relative_eq!(lo, 0.12, max_relative = 1e-12);
            assert_relative_eq!(hi, 1.2, max_relative = 1e-12);
        }
        assert_relative_eq!(t.means()[0][0], 0.0, epsilon = 1e-14);
        assert_relative_eq!(t.means()[0][1], 8.0, max_relative = 1e-14);
    }

    #[test]
    fn dimension_checks() {
        assert!(matches!(make_benchmark("himmelblau", 3, 0), Err(Error::UnsupportedDimension(3))));
        assert!(matches!(make_benchmark("gmm5-aniso-2d", 5, 0), Err(Error::UnsupportedDimension(5))));
        assert!(matches!(make_benchmark("joker", 2, 0), Err(Error::UnknownTarget(_))));
    }

    #[test]
    fn every_scored_fixture_passes_fd_check() {
        for (name, dim, scale) in [
            ("gmm", 3, 8.0),
            ("gmm5-aniso-2d", 2, 9.0),
            ("funnel", 2, 2.0),
            ("funnel", 5, 2.0),
            ("himmelblau", 2, 4.0),
        ] {
            let t = make_benchmark(name, dim, 1).unwrap();
            let err = score_fd_error(&t, &probes(17, 20, dim, scale), 1e-6).unwrap();
            assert!(err < 1e-5, "{name}: {err}");
        }
    }

    #[test]
    fn funnel_sampler_marginal() {
        let f = Funnel::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = f.sample(100_000, &mut rng).unwrap();
        let var = s.column(0).variance();
        assert!((var - 9.0).abs() < 0.2, "{var}");
    }

    #[test]
    fn himmelblau_sampler_hits_all_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = Himmelblau.sample(4000, &mut rng).unwrap();
        for m in Himmelblau::MODES {
            let near = s.row_iter().filter(|r| ((r[0] - m[0]).powi(2) + (r[1] - m[1]).powi(2)).sqrt() < 1.0).count();
            assert!(near > 400, "mode {m:?}: {near}");
        }
    }
}
