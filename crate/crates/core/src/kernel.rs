//! Squared-exponential kernel, Gram matrices and their regularized solves.
//!
//! Particle configurations are `M × d` matrices whose rows are the particles.
//! The Gram matrix `K_λ(Y) = K(Y) + λI` is factored once by Cholesky and the
//! factor is cached for every subsequent solve against it.

use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{invalid, Error, Result};

/// Relative residual every [`GramMatrix::solve`] aims for.
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-10;

const MAX_REFINEMENT_STEPS: usize = 2;

/// Bandwidth and Tikhonov regularization of the squared-exponential kernel
/// `κ(x, y) = exp(-‖x - y‖² / (2σ²))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub sigma: f64,
    pub lambda: f64,
}

impl KernelSpec {
    pub const DEFAULT_LAMBDA: f64 = 1e-6;

    pub fn new(sigma: f64, lambda: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(invalid("sigma", format!("must be positive and finite, got {sigma}")));
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(invalid("lambda", format!("must be nonnegative and finite, got {lambda}")));
        }
        Ok(Self { sigma, lambda })
    }

    pub fn with_sigma(sigma: f64) -> Result<Self> {
        Self::new(sigma, Self::DEFAULT_LAMBDA)
    }

    /// `log ω_{σ,d} = d · log(√(2π) σ)`.
    pub fn log_omega(&self, dim: usize) -> f64 {
        dim as f64 * (0.5 * (2.0 * std::f64::consts::PI).ln() + self.sigma.ln())
    }

    /// `ω_{σ,d} = (√(2π) σ)^d`, rejected when it over- or underflows a double.
    pub fn omega(&self, dim: usize) -> Result<f64> {
        let omega = self.log_omega(dim).exp();
        if omega.is_finite() && omega > 0.0 {
            Ok(omega)
        } else {
            Err(invalid(
                "sigma",
                format!("omega(sigma={}, d={dim}) is not representable", self.sigma),
            ))
        }
    }

    #[inline]
    pub(crate) fn eval_sq(&self, sq_dist: f64) -> f64 {
        (-0.5 * sq_dist / (self.sigma * self.sigma)).exp()
    }
}

#[inline]
pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `κ(x, y) = exp(-‖x - y‖² / (2σ²))`.
pub fn se_kernel(x: &[f64], y: &[f64], spec: &KernelSpec) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    Ok(spec.eval_sq(sq_dist(x, y)))
}

/// Unregularized cross-kernel matrix `[κ(a_i, b_j)]` between the rows of `a` and `b`.
pub fn cross_kernel(a: &DMatrix<f64>, b: &DMatrix<f64>, spec: &KernelSpec) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.ncols(), "cross_kernel: dimension mismatch");
    let a_norms: Vec<f64> = a.row_iter().map(|r| r.norm_squared()).collect();
    let b_norms: Vec<f64> = b.row_iter().map(|r| r.norm_squared()).collect();
    let inner = a * b.transpose();
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        spec.eval_sq((a_norms[i] + b_norms[j] - 2.0 * inner[(i, j)]).max(0.0))
    })
}

/// The regularized Gram matrix `K(Y) + λI` of a particle configuration.
#[derive(Debug)]
pub struct GramMatrix {
    entries: DMatrix<f64>,
    lambda_applied: f64,
    chol: OnceLock<Option<Cholesky<f64, Dyn>>>,
}

impl Clone for GramMatrix {
    fn clone(&self) -> Self {
        Self {
            entries: self.entries.clone(),
            lambda_applied: self.lambda_applied,
            chol: OnceLock::new(),
        }
    }
}

/// Assembles `K_λ(Y)` for the rows of `y`.
pub fn gram(y: &DMatrix<f64>, spec: &KernelSpec) -> GramMatrix {
    GramMatrix::assemble(y, spec, spec.lambda)
}

impl GramMatrix {
    pub fn assemble(y: &DMatrix<f64>, spec: &KernelSpec, lambda: f64) -> Self {
        let m = y.nrows();
        let norms: Vec<f64> = y.row_iter().map(|r| r.norm_squared()).collect();
        let inner = y * y.transpose();
        let mut entries = DMatrix::zeros(m, m);
        for j in 0..m {
            entries[(j, j)] = 1.0 + lambda;
            for i in (j + 1)..m {
                let d2 = (norms[i] + norms[j] - 2.0 * inner[(i, j)]).max(0.0);
                let k = spec.eval_sq(d2);
                entries[(i, j)] = k;
                entries[(j, i)] = k;
            }
        }
        Self {
            entries,
            lambda_applied: lambda,
            chol: OnceLock::new(),
        }
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn lambda_applied(&self) -> f64 {
        self.lambda_applied
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    /// The unregularized kernel matrix `K(Y)`.
    pub fn unregularized(&self) -> DMatrix<f64> {
        let mut k = self.entries.clone();
        for i in 0..k.nrows() {
            k[(i, i)] -= self.lambda_applied;
        }
        k
    }

    fn cholesky(&self) -> Result<&Cholesky<f64, Dyn>> {
        self.chol
            .get_or_init(|| Cholesky::new(self.entries.clone()))
            .as_ref()
            .ok_or_else(|| self.closest_pair())
    }

    fn closest_pair(&self) -> Error {
        let m = self.size();
        let mut best = (0, 0, f64::NEG_INFINITY);
        for j in 0..m {
            for i in (j + 1)..m {
                if self.entries[(i, j)] > best.2 {
                    best = (j, i, self.entries[(i, j)]);
                }
            }
        }
        Error::SingularGram { i: best.0, j: best.1 }
    }

    /// Solves `G X = B` for an `M × k` right-hand side using the cached factor.
    ///
    /// Up to two steps of iterative refinement are applied when the relative
    /// residual exceeds [`SOLVE_RESIDUAL_TOL`]. Residuals are accumulated in
    /// compensated arithmetic: with small λ the solution is large enough that
    /// a plain `B - G X` has rounding error of the order of the tolerance.
    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if b.nrows() != self.size() {
            return Err(Error::DimensionMismatch {
                expected: self.size(),
                found: b.nrows(),
            });
        }
        let chol = self.cholesky()?;
        let mut x = chol.solve(b);
        let b_norm = b.norm();
        if b_norm == 0.0 {
            return Ok(x);
        }
        for _ in 0..MAX_REFINEMENT_STEPS {
            let residual = self.residual(&x, b);
            if residual.norm() <= SOLVE_RESIDUAL_TOL * b_norm {
                break;
            }
            x += chol.solve(&residual);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(self.closest_pair());
        }
        Ok(x)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let x = self.solve(&DMatrix::from_column_slice(b.len(), 1, b.as_slice()))?;
        Ok(DVector::from_column_slice(x.as_slice()))
    }

    /// `‖G X - B‖_F / ‖B‖_F`.
    pub fn relative_residual(&self, x: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        let b_norm = b.norm();
        let r = self.residual(x, b).norm();
        if b_norm == 0.0 {
            r
        } else {
            r / b_norm
        }
    }

    /// `B - G X` with each entry summed by TwoSum/FMA error-free transforms.
    fn residual(&self, x: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let g = &self.entries;
        DMatrix::from_fn(b.nrows(), b.ncols(), |i, c| {
            let (mut sum, mut err) = (b[(i, c)], 0.0);
            for j in 0..g.ncols() {
                let p = -g[(i, j)] * x[(j, c)];
                let p_err = (-g[(i, j)]).mul_add(x[(j, c)], -p);
                let s = sum + p;
                let t = s - sum;
                err += (sum - (s - t)) + (p - t) + p_err;
                sum = s;
            }
            sum + err
        })
    }
}
