//! Unnormalized target densities.
//!
//! A [`TargetDensity`] wraps any [`LogDensity`] together with an additive
//! `log_scale_offset`, which multiplies the density by an unknown positive
//! constant. Everything downstream only sees the shifted log-density, so the
//! offset is how normalization invariance gets exercised.

mod benchmarks;
mod gmm;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::RngCore;

pub use benchmarks::{
    aniso_gmm5_2d, gmm_benchmark, make_benchmark, Funnel, Himmelblau, BENCHMARK_NAMES,
};
pub use gmm::{GmmEmbedding, GmmTarget};
pub(crate) use gmm::log_sum_exp;

/// An unnormalized log-density, optionally with its score.
///
/// Implementations must be pure and reentrant.
pub trait LogDensity: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn log_density(&self, x: &[f64]) -> f64;

    /// `∇ log π(x)`, or `None` when the target has no score.
    fn score(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    fn has_score(&self) -> bool {
        false
    }

    /// Analytic kernel embeddings, available for Gaussian mixtures.
    fn gmm(&self) -> Option<&GmmTarget> {
        None
    }

    /// Exact (or high-accuracy) samples from the normalized target.
    fn sample(&self, _n: usize, _rng: &mut dyn RngCore) -> Option<DMatrix<f64>> {
        None
    }

    /// Known mode locations, one per row.
    fn modes(&self) -> Option<DMatrix<f64>> {
        None
    }
}

/// A named target density with a log-scale offset.
#[derive(Clone)]
pub struct TargetDensity {
    name: String,
    inner: Arc<dyn LogDensity>,
    log_scale_offset: f64,
}

impl fmt::Debug for TargetDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetDensity")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("log_scale_offset", &self.log_scale_offset)
            .finish()
    }
}

impl TargetDensity {
    pub fn new(name: impl Into<String>, inner: impl LogDensity + 'static) -> Self {
        Self {
            name: name.into(),
            inner: Arc::new(inner),
            log_scale_offset: 0.0,
        }
    }

    /// A target built from plain closures.
    pub fn from_fn<L, S>(name: impl Into<String>, dim: usize, log_density: L, score: Option<S>) -> Self
    where
        L: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        S: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self::new(
            name,
            FnDensity {
                dim,
                log_density: Box::new(log_density),
                score: score.map(|s| Box::new(s) as Box<ScoreFn>),
            },
        )
    }

    /// The same target multiplied by `exp(offset)`.
    pub fn with_log_scale_offset(&self, offset: f64) -> Self {
        Self {
            log_scale_offset: offset,
            ..self.clone()
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn log_scale_offset(&self) -> f64 {
        self.log_scale_offset
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.inner.log_density(x) + self.log_scale_offset
    }

    pub fn score(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.inner.score(x)
    }

    pub fn has_score(&self) -> bool {
        self.inner.has_score()
    }

    pub fn analytic(&self) -> Option<&GmmTarget> {
        self.inner.gmm()
    }

    pub fn reference_sample(&self, n: usize, rng: &mut dyn RngCore) -> Option<DMatrix<f64>> {
        self.inner.sample(n, rng)
    }

    pub fn modes(&self) -> Option<DMatrix<f64>> {
        self.inner.modes()
    }

    /// The same density with its score (and analytic embeddings) hidden.
    pub fn without_score(&self) -> Self {
        Self {
            name: self.name.clone(),
            inner: Arc::new(NoScore(self.inner.clone())),
            log_scale_offset: self.log_scale_offset,
        }
    }
}

#[derive(Debug)]
struct NoScore(Arc<dyn LogDensity>);

impl LogDensity for NoScore {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.0.log_density(x)
    }

    fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Option<DMatrix<f64>> {
        self.0.sample(n, rng)
    }

    fn modes(&self) -> Option<DMatrix<f64>> {
        self.0.modes()
    }
}

type LogFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type ScoreFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

struct FnDensity {
    dim: usize,
    log_density: Box<LogFn>,
    score: Option<Box<ScoreFn>>,
}

impl fmt::Debug for FnDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnDensity")
            .field("dim", &self.dim)
            .field("has_score", &self.score.is_some())
            .finish()
    }
}

impl LogDensity for FnDensity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        (self.log_density)(x)
    }

    fn score(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.score.as_ref().map(|s| s(x))
    }

    fn has_score(&self) -> bool {
        self.score.is_some()
    }
}

/// Largest relative error between `score` and central differences of the
/// log-density at the given probe points (rows).
pub fn score_fd_error(target: &TargetDensity, probes: &DMatrix<f64>, step: f64) -> Option<f64> {
    let mut worst: f64 = 0.0;
    let mut x: Vec<f64> = vec![0.0; target.dim()];
    for row in probes.row_iter() {
        x.iter_mut().zip(row.iter()).for_each(|(a, b)| *a = *b);
        let analytic = target.score(&x)?;
        let mut fd = vec![0.0; x.len()];
        for j in 0..x.len() {
            let orig = x[j];
            x[j] = orig + step;
            let up = target.log_density(&x);
            x[j] = orig - step;
            let down = target.log_density(&x);
            x[j] = orig;
            fd[j] = (up - down) / (2.0 * step);
        }
        let diff: f64 = analytic.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(diff / norm.max(1.0));
    }
    Some(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn offset_shifts_log_density_only() {
        let t = make_benchmark("funnel", 3, 0).unwrap();
        let shifted = t.with_log_scale_offset(12.5);
        let x = [0.3, -1.0, 0.7];
        assert_relative_eq!(shifted.log_density(&x), t.log_density(&x) + 12.5, max_relative = 1e-15);
        assert_eq!(shifted.score(&x), t.score(&x));
    }

    #[test]
    fn closure_targets() {
        let t = TargetDensity::from_fn(
            "std-normal",
            1,
            |x: &[f64]| -0.5 * x[0] * x[0],
            Some(|x: &[f64]| vec![-x[0]]),
        );
        assert!(t.has_score());
        assert_eq!(t.score(&[2.0]).unwrap(), vec![-2.0]);
        let no_score = TargetDensity::from_fn("flat", 2, |_: &[f64]| 0.0, None::<fn(&[f64]) -> Vec<f64>>);
        assert!(!no_score.has_score());
        assert!(no_score.score(&[0.0, 0.0]).is_none());
    }

    #[test]
    fn hiding_the_score() {
        let t = make_benchmark("gmm", 2, 0).unwrap().with_log_scale_offset(2.0);
        let hidden = t.without_score();
        assert!(!hidden.has_score() && hidden.analytic().is_none());
        assert_eq!(hidden.log_density(&[1.0, 1.0]), t.log_density(&[1.0, 1.0]));
        assert_eq!(hidden.modes(), t.modes());
    }
}
