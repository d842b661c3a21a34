//! Baseline particle samplers: Stein variational gradient descent and
//! consensus-based sampling. Both return equally weighted particles.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::metrics::NORMALIZE_TOL;
use crate::msip::{Bounds, IterationView, ParticleConfiguration, RunOutcome};
use crate::targets::{log_sum_exp, TargetDensity};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    /// `σ² = median(‖y_i − y_j‖²) / (2 log(M + 1))`, recomputed every step.
    Median,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvgdParams {
    pub eta: f64,
    pub iterations: usize,
    pub bandwidth: Bandwidth,
    pub bounds: Option<Bounds>,
    pub seed: u64,
}

impl SvgdParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(invalid("eta", "must be positive"));
        }
        if let Bandwidth::Fixed(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(invalid("bandwidth", "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CbsParams {
    pub beta: f64,
    pub eta: f64,
    pub iterations: usize,
    pub noise_scale: f64,
    pub bounds: Option<Bounds>,
    pub seed: u64,
}

impl CbsParams {
    pub const DEFAULT_BETA: f64 = 0.9;

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(invalid("beta", "must be positive"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(invalid("eta", "must be positive"));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(invalid("noise_scale", "must be nonnegative"));
        }
        Ok(())
    }
}

/// Fallback bandwidth when the median heuristic degenerates.
pub const MEDIAN_FALLBACK: f64 = 1.0;

/// Median-heuristic bandwidth `σ` for the particle set.
pub fn median_bandwidth(y: &DMatrix<f64>) -> f64 {
    let m = y.nrows();
    let mut d2: Vec<f64> = Vec::with_capacity(m * (m.saturating_sub(1)) / 2);
    for i in 0..m {
        for j in (i + 1)..m {
            d2.push((y.row(i) - y.row(j)).norm_squared());
        }
    }
    if d2.is_empty() {
        return MEDIAN_FALLBACK;
    }
    d2.sort_by(f64::total_cmp);
    let n = d2.len();
    let med = if n % 2 == 1 { d2[n / 2] } else { 0.5 * (d2[n / 2 - 1] + d2[n / 2]) };
    let s2 = med / (2.0 * ((m + 1) as f64).ln());
    if s2 > 0.0 && s2.is_finite() {
        s2.sqrt()
    } else {
        MEDIAN_FALLBACK
    }
}

fn row(y: &DMatrix<f64>, i: usize) -> Vec<f64> {
    y.row(i).iter().copied().collect()
}

fn scores(y: &DMatrix<f64>, target: &TargetDensity) -> Result<DMatrix<f64>> {
    let mut s = DMatrix::zeros(y.nrows(), y.ncols());
    for i in 0..y.nrows() {
        let si = target.score(&row(y, i)).ok_or(Error::EstimatorUnavailable("svgd"))?;
        if si.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteScore { particle: i });
        }
        s.row_mut(i).iter_mut().zip(si).for_each(|(a, b)| *a = b);
    }
    Ok(s)
}

/// One SVGD step; returns the new positions and the bandwidth used.
pub fn svgd_step(y: &DMatrix<f64>, target: &TargetDensity, p: &SvgdParams) -> Result<(DMatrix<f64>, f64)> {
    p.validate()?;
    if !target.has_score() {
        return Err(Error::EstimatorUnavailable("svgd"));
    }
    let h = match p.bandwidth {
        Bandwidth::Fixed(h) => h,
        Bandwidth::Median => median_bandwidth(y),
    };
    let s = scores(y, target)?;
    let (m, d) = y.shape();
    let inv_h2 = 1.0 / (h * h);
    let mut phi = DMatrix::zeros(m, d);
    for i in 0..m {
        for j in 0..m {
            let diff = y.row(i) - y.row(j);
            let k = (-0.5 * diff.norm_squared() * inv_h2).exp();
            // κ(y_j, y_i) s(y_j) + ∇_{y_j} κ(y_j, y_i)
            for c in 0..d {
                phi[(i, c)] += k * (s[(j, c)] + diff[c] * inv_h2);
            }
        }
    }
    let mut next = y + phi * (p.eta / m as f64);
    if let Some(b) = p.bounds {
        b.clamp(&mut next);
    }
    Ok((next, h))
}

/// Softmax weights `α_i ∝ exp(β log π̃(y_i))` and the consensus point.
pub fn consensus(y: &DMatrix<f64>, target: &TargetDensity, beta: f64) -> Result<(DVector<f64>, DVector<f64>)> {
    let logp: Vec<f64> = (0..y.nrows()).map(|i| beta * target.log_density(&row(y, i))).collect();
    if let Some(i) = logp.iter().position(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::NonFiniteLogDensity { particle: i, value: logp[i] });
    }
    let lse = log_sum_exp(&logp);
    if lse == f64::NEG_INFINITY {
        return Err(Error::DegenerateConsensus);
    }
    let alpha = DVector::from_iterator(logp.len(), logp.iter().map(|v| (v - lse).exp()));
    let c = y.transpose() * &alpha;
    Ok((alpha, c))
}

/// One consensus-based sampling step.
pub fn cbs_step(y: &DMatrix<f64>, target: &TargetDensity, p: &CbsParams, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    p.validate()?;
    let (_, c) = consensus(y, target, p.beta)?;
    let (m, d) = y.shape();
    let noise = p.noise_scale * (2.0 * p.eta).sqrt();
    let mut next = y.clone();
    for i in 0..m {
        let diff: DVector<f64> = y.row(i).transpose() - &c;
        let dist = diff.norm();
        for j in 0..d {
            let z: f64 = StandardNormal.sample(rng);
            next[(i, j)] = y[(i, j)] - p.eta * diff[j] + noise * dist * z;
        }
    }
    if let Some(b) = p.bounds {
        b.clamp(&mut next);
    }
    Ok(next)
}

#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub outcome: RunOutcome,
    pub final_config: ParticleConfiguration,
    pub density_evals: usize,
    pub score_evals: usize,
}

fn check_start(target: &TargetDensity, y0: &DMatrix<f64>) -> Result<()> {
    if y0.nrows() == 0 {
        return Err(invalid("particles", "need at least one particle"));
    }
    if y0.ncols() != target.dim() {
        return Err(Error::DimensionMismatch { expected: target.dim(), found: y0.ncols() });
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(invalid("particles", "initial positions must be finite"));
    }
    Ok(())
}

fn first_non_finite(y: &DMatrix<f64>) -> Option<usize> {
    (0..y.nrows()).find(|&i| y.row(i).iter().any(|v| !v.is_finite()))
}

type Stepper<'a> = dyn FnMut(&DMatrix<f64>, usize) -> Result<DMatrix<f64>> + 'a;

fn drive(
    y0: &DMatrix<f64>,
    iterations: usize,
    per_step: (usize, usize),
    step: &mut Stepper<'_>,
    mut callback: Option<&mut dyn FnMut(&IterationView<'_>)>,
) -> Result<BaselineRun> {
    let mut config = ParticleConfiguration::uniform(y0.clone());
    let (mut density_evals, mut score_evals) = (0, 0);
    for t in 0..=iterations {
        if let Some(cb) = callback.as_deref_mut() {
            cb(&IterationView { iteration: t, config: &config, density_evals, score_evals });
        }
        if t == iterations {
            break;
        }
        let next = step(&config.y, t)?;
        density_evals += per_step.0;
        score_evals += per_step.1;
        if let Some(particle) = first_non_finite(&next) {
            return Ok(BaselineRun {
                outcome: RunOutcome::Diverged { iteration: t, particle },
                final_config: config,
                density_evals,
                score_evals,
            });
        }
        config.y = next;
    }
    Ok(BaselineRun { outcome: RunOutcome::Completed, final_config: config, density_evals, score_evals })
}

pub fn run_svgd(
    target: &TargetDensity,
    p: &SvgdParams,
    y0: &DMatrix<f64>,
    callback: Option<&mut dyn FnMut(&IterationView<'_>)>,
) -> Result<BaselineRun> {
    p.validate()?;
    check_start(target, y0)?;
    if !target.has_score() {
        return Err(Error::EstimatorUnavailable("svgd"));
    }
    let m = y0.nrows();
    drive(y0, p.iterations, (0, m), &mut |y, _| Ok(svgd_step(y, target, p)?.0), callback)
}

/// Runs CBS; iteration `t` draws its noise from ChaCha stream `t` of `p.seed`.
pub fn run_cbs(
    target: &TargetDensity,
    p: &CbsParams,
    y0: &DMatrix<f64>,
    callback: Option<&mut dyn FnMut(&IterationView<'_>)>,
) -> Result<BaselineRun> {
    p.validate()?;
    check_start(target, y0)?;
    let m = y0.nrows();
    let mut stepper = |y: &DMatrix<f64>, t: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        rng.set_stream(t as u64);
        cbs_step(y, target, p, &mut rng)
    };
    drive(y0, p.iterations, (m, 0), &mut stepper, callback)
}

/// Equal weights summing to one.
pub fn uniform_weights(m: usize) -> DVector<f64> {
    let w = DVector::from_element(m, 1.0 / m as f64);
    debug_assert!((w.sum() - 1.0).abs() < NORMALIZE_TOL.sqrt());
    w
}
