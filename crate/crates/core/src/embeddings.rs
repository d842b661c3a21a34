//! Estimators of the kernel embeddings `v₀(y) = ∫ κ(x, y) π(dx)` and
//! `v₁(y) = ∫ x κ(x, y) π(dx)` from pointwise evaluations of an unnormalized
//! density.
//!
//! Writing `x = y + σξ` with `ξ` standard normal turns both embeddings into
//! Gaussian expectations, which an [`InnerQuadrature`] discretizes:
//!
//! * `v̂₀(y)      = ω Σ_q u_q π(y + σξ_q)`
//! * `v̂₁^gf(y)   = ω Σ_q u_q (y + σξ_q) π(y + σξ_q)`
//! * `v̂₁^S(y)    = y v̂₀(y) + σ² ω Σ_q u_q π(y + σξ_q) ∇log π(y + σξ_q)`
//! * `v̂₁^H(y)    = (1 - γ) v̂₁^gf(y) + γ v̂₁^S(y)`
//!
//! with `ω = (√(2π) σ)^d`. The one-point rule (`ξ = 0`, `u = 1`) turns the
//! Stein estimator into the Fredholm pair `ω π(y)` and `ω π(y)(y + σ²∇log π(y))`.
//!
//! Every probe is evaluated once in log space. Each particle's sum is shifted by
//! its own maximum, and the whole estimate is then expressed relative to a
//! single common scale `exp(log_scale)`, so nothing overflows even when
//! `π` and `ω` are far outside double range. The common factor cancels in the
//! mean-shift map.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::targets::TargetDensity;

/// Nodes and weights of a rule for integrals against the standard Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerQuadrature {
    nodes: DMatrix<f64>,
    weights: DVector<f64>,
}

impl InnerQuadrature {
    pub fn new(nodes: DMatrix<f64>, weights: DVector<f64>) -> Result<Self> {
        if nodes.nrows() == 0 {
            return Err(invalid("q", "inner rule needs at least one node"));
        }
        if nodes.nrows() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: nodes.nrows(),
                found: weights.len(),
            });
        }
        Ok(Self { nodes, weights })
    }

    /// `ξ₁ = 0`, `u₁ = 1`.
    pub fn one_point(dim: usize) -> Self {
        Self {
            nodes: DMatrix::zeros(1, dim),
            weights: DVector::from_element(1, 1.0),
        }
    }

    /// `q` iid standard-normal nodes with equal weights `1/q`, drawn from `rng`.
    pub fn monte_carlo_from(q: usize, dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if q == 0 {
            return Err(invalid("q", "inner rule needs at least one node"));
        }
        let nodes = DMatrix::from_fn(q, dim, |_, _| StandardNormal.sample(rng));
        Ok(Self {
            nodes,
            weights: DVector::from_element(q, 1.0 / q as f64),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.nodes.ncols()
    }

    pub fn nodes(&self) -> &DMatrix<f64> {
        &self.nodes
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }
}

/// Monte Carlo inner rule seeded by `rng_seed`.
pub fn mc_inner_quadrature(q: usize, dim: usize, rng_seed: u64) -> Result<InnerQuadrature> {
    InnerQuadrature::monte_carlo_from(q, dim, &mut ChaCha8Rng::seed_from_u64(rng_seed))
}

/// Which estimator of `v₁` (and which inner rule) to use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    /// One-point Stein pair.
    Fredholm,
    /// Stein estimator on a Monte Carlo rule.
    Stein,
    /// Gradient-free estimator on a Monte Carlo rule.
    GradientFree,
    /// Convex combination `(1 - γ) gf + γ Stein` on a shared Monte Carlo rule.
    Hybrid(f64),
    /// Closed-form embeddings of a Gaussian-mixture target.
    Analytic,
}

impl Estimator {
    pub fn tag(&self) -> &'static str {
        match self {
            Estimator::Fredholm => "fredholm",
            Estimator::Stein => "stein",
            Estimator::GradientFree => "gf",
            Estimator::Hybrid(_) => "hybrid",
            Estimator::Analytic => "analytic",
        }
    }

    pub fn parse(tag: &str, gamma: f64) -> Result<Self> {
        let est = match tag {
            "fredholm" => Estimator::Fredholm,
            "stein" => Estimator::Stein,
            "gf" | "gradient_free" => Estimator::GradientFree,
            "hybrid" => Estimator::Hybrid(gamma),
            "analytic" => Estimator::Analytic,
            other => return Err(invalid("estimator", format!("unknown estimator `{other}`"))),
        };
        est.validate()?;
        Ok(est)
    }

    pub fn validate(&self) -> Result<()> {
        if let Estimator::Hybrid(g) = self {
            if !(0.0..=1.0).contains(g) {
                return Err(invalid("gamma", format!("must lie in [0, 1], got {g}")));
            }
        }
        Ok(())
    }

    /// Weight of the Stein term.
    pub fn gamma(&self) -> f64 {
        match self {
            Estimator::Fredholm | Estimator::Stein => 1.0,
            Estimator::GradientFree | Estimator::Analytic => 0.0,
            Estimator::Hybrid(g) => *g,
        }
    }

    pub fn needs_score(&self) -> bool {
        !matches!(self, Estimator::Analytic) && self.gamma() > 0.0
    }

    /// Whether the estimator consumes a Monte Carlo inner rule.
    pub fn uses_monte_carlo(&self) -> bool {
        matches!(self, Estimator::Stein | Estimator::GradientFree | Estimator::Hybrid(_))
    }
}

/// `v̂₀` and `v̂₁` at every particle, relative to the common scale `exp(log_scale)`.
#[derive(Debug, Clone)]
pub struct EmbeddingEstimate {
    pub v0: DVector<f64>,
    pub v1: DMatrix<f64>,
    pub log_scale: f64,
    /// `v̂₀` of each particle relative to its own scale `exp(particle_log_scale[i])`.
    pub local_v0: DVector<f64>,
    pub local_v1: DMatrix<f64>,
    /// `-∞` for particles where every probe has zero density.
    pub particle_log_scale: DVector<f64>,
    pub estimator: Estimator,
    pub density_evals: usize,
    pub score_evals: usize,
}

impl EmbeddingEstimate {
    /// `v̂₀` in absolute units (may under- or overflow).
    pub fn v0_hat(&self) -> DVector<f64> {
        &self.v0 * self.log_scale.exp()
    }

    /// `v̂₁` in absolute units (may under- or overflow).
    pub fn v1_hat(&self) -> DMatrix<f64> {
        &self.v1 * self.log_scale.exp()
    }

    /// `(v̂₀, v̂₁, log_scale)` restricted to `rows`, relative to the largest
    /// scale among them; `None` when all of them see zero density.
    pub fn restricted(&self, rows: &[usize]) -> Option<(DVector<f64>, DMatrix<f64>, f64)> {
        let top = rows
            .iter()
            .map(|&i| self.particle_log_scale[i])
            .fold(f64::NEG_INFINITY, f64::max);
        if top == f64::NEG_INFINITY {
            return None;
        }
        let factor: Vec<f64> = rows
            .iter()
            .map(|&i| {
                let l = self.particle_log_scale[i];
                if l == f64::NEG_INFINITY { 0.0 } else { (l - top).exp() }
            })
            .collect();
        let v0 = DVector::from_fn(rows.len(), |r, _| factor[r] * self.local_v0[rows[r]]);
        let v1 = DMatrix::from_fn(rows.len(), self.local_v1.ncols(), |r, j| factor[r] * self.local_v1[(rows[r], j)]);
        Some((v0, v1, top))
    }
}

/// Log-density (and optionally score) evaluations at every probe `y_i + σξ_q`,
/// shared by all estimators computed at one configuration.
#[derive(Debug, Clone)]
pub struct ProbeCache {
    sigma: f64,
    particles: DMatrix<f64>,
    rule: InnerQuadrature,
    /// `u_q exp(log π(y_i + σξ_q) - max_q log π(y_i + σξ_q))`, `M × Q`.
    shifted: DMatrix<f64>,
    /// `exp(max_i - global max)` per particle.
    particle_scale: DVector<f64>,
    /// `log ω + max_i`, or `-∞`.
    particle_log_scale: DVector<f64>,
    /// Scores at probes, row `i * Q + q`; only filled when requested.
    scores: Option<DMatrix<f64>>,
    log_scale: f64,
    density_evals: usize,
    score_evals: usize,
}

impl ProbeCache {
    pub fn evaluate(
        target: &TargetDensity,
        particles: &DMatrix<f64>,
        sigma: f64,
        rule: &InnerQuadrature,
        with_scores: bool,
    ) -> Result<Self> {
        let (m, d) = particles.shape();
        if d != target.dim() {
            return Err(Error::DimensionMismatch { expected: target.dim(), found: d });
        }
        if rule.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, found: rule.dim() });
        }
        if with_scores && !target.has_score() {
            return Err(Error::EstimatorUnavailable("stein"));
        }
        let q = rule.len();
        let mut log_pi = DMatrix::zeros(m, q);
        let mut scores = with_scores.then(|| DMatrix::zeros(m * q, d));
        let mut probe = vec![0.0; d];
        let mut score_evals = 0;
        for i in 0..m {
            for k in 0..q {
                for j in 0..d {
                    probe[j] = particles[(i, j)] + sigma * rule.nodes[(k, j)];
                }
                let lp = target.log_density(&probe);
                if lp.is_nan() || lp == f64::INFINITY {
                    return Err(Error::NonFiniteLogDensity { particle: i, value: lp });
                }
                log_pi[(i, k)] = lp;
                if let Some(scores) = scores.as_mut() {
                    if lp > f64::NEG_INFINITY {
                        let s = target.score(&probe).ok_or(Error::EstimatorUnavailable("stein"))?;
                        score_evals += 1;
                        if s.iter().any(|v| !v.is_finite()) {
                            return Err(Error::NonFiniteScore { particle: i });
                        }
                        for j in 0..d {
                            scores[(i * q + k, j)] = s[j];
                        }
                    }
                }
            }
        }

        let maxima: Vec<f64> = log_pi
            .row_iter()
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let global = maxima.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if global == f64::NEG_INFINITY {
            return Err(Error::VanishingDensity);
        }
        let shifted = DMatrix::from_fn(m, q, |i, k| {
            if maxima[i] == f64::NEG_INFINITY {
                0.0
            } else {
                rule.weights[k] * (log_pi[(i, k)] - maxima[i]).exp()
            }
        });
        let particle_scale = DVector::from_iterator(
            m,
            maxima.iter().map(|mx| if *mx == f64::NEG_INFINITY { 0.0 } else { (mx - global).exp() }),
        );
        let log_omega = d as f64 * (0.5 * (2.0 * std::f64::consts::PI).ln() + sigma.ln());
        let particle_log_scale = DVector::from_iterator(m, maxima.iter().map(|mx| mx + log_omega));
        Ok(Self {
            sigma,
            particles: particles.clone(),
            rule: rule.clone(),
            shifted,
            particle_scale,
            particle_log_scale,
            scores,
            log_scale: log_omega + global,
            density_evals: m * q,
            score_evals,
        })
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn density_evals(&self) -> usize {
        self.density_evals
    }

    pub fn score_evals(&self) -> usize {
        self.score_evals
    }

    /// The same cache with every particle measured against its own scale.
    pub fn localized(&self) -> Self {
        let mut out = self.clone();
        out.particle_scale
            .iter_mut()
            .zip(self.particle_log_scale.iter())
            .for_each(|(s, l)| *s = if *l == f64::NEG_INFINITY { 0.0 } else { 1.0 });
        out
    }

    /// `v̂₀` relative to `exp(log_scale)`.
    pub fn v0(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.particles.nrows(),
            self.shifted
                .row_iter()
                .zip(self.particle_scale.iter())
                .map(|(row, scale)| scale * row.sum()),
        )
    }

    /// Gradient-free `v̂₁` relative to `exp(log_scale)`.
    pub fn v1_gradient_free(&self) -> DMatrix<f64> {
        let (m, d) = self.particles.shape();
        let q = self.rule.len();
        let mut out = DMatrix::zeros(m, d);
        for i in 0..m {
            let scale = self.particle_scale[i];
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..q {
                    acc += self.shifted[(i, k)] * (self.particles[(i, j)] + self.sigma * self.rule.nodes[(k, j)]);
                }
                out[(i, j)] = scale * acc;
            }
        }
        out
    }

    /// Stein `v̂₁` relative to `exp(log_scale)`.
    pub fn v1_stein(&self) -> Result<DMatrix<f64>> {
        let scores = self.scores.as_ref().ok_or(Error::EstimatorUnavailable("stein"))?;
        let (m, d) = self.particles.shape();
        let q = self.rule.len();
        let v0 = self.v0();
        let s2 = self.sigma * self.sigma;
        let mut out = DMatrix::zeros(m, d);
        for i in 0..m {
            let scale = self.particle_scale[i];
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..q {
                    let w = self.shifted[(i, k)];
                    if w != 0.0 {
                        acc += w * scores[(i * q + k, j)];
                    }
                }
                out[(i, j)] = self.particles[(i, j)] * v0[i] + s2 * scale * acc;
            }
        }
        Ok(out)
    }

    /// `(1 - γ) v̂₁^gf + γ v̂₁^S`, returning either component exactly at the endpoints.
    pub fn v1_hybrid(&self, gamma: f64) -> Result<DMatrix<f64>> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(invalid("gamma", format!("must lie in [0, 1], got {gamma}")));
        }
        if gamma == 0.0 {
            return Ok(self.v1_gradient_free());
        }
        let stein = self.v1_stein()?;
        if gamma == 1.0 {
            return Ok(stein);
        }
        Ok(self.v1_gradient_free() * (1.0 - gamma) + stein * gamma)
    }
}

/// Estimates `(v̂₀, v̂₁)` at every row of `particles` with one shared set of
/// density evaluations.
///
/// `rule` is ignored for [`Estimator::Fredholm`] (which always uses the
/// one-point rule) and for [`Estimator::Analytic`].
pub fn estimate(
    target: &TargetDensity,
    particles: &DMatrix<f64>,
    sigma: f64,
    rule: &InnerQuadrature,
    estimator: Estimator,
) -> Result<EmbeddingEstimate> {
    estimator.validate()?;
    if let Estimator::Analytic = estimator {
        return analytic_estimate(target, particles, sigma);
    }
    let one_point;
    let rule = if let Estimator::Fredholm = estimator {
        one_point = InnerQuadrature::one_point(particles.ncols());
        &one_point
    } else {
        rule
    };
    let cache = ProbeCache::evaluate(target, particles, sigma, rule, estimator.needs_score())?;
    let v1_of = |c: &ProbeCache| match estimator {
        Estimator::Fredholm | Estimator::Stein => c.v1_stein(),
        Estimator::GradientFree => Ok(c.v1_gradient_free()),
        Estimator::Hybrid(g) => c.v1_hybrid(g),
        Estimator::Analytic => unreachable!(),
    };
    let local = cache.localized();
    Ok(EmbeddingEstimate {
        v0: cache.v0(),
        v1: v1_of(&cache)?,
        log_scale: cache.log_scale(),
        local_v0: local.v0(),
        local_v1: v1_of(&local)?,
        particle_log_scale: cache.particle_log_scale.clone(),
        estimator,
        density_evals: cache.density_evals(),
        score_evals: cache.score_evals(),
    })
}

fn analytic_estimate(target: &TargetDensity, particles: &DMatrix<f64>, sigma: f64) -> Result<EmbeddingEstimate> {
    let gmm = target.analytic().ok_or(Error::AnalyticUnavailable)?;
    let (m, d) = particles.shape();
    if d != gmm.dim() {
        return Err(Error::DimensionMismatch { expected: gmm.dim(), found: d });
    }
    let emb = gmm.embedding(sigma);
    let rows: Vec<Vec<f64>> = particles.row_iter().map(|r| r.iter().copied().collect()).collect();
    let log_v0: Vec<f64> = rows.iter().map(|y| emb.log_v0(y) + target.log_scale_offset()).collect();
    let global = log_v0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if global == f64::NEG_INFINITY {
        return Err(Error::VanishingDensity);
    }
    let v0 = DVector::from_iterator(m, log_v0.iter().map(|l| (l - global).exp()));
    let local_v0 = DVector::from_iterator(m, log_v0.iter().map(|l| if *l == f64::NEG_INFINITY { 0.0 } else { 1.0 }));
    let mut v1 = DMatrix::zeros(m, d);
    let mut local_v1 = DMatrix::zeros(m, d);
    for (i, y) in rows.iter().enumerate() {
        for (j, shift) in emb.mean_shift(y).into_iter().enumerate() {
            v1[(i, j)] = v0[i] * shift;
            local_v1[(i, j)] = local_v0[i] * shift;
        }
    }
    Ok(EmbeddingEstimate {
        v0,
        v1,
        local_v0,
        local_v1,
        particle_log_scale: DVector::from_vec(log_v0),
        log_scale: global,
        estimator: Estimator::Analytic,
        density_evals: 0,
        score_evals: 0,
    })
}

fn absolute_cache(
    target: &TargetDensity,
    particles: &DMatrix<f64>,
    sigma: f64,
    rule: &InnerQuadrature,
    with_scores: bool,
) -> Result<(ProbeCache, f64)> {
    let cache = ProbeCache::evaluate(target, particles, sigma, rule, with_scores)?;
    let scale = cache.log_scale().exp();
    Ok((cache, scale))
}

/// `v̂₀(y_i) = ω Σ_q u_q π(y_i + σξ_q)` in absolute units.
pub fn estimate_v0(
    target: &TargetDensity,
    particles: &DMatrix<f64>,
    sigma: f64,
    rule: &InnerQuadrature,
) -> Result<DVector<f64>> {
    let (cache, scale) = absolute_cache(target, particles, sigma, rule, false)?;
    Ok(cache.v0() * scale)
}

/// Gradient-free `v̂₁` in absolute units.
pub fn estimate_v1_gradient_free(
    target: &TargetDensity,
    particles: &DMatrix<f64>,
    sigma: f64,
    rule: &InnerQuadrature,
) -> Result<DMatrix<f64>> {
    let (cache, scale) = absolute_cache(target, particles, sigma, rule, false)?;
    Ok(cache.v1_gradient_free() * scale)
}

/// Stein `v̂₁` in absolute units.
pub fn estimate_v1_stein(
    target: &TargetDensity,
    particles: &DMatrix<f64>,
    sigma: f64,
    rule: &InnerQuadrature,
) -> Result<DMatrix<f64>> {
    let (cache, scale) = absolute_cache(target, particles, sigma, rule, true)?;
    Ok(cache.v1_stein()? * scale)
}

/// Hybrid `v̂₁` in absolute units.
pub fn estimate_v1_hybrid(
    gamma: f64,
    target: &TargetDensity,
    particles: &DMatrix<f64>,
    sigma: f64,
    rule: &InnerQuadrature,
) -> Result<DMatrix<f64>> {
    let (cache, scale) = absolute_cache(target, particles, sigma, rule, gamma > 0.0)?;
    Ok(cache.v1_hybrid(gamma)? * scale)
}
