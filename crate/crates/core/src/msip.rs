//! The regularized mean-shift interacting particle iteration.
//!
//! One step estimates `(v̂₀, v̂₁)` at the current particles, solves
//! `K_λ w = v̂₀` and `K_λ Z = v̂₁`, forms `Ψ = W⁻¹ Z` row by row and moves
//! `Y ← (1 - η) Y + η Ψ`. Both solves share one Cholesky factor.
//!
//! Weights are carried relative to a common scale `exp(log_weight_scale)`
//! inherited from the estimator, so an unknown normalizing constant never
//! touches the arithmetic of the map.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embeddings::{estimate, EmbeddingEstimate, Estimator, InnerQuadrature};
use crate::error::{invalid, Error, Result};
use crate::kernel::{cross_kernel, gram, GramMatrix, KernelSpec};
use crate::targets::{GmmEmbedding, GmmTarget, TargetDensity};

/// Interval applied to every coordinate after each damped update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(invalid("bounds", format!("need lo < hi, got ({lo}, {hi})")));
        }
        Ok(Self { lo, hi })
    }

    pub fn clamp(&self, y: &mut DMatrix<f64>) {
        y.iter_mut().for_each(|v| *v = v.clamp(self.lo, self.hi));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsipParams {
    pub kernel: KernelSpec,
    pub eta: f64,
    pub iterations: usize,
    pub estimator: Estimator,
    /// Inner-rule size for the Monte Carlo estimators.
    pub q: usize,
    pub bounds: Option<Bounds>,
    pub seed: u64,
    /// Weights (relative to the common scale) smaller than this in magnitude
    /// are treated as degenerate.
    pub weight_floor: f64,
    /// Keep every iterate in the trajectory.
    pub record_positions: bool,
}

impl MsipParams {
    pub const DEFAULT_WEIGHT_FLOOR: f64 = 1e-300;

    pub fn new(kernel: KernelSpec, estimator: Estimator) -> Self {
        Self {
            kernel,
            eta: 0.5,
            iterations: 1000,
            estimator,
            q: 10,
            bounds: None,
            seed: 0,
            weight_floor: Self::DEFAULT_WEIGHT_FLOOR,
            record_positions: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta <= 1.0) {
            return Err(invalid("eta", format!("must lie in [0, 1], got {}", self.eta)));
        }
        if self.iterations == 0 {
            return Err(invalid("iterations", "must be at least 1"));
        }
        if self.estimator.uses_monte_carlo() && self.q == 0 {
            return Err(invalid("q", "must be at least 1"));
        }
        if !(self.weight_floor >= 0.0) {
            return Err(invalid("weight_floor", "must be nonnegative"));
        }
        self.estimator.validate()
    }

    /// Inner rule used at `iteration`: a fresh Monte Carlo draw from the
    /// run's ChaCha stream `iteration`, shared by all particles.
    pub fn inner_rule(&self, dim: usize, iteration: usize) -> Result<InnerQuadrature> {
        if self.estimator.uses_monte_carlo() {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(iteration as u64);
            InnerQuadrature::monte_carlo_from(self.q, dim, &mut rng)
        } else {
            Ok(InnerQuadrature::one_point(dim))
        }
    }
}

/// Particles and their signed weights `exp(log_weight_scale) · w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleConfiguration {
    pub y: DMatrix<f64>,
    pub w: DVector<f64>,
    pub log_weight_scale: f64,
}

impl ParticleConfiguration {
    pub fn uniform(y: DMatrix<f64>) -> Self {
        let m = y.nrows();
        Self {
            y,
            w: DVector::from_element(m, 1.0 / m as f64),
            log_weight_scale: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.y.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.y.ncols()
    }

    /// Weights in absolute units (may under- or overflow).
    pub fn absolute_weights(&self) -> DVector<f64> {
        &self.w * self.log_weight_scale.exp()
    }

    /// Weights rescaled to unit sum.
    pub fn normalized_weights(&self) -> Result<DVector<f64>> {
        crate::metrics::normalize_weights(&self.w)
    }
}

/// `w = K_λ⁻¹ v̂₀`.
pub fn optimal_weights(g: &GramMatrix, v0: &DVector<f64>) -> Result<DVector<f64>> {
    g.solve_vec(v0)
}

#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    pub v0: DVector<f64>,
    pub w: DVector<f64>,
    pub log_scale: f64,
    pub density_evals: usize,
    pub score_evals: usize,
    /// Particles whose weight was degenerate and which were held in place.
    pub frozen: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub y_next: DMatrix<f64>,
    pub diagnostics: StepDiagnostics,
}

struct MapEval {
    psi: DMatrix<f64>,
    w: DVector<f64>,
    est: EmbeddingEstimate,
    frozen: Vec<usize>,
}

fn is_degenerate(w: f64, floor: f64) -> bool {
    !(w.abs() >= floor) || w == 0.0
}

/// Groups of particles connected through nonzero kernel entries. Across
/// groups the Gram matrix is exactly block diagonal.
fn interaction_blocks(k: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let m = k.nrows();
    let mut seen = vec![false; m];
    let mut blocks = Vec::new();
    for start in 0..m {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut block = vec![start];
        let mut next = 0;
        while next < block.len() {
            let i = block[next];
            next += 1;
            for j in 0..m {
                if !seen[j] && k[(i, j)] != 0.0 {
                    seen[j] = true;
                    block.push(j);
                }
            }
        }
        block.sort_unstable();
        blocks.push(block);
    }
    blocks
}

/// Evaluates `Ψ` block by block. Each block of the (exactly) block-diagonal
/// Gram matrix is solved relative to its own largest density scale, so a
/// group of particles far from the mass is not lost to underflow against
/// particles sitting on it; `Ψ` is unchanged by this rescaling.
fn evaluate_map(
    y: &DMatrix<f64>,
    target: &TargetDensity,
    p: &MsipParams,
    iteration: usize,
    freeze: bool,
) -> Result<MapEval> {
    let rule = p.inner_rule(y.ncols(), iteration)?;
    let est = estimate(target, y, p.kernel.sigma, &rule, p.estimator)?;
    let g = gram(y, &p.kernel);
    let blocks = interaction_blocks(g.entries());
    let (m, d) = y.shape();
    let mut w = DVector::zeros(m);
    let mut psi = y.clone();
    let mut frozen = Vec::new();
    for block in &blocks {
        let Some((v0, v1, top)) = est.restricted(block) else {
            if !freeze {
                return Err(Error::DegenerateWeight { particle: block[0], weight: 0.0 });
            }
            frozen.extend(block.iter().copied());
            continue;
        };
        let sub;
        let gb = if blocks.len() == 1 {
            &g
        } else {
            sub = GramMatrix::assemble(&y.select_rows(block.iter()), &p.kernel, p.kernel.lambda);
            &sub
        };
        let wb = optimal_weights(gb, &v0)?;
        let zb = gb.solve(&v1)?;
        let rel = (top - est.log_scale).exp();
        for (r, &i) in block.iter().enumerate() {
            w[i] = wb[r] * rel;
            if is_degenerate(wb[r], p.weight_floor) {
                if !freeze {
                    return Err(Error::DegenerateWeight { particle: i, weight: wb[r] });
                }
                frozen.push(i);
            } else {
                for j in 0..d {
                    psi[(i, j)] = zb[(r, j)] / wb[r];
                }
            }
        }
    }
    frozen.sort_unstable();
    Ok(MapEval { psi, w, est, frozen })
}

/// `Ψ(Y) = W_λ⁻¹ K_λ⁻¹ v̂₁(Y)`, with the inner rule of iteration 0.
pub fn msip_map(y: &DMatrix<f64>, target: &TargetDensity, p: &MsipParams) -> Result<DMatrix<f64>> {
    msip_map_at(y, target, p, 0)
}

/// `Ψ(Y)` with the inner rule of `iteration`.
pub fn msip_map_at(y: &DMatrix<f64>, target: &TargetDensity, p: &MsipParams, iteration: usize) -> Result<DMatrix<f64>> {
    p.validate()?;
    Ok(evaluate_map(y, target, p, iteration, false)?.psi)
}

fn damped_update(y: &DMatrix<f64>, psi: &DMatrix<f64>, p: &MsipParams, iteration: usize) -> Result<DMatrix<f64>> {
    for i in 0..psi.nrows() {
        if psi.row(i).iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { iteration, particle: i });
        }
    }
    let mut next = if p.eta == 0.0 {
        y.clone()
    } else if p.eta == 1.0 {
        psi.clone()
    } else {
        y * (1.0 - p.eta) + psi * p.eta
    };
    if let Some(b) = p.bounds {
        b.clamp(&mut next);
    }
    Ok(next)
}

/// One damped step `Y ← (1 - η) Y + η Ψ(Y)`, clamped to the bounds.
pub fn msip_step(y: &DMatrix<f64>, target: &TargetDensity, p: &MsipParams, iteration: usize) -> Result<StepOutput> {
    p.validate()?;
    let eval = evaluate_map(y, target, p, iteration, false)?;
    step_from(y, eval, p, iteration)
}

fn step_from(y: &DMatrix<f64>, eval: MapEval, p: &MsipParams, iteration: usize) -> Result<StepOutput> {
    let y_next = damped_update(y, &eval.psi, p, iteration)?;
    Ok(StepOutput {
        y_next,
        diagnostics: StepDiagnostics {
            v0: eval.est.v0,
            w: eval.w,
            log_scale: eval.est.log_scale,
            density_evals: eval.est.density_evals,
            score_evals: eval.est.score_evals,
            frozen: eval.frozen,
        },
    })
}

/// What a per-iteration callback sees: the configuration at `Y^(t)` with the
/// weights solved there, and cumulative evaluation counts.
#[derive(Debug)]
pub struct IterationView<'a> {
    pub iteration: usize,
    pub config: &'a ParticleConfiguration,
    pub density_evals: usize,
    pub score_evals: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunOutcome {
    Completed,
    /// `Ψ` became non-finite; the run stopped at the last finite configuration.
    Diverged { iteration: usize, particle: usize },
}

#[derive(Debug, Clone)]
pub struct MsipRun {
    pub outcome: RunOutcome,
    pub final_config: ParticleConfiguration,
    /// Every configuration `Y^(0..=T)` when positions are recorded.
    pub trajectory: Vec<ParticleConfiguration>,
    /// `(iteration, particle)` pairs held in place because of a degenerate weight.
    pub frozen: Vec<(usize, usize)>,
    pub density_evals: usize,
    pub score_evals: usize,
}

impl MsipRun {
    pub fn had_degenerate_weights(&self) -> bool {
        !self.frozen.is_empty()
    }
}

/// Runs `p.iterations` damped MSIP steps from `y0`.
///
/// `callback` is invoked for `t = 0, …, T` (or up to the last finite
/// configuration when the run diverges). The final weights are re-solved at
/// `Y^(T)`.
pub fn run_msip(
    target: &TargetDensity,
    p: &MsipParams,
    y0: &DMatrix<f64>,
    mut callback: Option<&mut dyn FnMut(&IterationView<'_>)>,
) -> Result<MsipRun> {
    p.validate()?;
    if y0.nrows() == 0 {
        return Err(invalid("particles", "need at least one particle"));
    }
    if y0.ncols() != target.dim() {
        return Err(Error::DimensionMismatch { expected: target.dim(), found: y0.ncols() });
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(invalid("particles", "initial positions must be finite"));
    }

    let mut y = y0.clone();
    let mut trajectory = Vec::new();
    let mut frozen = Vec::new();
    let (mut density_evals, mut score_evals) = (0, 0);
    let mut t = 0;
    loop {
        let eval = evaluate_map(&y, target, p, t, true)?;
        density_evals += eval.est.density_evals;
        score_evals += eval.est.score_evals;
        let config = ParticleConfiguration {
            y: y.clone(),
            w: eval.w.clone(),
            log_weight_scale: eval.est.log_scale,
        };
        if let Some(cb) = callback.as_deref_mut() {
            cb(&IterationView { iteration: t, config: &config, density_evals, score_evals });
        }
        if p.record_positions {
            trajectory.push(config.clone());
        }
        if t == p.iterations {
            return Ok(MsipRun {
                outcome: RunOutcome::Completed,
                final_config: config,
                trajectory,
                frozen,
                density_evals,
                score_evals,
            });
        }
        frozen.extend(eval.frozen.iter().map(|&i| (t, i)));
        match step_from(&y, eval, p, t) {
            Ok(out) => y = out.y_next,
            Err(Error::Diverged { iteration, particle }) => {
                return Ok(MsipRun {
                    outcome: RunOutcome::Diverged { iteration, particle },
                    final_config: config,
                    trajectory,
                    frozen,
                    density_evals,
                    score_evals,
                })
            }
            Err(e) => return Err(e),
        }
        t += 1;
    }
}

/// A measure whose kernel embeddings and kernel energy are known exactly.
pub trait ExactEmbedding {
    fn dim(&self) -> usize;

    fn sigma(&self) -> f64;

    /// `C = ∫∫ κ(x, x') μ(dx) μ(dx')`.
    fn energy(&self) -> f64;

    /// `(v₀, v₁)` at every row of `y`.
    fn embeddings(&self, y: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>);
}

/// Exact embeddings of a Gaussian mixture, normalized to unit mass.
#[derive(Debug, Clone)]
pub struct GmmExact {
    embedding: GmmEmbedding,
    energy: f64,
    dim: usize,
}

impl GmmExact {
    pub fn new(gmm: &GmmTarget, sigma: f64) -> Self {
        let normalized = gmm.normalized();
        Self {
            embedding: normalized.embedding(sigma),
            energy: normalized.kernel_energy(sigma),
            dim: gmm.dim(),
        }
    }
}

impl ExactEmbedding for GmmExact {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sigma(&self) -> f64 {
        self.embedding.sigma()
    }

    fn energy(&self) -> f64 {
        self.energy
    }

    fn embeddings(&self, y: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let (m, d) = y.shape();
        let mut v0 = DVector::zeros(m);
        let mut v1 = DMatrix::zeros(m, d);
        for i in 0..m {
            let yi: Vec<f64> = y.row(i).iter().copied().collect();
            v0[i] = self.embedding.v0(&yi);
            for (j, v) in self.embedding.v1(&yi).into_iter().enumerate() {
                v1[(i, j)] = v;
            }
        }
        (v0, v1)
    }
}

/// A finite weighted sum of point masses.
#[derive(Debug, Clone)]
pub struct DiscreteMeasure {
    atoms: DMatrix<f64>,
    masses: DVector<f64>,
    kernel: KernelSpec,
}

impl DiscreteMeasure {
    pub fn new(atoms: DMatrix<f64>, masses: DVector<f64>, sigma: f64) -> Result<Self> {
        if atoms.nrows() != masses.len() {
            return Err(Error::DimensionMismatch { expected: atoms.nrows(), found: masses.len() });
        }
        Ok(Self { atoms, masses, kernel: KernelSpec::new(sigma, 0.0)? })
    }
}

impl ExactEmbedding for DiscreteMeasure {
    fn dim(&self) -> usize {
        self.atoms.ncols()
    }

    fn sigma(&self) -> f64 {
        self.kernel.sigma
    }

    fn energy(&self) -> f64 {
        let k = cross_kernel(&self.atoms, &self.atoms, &self.kernel);
        (self.masses.transpose() * k * &self.masses)[(0, 0)]
    }

    fn embeddings(&self, y: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        // rows: particles, columns: atoms
        let k = cross_kernel(y, &self.atoms, &self.kernel);
        let km = &k * DMatrix::from_diagonal(&self.masses);
        let v0 = DVector::from_iterator(y.nrows(), km.row_iter().map(|r| r.sum()));
        (v0, km * &self.atoms)
    }
}

fn check_exact(y: &DMatrix<f64>, emb: &dyn ExactEmbedding, kernel: &KernelSpec) -> Result<()> {
    if y.ncols() != emb.dim() {
        return Err(Error::DimensionMismatch { expected: emb.dim(), found: y.ncols() });
    }
    if (emb.sigma() - kernel.sigma).abs() > 1e-15 * kernel.sigma {
        return Err(invalid("sigma", "embedding and kernel bandwidths differ"));
    }
    Ok(())
}

/// `F_{M,λ}(Y) = ½ (C − ⟨w, v₀(Y)⟩)` with `w = K_λ⁻¹ v₀(Y)`.
pub fn objective_exact(y: &DMatrix<f64>, emb: &dyn ExactEmbedding, kernel: &KernelSpec) -> Result<f64> {
    check_exact(y, emb, kernel)?;
    let (v0, _) = emb.embeddings(y);
    let w = optimal_weights(&gram(y, kernel), &v0)?;
    Ok(0.5 * (emb.energy() - w.dot(&v0)))
}

/// `∇F_{M,λ}(Y) = σ⁻² W (K_λ W Y − v₁(Y))`.
pub fn objective_gradient_exact(y: &DMatrix<f64>, emb: &dyn ExactEmbedding, kernel: &KernelSpec) -> Result<DMatrix<f64>> {
    check_exact(y, emb, kernel)?;
    let (v0, v1) = emb.embeddings(y);
    let g = gram(y, kernel);
    let w = optimal_weights(&g, &v0)?;
    let wy = DMatrix::from_diagonal(&w) * y;
    let resid = g.entries() * wy - v1;
    let s2 = kernel.sigma * kernel.sigma;
    Ok(DMatrix::from_diagonal(&w) * resid / s2)
}

/// Objective for a Gaussian-mixture target (mixture weights normalized first).
pub fn objective(y: &DMatrix<f64>, target: &TargetDensity, kernel: &KernelSpec) -> Result<f64> {
    let gmm = target.analytic().ok_or(Error::AnalyticUnavailable)?;
    objective_exact(y, &GmmExact::new(gmm, kernel.sigma), kernel)
}

/// Gradient of [`objective`].
pub fn objective_gradient(y: &DMatrix<f64>, target: &TargetDensity, kernel: &KernelSpec) -> Result<DMatrix<f64>> {
    let gmm = target.analytic().ok_or(Error::AnalyticUnavailable)?;
    objective_gradient_exact(y, &GmmExact::new(gmm, kernel.sigma), kernel)
}

/// Central finite differences of [`objective`] with the given step.
pub fn objective_gradient_fd(y: &DMatrix<f64>, target: &TargetDensity, kernel: &KernelSpec, step: f64) -> Result<DMatrix<f64>> {
    let gmm = target.analytic().ok_or(Error::AnalyticUnavailable)?;
    let emb = GmmExact::new(gmm, kernel.sigma);
    let mut out = DMatrix::zeros(y.nrows(), y.ncols());
    let mut probe = y.clone();
    for i in 0..y.nrows() {
        for j in 0..y.ncols() {
            probe[(i, j)] = y[(i, j)] + step;
            let up = objective_exact(&probe, &emb, kernel)?;
            probe[(i, j)] = y[(i, j)] - step;
            let down = objective_exact(&probe, &emb, kernel)?;
            probe[(i, j)] = y[(i, j)];
            out[(i, j)] = (up - down) / (2.0 * step);
        }
    }
    Ok(out)
}
