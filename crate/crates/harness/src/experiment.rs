//! Multi-trial execution and metric collection.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use msip_core::baselines::{run_cbs, run_svgd, Bandwidth, CbsParams, SvgdParams};
use msip_core::metrics::{
    ksd, mmd2_vs_gmm, mode_coverage, weighted_loglik, Coverage, KsdParams, MetricRow,
    MetricsReport, SampleEmbedding,
};
use msip_core::msip::{run_msip, Bounds, IterationView, MsipParams, ParticleConfiguration, RunOutcome};
use msip_core::{Estimator, GmmTarget, KernelSpec, TargetDensity};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::{build_target, AlgorithmName, MetricName, RunConfig};
use crate::error::{HarnessError, Result};

/// Stream of a trial's seed reserved for the initial particles; the
/// algorithms use streams `0..=T`.
const INIT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialStatus {
    Ok,
    DegenerateWeights,
    Diverged,
    Failed,
}

impl TrialStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ok => "ok",
            Self::DegenerateWeights => "degenerate-weights-occurred",
            Self::Diverged => "diverged",
            Self::Failed => "failed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Ok, Self::DegenerateWeights, Self::Diverged, Self::Failed]
            .into_iter()
            .find(|t| t.as_str() == s)
    }
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub status: TrialStatus,
    /// Rows recorded before the trial ended (kept for diverged and failed trials).
    pub report: MetricsReport,
    pub final_config: Option<ParticleConfiguration>,
    pub coverage: Option<Coverage>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: RunConfig,
    pub trials: Vec<TrialResult>,
}

impl ExperimentResult {
    pub fn surviving(&self) -> impl Iterator<Item = &TrialResult> {
        self.trials.iter().filter(|t| t.status != TrialStatus::Failed)
    }
}

enum MmdReference {
    Exact(GmmTarget),
    Sample(SampleEmbedding),
}

/// Everything shared by the trials of one experiment.
struct Context<'a> {
    cfg: &'a RunConfig,
    target: TargetDensity,
    mmd: Option<MmdReference>,
    ksd: KsdParams,
    coverage: Option<(DMatrix<f64>, f64)>,
}

impl<'a> Context<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self> {
        let target = build_target(&cfg.target)?;
        let wants = |m: MetricName| cfg.metrics.list.contains(&m);
        let mmd = if wants(MetricName::Mmd2) {
            Some(match target.analytic() {
                Some(g) => MmdReference::Exact(g.clone()),
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.metrics.reference_seed);
                    let x = target.reference_sample(cfg.metrics.reference_sample_size, &mut rng).ok_or_else(|| {
                        HarnessError::Incompatible(format!("target `{}` has no reference sampler", cfg.target.name))
                    })?;
                    MmdReference::Sample(SampleEmbedding::new(x, cfg.algorithm.sigma)?)
                }
            })
        } else {
            None
        };
        let ksd = KsdParams { bandwidth: cfg.metrics.ksd_bandwidth, scale: cfg.metrics.ksd_scale, ..KsdParams::default() };
        let coverage = if wants(MetricName::Coverage) {
            let modes = target.modes().ok_or_else(|| HarnessError::Incompatible("target has no modes".into()))?;
            let radius = cfg.metrics.coverage_radius.unwrap_or_else(|| default_coverage_radius(&target));
            Some((modes, radius))
        } else {
            None
        };
        Ok(Self { cfg, target, mmd, ksd, coverage })
    }

    fn row(&self, view: &IterationView, start: Instant) -> MetricRow {
        let list = &self.cfg.metrics.list;
        let c = view.config;
        let w = c.normalized_weights();
        let eval = |f: &dyn Fn(&DVector<f64>) -> msip_core::Result<f64>| match &w {
            Ok(w) => f(w).unwrap_or(f64::NAN),
            Err(_) => f64::NAN,
        };
        let mmd2 = self.mmd.as_ref().map(|r| {
            eval(&|w| match r {
                MmdReference::Exact(g) => mmd2_vs_gmm(&c.y, w, g, self.cfg.algorithm.sigma),
                MmdReference::Sample(s) => s.mmd2(&c.y, w),
            })
        });
        let ksd = list
            .contains(&MetricName::Ksd)
            .then(|| eval(&|w| ksd(&c.y, w, &self.target, &self.ksd)));
        let loglik = list
            .contains(&MetricName::Loglik)
            .then(|| eval(&|w| weighted_loglik(&c.y, w, &self.target)));
        MetricRow {
            iteration: view.iteration,
            mmd2,
            ksd,
            loglik,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            density_evals: view.density_evals,
            score_evals: view.score_evals,
        }
    }
}

/// Twice the largest component standard deviation for mixtures; 0.5 otherwise.
pub fn default_coverage_radius(target: &TargetDensity) -> f64 {
    match target.analytic() {
        Some(g) => {
            let largest = g
                .covariances()
                .iter()
                .map(|c| c.clone().symmetric_eigen().eigenvalues.max())
                .fold(0.0, f64::max);
            2.0 * largest.sqrt()
        }
        None => 0.5,
    }
}

/// Initial particles of a trial: `N(init_mean, init_cov_scale · I)`.
pub fn initial_particles(cfg: &RunConfig, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INIT_STREAM);
    let p = &cfg.particles;
    let s = p.init_cov_scale.sqrt();
    DMatrix::from_fn(p.count, cfg.target.dim, |_, j| {
        let z: f64 = StandardNormal.sample(&mut rng);
        p.init_mean[j] + s * z
    })
}

fn bounds(cfg: &RunConfig) -> Result<Option<Bounds>> {
    cfg.algorithm.bounds.map(|[lo, hi]| Bounds::new(lo, hi)).transpose().map_err(HarnessError::from)
}

fn estimator(cfg: &RunConfig) -> Estimator {
    match cfg.algorithm.name {
        AlgorithmName::MsipGi => Estimator::Stein,
        AlgorithmName::MsipGf => Estimator::GradientFree,
        AlgorithmName::MsipHybrid => Estimator::Hybrid(cfg.algorithm.gamma),
        _ => Estimator::Fredholm,
    }
}

struct RawOutcome {
    outcome: RunOutcome,
    final_config: ParticleConfiguration,
    degenerate: bool,
}

fn run_algorithm(
    cfg: &RunConfig,
    target: &TargetDensity,
    seed: u64,
    y0: &DMatrix<f64>,
    cb: &mut dyn FnMut(&IterationView),
) -> Result<RawOutcome> {
    let a = &cfg.algorithm;
    let bounds = bounds(cfg)?;
    match a.name {
        name if name.is_msip() => {
            let mut p = MsipParams::new(KernelSpec::new(a.sigma, a.lambda)?, estimator(cfg));
            p.eta = a.eta;
            p.iterations = a.iterations;
            p.q = a.q;
            p.bounds = bounds;
            p.seed = seed;
            let run = run_msip(target, &p, y0, Some(cb))?;
            let degenerate = run.had_degenerate_weights();
            Ok(RawOutcome { outcome: run.outcome, final_config: run.final_config, degenerate })
        }
        AlgorithmName::Svgd | AlgorithmName::ASvgd => {
            let bandwidth = if a.name == AlgorithmName::ASvgd {
                Bandwidth::Median
            } else {
                Bandwidth::Fixed(a.svgd_bandwidth)
            };
            let p = SvgdParams { eta: a.eta, iterations: a.iterations, bandwidth, bounds, seed };
            let run = run_svgd(target, &p, y0, Some(cb))?;
            Ok(RawOutcome { outcome: run.outcome, final_config: run.final_config, degenerate: false })
        }
        _ => {
            let p = CbsParams {
                beta: a.beta,
                eta: a.eta,
                iterations: a.iterations,
                noise_scale: a.noise_scale,
                bounds,
                seed,
            };
            let run = run_cbs(target, &p, y0, Some(cb))?;
            Ok(RawOutcome { outcome: run.outcome, final_config: run.final_config, degenerate: false })
        }
    }
}

fn run_trial(ctx: &Context, trial: usize) -> TrialResult {
    let cfg = ctx.cfg;
    let seed = cfg.trial_seed(trial);
    let y0 = initial_particles(cfg, seed);
    let every = cfg.metrics.every_n_iters;
    let last = cfg.algorithm.iterations;
    let mut rows = Vec::new();
    let start = Instant::now();
    let outcome = {
        let mut cb = |v: &IterationView| {
            if v.iteration.is_multiple_of(every) || v.iteration == last {
                rows.push(ctx.row(v, start));
            }
        };
        run_algorithm(cfg, &ctx.target, seed, &y0, &mut cb)
    };
    let report = MetricsReport {
        algorithm: cfg.algorithm.name.as_str().to_string(),
        target: cfg.target.name.clone(),
        seed,
        rows,
    };
    match outcome {
        Ok(out) => {
            let status = match out.outcome {
                RunOutcome::Diverged { .. } => TrialStatus::Diverged,
                RunOutcome::Completed if out.degenerate => TrialStatus::DegenerateWeights,
                RunOutcome::Completed => TrialStatus::Ok,
            };
            let coverage = ctx.coverage.as_ref().and_then(|(modes, radius)| {
                mode_coverage(&out.final_config.y, &out.final_config.w, modes, *radius).ok()
            });
            TrialResult { trial, seed, status, report, final_config: Some(out.final_config), coverage, error: None }
        }
        Err(e) => TrialResult {
            trial,
            seed,
            status: TrialStatus::Failed,
            report,
            final_config: None,
            coverage: None,
            error: Some(e.to_string()),
        },
    }
}

/// Runs every trial of `cfg`, on up to `trials.workers` threads.
///
/// Each trial depends only on its own seed, so results do not depend on the
/// worker count. Fails only when the setup fails or every trial fails.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentResult> {
    let ctx = Context::new(cfg)?;
    let n = cfg.trials.count;
    let slots: Mutex<Vec<Option<TrialResult>>> = Mutex::new(vec![None; n]);
    let next = AtomicUsize::new(0);
    let workers = cfg.trials.workers.min(n).max(1);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let t = next.fetch_add(1, Ordering::Relaxed);
                if t >= n {
                    break;
                }
                let r = run_trial(&ctx, t);
                slots.lock().expect("no trial panicked")[t] = Some(r);
            });
        }
    });
    let trials: Vec<TrialResult> = slots.into_inner().expect("no trial panicked").into_iter().flatten().collect();
    if n > 0 && trials.iter().all(|t| t.status == TrialStatus::Failed) {
        let first = trials[0].error.clone().unwrap_or_default();
        return Err(HarnessError::AllTrialsFailed(first));
    }
    Ok(ExperimentResult { config: cfg.clone(), trials })
}
