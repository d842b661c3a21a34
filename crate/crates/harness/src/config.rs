//! Run configuration: a JSON document with per-fixture defaults.
//!
//! Parsing goes through a "raw" layer where every field is optional, then
//! [`RunConfig`] is filled from the fixture's hyperparameter row. A resolved
//! config serializes with every field present, so it parses back unchanged.

use std::path::Path;

use msip_core::{make_benchmark, TargetDensity};
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub target: TargetConfig,
    pub algorithm: AlgorithmConfig,
    pub particles: ParticlesConfig,
    pub metrics: MetricsConfig,
    pub trials: TrialsConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub name: String,
    pub dim: usize,
    /// Fixture seed (GMM-d means).
    pub seed: u64,
    /// Added to the log-density; the dynamics must not notice.
    pub log_scale_offset: f64,
    /// Set to false to hide the fixture's score function.
    pub score: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmName {
    MsipF,
    MsipGi,
    MsipGf,
    MsipHybrid,
    Svgd,
    ASvgd,
    Cbs,
}

impl AlgorithmName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::MsipF => "msip-f",
            Self::MsipGi => "msip-gi",
            Self::MsipGf => "msip-gf",
            Self::MsipHybrid => "msip-hybrid",
            Self::Svgd => "svgd",
            Self::ASvgd => "a-svgd",
            Self::Cbs => "cbs",
        }
    }

    pub fn is_msip(self) -> bool {
        matches!(self, Self::MsipF | Self::MsipGi | Self::MsipGf | Self::MsipHybrid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub name: AlgorithmName,
    pub eta: f64,
    pub iterations: usize,
    /// MSIP kernel bandwidth; also the MMD metric bandwidth.
    pub sigma: f64,
    pub lambda: f64,
    /// Inner Monte Carlo rule size (msip-gi, msip-gf, msip-hybrid).
    pub q: usize,
    /// Hybridization rate for msip-hybrid.
    pub gamma: f64,
    /// Per-coordinate box `[lo, hi]`; `null` disables clamping.
    pub bounds: Option<[f64; 2]>,
    /// Fixed kernel bandwidth for svgd.
    pub svgd_bandwidth: f64,
    /// CBS inverse temperature.
    pub beta: f64,
    pub noise_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticlesConfig {
    pub count: usize,
    pub init_mean: Vec<f64>,
    /// Initial particles are drawn from `N(init_mean, init_cov_scale · I)`.
    pub init_cov_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricName {
    Mmd2,
    Ksd,
    Loglik,
    Coverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    pub list: Vec<MetricName>,
    pub every_n_iters: usize,
    /// Size of the reference sample for MMD on targets without closed-form
    /// embeddings.
    pub reference_sample_size: usize,
    pub reference_seed: u64,
    pub ksd_bandwidth: f64,
    pub ksd_scale: f64,
    /// `null` means twice the largest component standard deviation
    /// (mixtures) or 0.5 (Himmelblau).
    pub coverage_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialsConfig {
    pub count: usize,
    /// Trial `t` runs with seed `base_seed + t`.
    pub base_seed: u64,
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    Svg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: String,
    pub formats: Vec<OutputFormat>,
}

// ---------------------------------------------------------------------------
// raw layer

fn present<'de, D, T>(d: D) -> std::result::Result<Option<Option<T>>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    Option::<T>::deserialize(d).map(Some)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    target: RawTarget,
    algorithm: RawAlgorithm,
    #[serde(default)]
    particles: RawParticles,
    #[serde(default)]
    metrics: RawMetrics,
    #[serde(default)]
    trials: RawTrials,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTarget {
    name: String,
    dim: Option<usize>,
    seed: Option<u64>,
    log_scale_offset: Option<f64>,
    score: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAlgorithm {
    name: AlgorithmName,
    eta: Option<f64>,
    iterations: Option<usize>,
    sigma: Option<f64>,
    lambda: Option<f64>,
    q: Option<usize>,
    gamma: Option<f64>,
    #[serde(default, deserialize_with = "present")]
    bounds: Option<Option<[f64; 2]>>,
    svgd_bandwidth: Option<f64>,
    beta: Option<f64>,
    noise_scale: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParticles {
    count: Option<usize>,
    init_mean: Option<Vec<f64>>,
    init_cov_scale: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMetrics {
    list: Option<Vec<MetricName>>,
    every_n_iters: Option<usize>,
    reference_sample_size: Option<usize>,
    reference_seed: Option<u64>,
    ksd_bandwidth: Option<f64>,
    ksd_scale: Option<f64>,
    coverage_radius: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrials {
    count: Option<usize>,
    base_seed: Option<u64>,
    workers: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    directory: Option<String>,
    formats: Option<Vec<OutputFormat>>,
}

/// One row of the per-fixture hyperparameter table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureDefaults {
    pub eta: f64,
    pub sigma: f64,
    pub ksd_bandwidth: f64,
}

pub const DEFAULT_ITERATIONS: usize = 1000;
pub const DEFAULT_TRIALS: usize = 10;
pub const DEFAULT_BOUNDS: [f64; 2] = [-1e3, 1e3];
pub const DEFAULT_PARTICLES: usize = 25;
pub const DEFAULT_Q: usize = 10;
pub const DEFAULT_LAMBDA: f64 = msip_core::KernelSpec::DEFAULT_LAMBDA;

pub fn fixture_defaults(name: &str, dim: usize) -> FixtureDefaults {
    match (name, dim) {
        ("funnel", 2) => FixtureDefaults { eta: 0.5, sigma: 0.1, ksd_bandwidth: 0.1 },
        ("funnel", _) => FixtureDefaults { eta: 0.05, sigma: 0.1, ksd_bandwidth: 0.1 },
        ("himmelblau", _) => FixtureDefaults { eta: 0.1, sigma: 0.05, ksd_bandwidth: 0.1 },
        // gmm, gmm5-aniso-2d
        _ => FixtureDefaults { eta: 0.5, sigma: 0.5, ksd_bandwidth: 0.5 },
    }
}

fn default_dim(name: &str) -> Option<usize> {
    match name {
        "gmm5-aniso-2d" | "himmelblau" => Some(2),
        _ => None,
    }
}

fn default_init_mean(name: &str, dim: usize) -> Vec<f64> {
    match name {
        // start far from every mode, as in the mode-collapse experiment
        "gmm5-aniso-2d" => vec![18.0, 18.0],
        _ => vec![0.0; dim],
    }
}

/// Rewrites the shorthand forms `"target": "gmm", "dim": 5` and
/// `"algorithm": "msip-f"` into their object forms.
fn expand_shorthand(mut doc: Value) -> Result<Value> {
    let Value::Object(map) = &mut doc else {
        return Err(HarnessError::config("", "config must be a JSON object"));
    };
    let top_dim = map.remove("dim");
    if let Some(Value::String(name)) = map.get("target") {
        let name = name.clone();
        map.insert("target".into(), serde_json::json!({ "name": name }));
    }
    if let Some(dim) = top_dim {
        match map.get_mut("target") {
            Some(Value::Object(t)) if !t.contains_key("dim") => {
                t.insert("dim".into(), dim);
            }
            Some(Value::Object(_)) => return Err(HarnessError::config("dim", "given both at top level and in `target`")),
            _ => return Err(HarnessError::config("dim", "top-level `dim` needs a `target`")),
        }
    }
    if let Some(Value::String(name)) = map.get("algorithm") {
        let name = name.clone();
        map.insert("algorithm".into(), serde_json::json!({ "name": name }));
    }
    Ok(doc)
}

/// Parses, defaults and validates a configuration document.
pub fn parse_config(text: &[u8]) -> Result<RunConfig> {
    let text = std::str::from_utf8(text).map_err(|e| HarnessError::config("", format!("not UTF-8: {e}")))?;
    let doc: Value = serde_json::from_str(text).map_err(|e| HarnessError::config("", e.to_string()))?;
    let doc = expand_shorthand(doc)?;
    let raw: RawConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        HarnessError::config(if path == "." { String::new() } else { path }, e.into_inner().to_string())
    })?;
    let cfg = resolve(raw)?;
    validate(&cfg)?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    parse_config(&bytes)
}

pub fn to_json(cfg: &RunConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("config serializes")
}

fn resolve(raw: RawConfig) -> Result<RunConfig> {
    let name = raw.target.name;
    let dim = match raw.target.dim.or_else(|| default_dim(&name)) {
        Some(d) => d,
        None => return Err(HarnessError::config("target.dim", format!("required for target `{name}`"))),
    };
    let table = fixture_defaults(&name, dim);
    let a = raw.algorithm;
    let sigma = a.sigma.unwrap_or(table.sigma);
    let target = TargetConfig {
        dim,
        seed: raw.target.seed.unwrap_or(0),
        log_scale_offset: raw.target.log_scale_offset.unwrap_or(0.0),
        score: raw.target.score.unwrap_or(true),
        name,
    };
    let algorithm = AlgorithmConfig {
        name: a.name,
        eta: a.eta.unwrap_or(table.eta),
        iterations: a.iterations.unwrap_or(DEFAULT_ITERATIONS),
        sigma,
        lambda: a.lambda.unwrap_or(DEFAULT_LAMBDA),
        q: a.q.unwrap_or(DEFAULT_Q),
        gamma: a.gamma.unwrap_or(0.5),
        bounds: a.bounds.unwrap_or(Some(DEFAULT_BOUNDS)),
        svgd_bandwidth: a.svgd_bandwidth.unwrap_or(sigma),
        beta: a.beta.unwrap_or(msip_core::baselines::CbsParams::DEFAULT_BETA),
        noise_scale: a.noise_scale.unwrap_or(1.0),
    };
    let has_modes = matches!(target.name.as_str(), "gmm" | "gmm5-aniso-2d" | "himmelblau");
    let metrics = MetricsConfig {
        list: raw.metrics.list.unwrap_or_else(|| {
            let mut l = vec![MetricName::Mmd2, MetricName::Ksd, MetricName::Loglik];
            if has_modes {
                l.push(MetricName::Coverage);
            }
            l
        }),
        every_n_iters: raw.metrics.every_n_iters.unwrap_or((algorithm.iterations / 10).max(1)),
        reference_sample_size: raw.metrics.reference_sample_size.unwrap_or(2000),
        reference_seed: raw.metrics.reference_seed.unwrap_or(0),
        ksd_bandwidth: raw.metrics.ksd_bandwidth.unwrap_or(table.ksd_bandwidth),
        ksd_scale: raw.metrics.ksd_scale.unwrap_or(1.0),
        coverage_radius: raw.metrics.coverage_radius,
    };
    let particles = ParticlesConfig {
        count: raw.particles.count.unwrap_or(DEFAULT_PARTICLES),
        init_mean: raw.particles.init_mean.unwrap_or_else(|| default_init_mean(&target.name, dim)),
        init_cov_scale: raw.particles.init_cov_scale.unwrap_or(1.0),
    };
    Ok(RunConfig {
        target,
        algorithm,
        particles,
        metrics,
        trials: TrialsConfig {
            count: raw.trials.count.unwrap_or(DEFAULT_TRIALS),
            base_seed: raw.trials.base_seed.unwrap_or(0),
            workers: raw.trials.workers.unwrap_or(1),
        },
        output: OutputConfig {
            directory: raw.output.directory.unwrap_or_else(|| "results".into()),
            formats: raw.output.formats.unwrap_or_else(|| vec![OutputFormat::Csv, OutputFormat::Json]),
        },
    })
}

fn check(ok: bool, path: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(HarnessError::config(path, message))
    }
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

/// Builds the configured target, with its offset applied and its score
/// hidden when requested.
pub fn build_target(t: &TargetConfig) -> Result<TargetDensity> {
    let base = make_benchmark(&t.name, t.dim, t.seed).map_err(|e| HarnessError::config("target", e.to_string()))?;
    let base = if t.score { base } else { base.without_score() };
    Ok(base.with_log_scale_offset(t.log_scale_offset))
}

pub fn validate(cfg: &RunConfig) -> Result<()> {
    let a = &cfg.algorithm;
    let target = build_target(&cfg.target)?;
    check(cfg.target.log_scale_offset.is_finite(), "target.log_scale_offset", "must be finite")?;
    if a.name.is_msip() {
        check(a.eta >= 0.0 && a.eta <= 1.0, "algorithm.eta", "must lie in [0, 1] for MSIP")?;
    } else {
        check(positive(a.eta), "algorithm.eta", "must be positive")?;
    }
    check(a.iterations >= 1, "algorithm.iterations", "must be at least 1")?;
    check(positive(a.sigma), "algorithm.sigma", "must be positive")?;
    check(a.lambda >= 0.0 && a.lambda.is_finite(), "algorithm.lambda", "must be nonnegative")?;
    check(a.q >= 1, "algorithm.q", "must be at least 1")?;
    check((0.0..=1.0).contains(&a.gamma), "algorithm.gamma", "must lie in [0, 1]")?;
    if let Some([lo, hi]) = a.bounds {
        check(lo < hi && lo.is_finite() && hi.is_finite(), "algorithm.bounds", "need finite lo < hi")?;
    }
    check(positive(a.svgd_bandwidth), "algorithm.svgd_bandwidth", "must be positive")?;
    check(positive(a.beta), "algorithm.beta", "must be positive")?;
    check(a.noise_scale >= 0.0 && a.noise_scale.is_finite(), "algorithm.noise_scale", "must be nonnegative")?;

    let p = &cfg.particles;
    check(p.count >= 1, "particles.count", "must be at least 1")?;
    check(p.init_mean.len() == cfg.target.dim, "particles.init_mean", "length must equal target.dim")?;
    check(p.init_mean.iter().all(|v| v.is_finite()), "particles.init_mean", "must be finite")?;
    check(p.init_cov_scale >= 0.0 && p.init_cov_scale.is_finite(), "particles.init_cov_scale", "must be nonnegative")?;

    let m = &cfg.metrics;
    check(m.every_n_iters >= 1, "metrics.every_n_iters", "must be at least 1")?;
    check(m.reference_sample_size >= 1, "metrics.reference_sample_size", "must be at least 1")?;
    check(positive(m.ksd_bandwidth), "metrics.ksd_bandwidth", "must be positive")?;
    check(positive(m.ksd_scale), "metrics.ksd_scale", "must be positive")?;
    if let Some(r) = m.coverage_radius {
        check(positive(r), "metrics.coverage_radius", "must be positive")?;
    }
    check(cfg.trials.workers >= 1, "trials.workers", "must be at least 1")?;

    // compatibility
    let needs_score = match a.name {
        AlgorithmName::MsipGi | AlgorithmName::Svgd | AlgorithmName::ASvgd => true,
        AlgorithmName::MsipHybrid => a.gamma > 0.0,
        // the one-point rule is the Stein estimator at a single node
        AlgorithmName::MsipF => true,
        AlgorithmName::MsipGf | AlgorithmName::Cbs => false,
    };
    if needs_score && !target.has_score() {
        return Err(HarnessError::Incompatible(format!(
            "algorithm `{}` needs the score of target `{}`, which is unavailable",
            a.name.as_str(),
            cfg.target.name
        )));
    }
    if m.list.contains(&MetricName::Ksd) && !target.has_score() {
        return Err(HarnessError::Incompatible("metric `ksd` needs the target score".into()));
    }
    if m.list.contains(&MetricName::Coverage) && target.modes().is_none() {
        return Err(HarnessError::Incompatible(format!(
            "metric `coverage` needs known modes; target `{}` has none",
            cfg.target.name
        )));
    }
    if cfg.output.formats.contains(&OutputFormat::Svg) && cfg.target.dim != 2 {
        return Err(HarnessError::Incompatible(format!(
            "svg output needs a 2-dimensional target, got dim {}",
            cfg.target.dim
        )));
    }
    Ok(())
}

impl RunConfig {
    /// Applies a command-line seed, then the `MSIP_SEED` value if given.
    pub fn override_seed(&mut self, cli: Option<u64>, env: Option<&str>) -> Result<()> {
        if let Some(s) = cli {
            self.trials.base_seed = s;
        }
        if let Some(text) = env {
            self.trials.base_seed = text
                .trim()
                .parse()
                .map_err(|_| HarnessError::config("MSIP_SEED", format!("not an unsigned integer: `{text}`")))?;
        }
        Ok(())
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.trials.base_seed.wrapping_add(trial as u64)
    }
}
