//! Result files: metrics CSV, JSON summary, final configurations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use msip_core::msip::ParticleConfiguration;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::{parse_config, to_json, MetricName, OutputFormat, RunConfig};
use crate::error::{HarnessError, Result};
use crate::experiment::{ExperimentResult, TrialResult};
use crate::svg::emit_scatter_svg;

pub const CSV_HEADER: &str = "trial,iteration,mmd2,ksd,loglik,wall_ms,density_evals,score_evals,status";
pub const CSV_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";
pub const FINAL_CONFIGS_FILE: &str = "final_configs.json";

/// 17 significant digits.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn cell(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

/// One line per `(trial, recorded iteration)`, LF-terminated.
pub fn render_csv(trials: &[TrialResult]) -> String {
    let mut out = String::with_capacity(64 * (1 + trials.len()));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for t in trials {
        for r in &t.report.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                t.trial,
                r.iteration,
                cell(r.mmd2),
                cell(r.ksd),
                cell(r.loglik),
                format_float(r.wall_ms),
                r.density_evals,
                r.score_evals,
                t.status.as_str()
            )
            .expect("writing to a String");
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation (`n − 1` denominator; 0 for one trial).
    pub std: Option<f64>,
    /// Empirical 5% and 95% quantiles (linear interpolation), not a
    /// confidence interval.
    pub p05: Option<f64>,
    pub p95: Option<f64>,
}

/// Quantile by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn aggregate(values: &[f64]) -> Aggregate {
    let n = values.len();
    if n == 0 {
        return Aggregate { n, mean: None, std: None, p05: None, p95: None };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Aggregate { n, mean: Some(mean), std: Some(std), p05: Some(quantile(&sorted, 0.05)), p95: Some(quantile(&sorted, 0.95)) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub seed: u64,
    pub status: String,
    pub error: Option<String>,
    pub final_iteration: Option<usize>,
    pub modes_covered: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub n_modes: usize,
    pub trials: usize,
    pub mean_covered: f64,
    /// Fraction of trials that covered every mode.
    pub full_coverage_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_echo: RunConfig,
    pub trials: Vec<TrialSummary>,
    /// Statistics of each metric's last recorded value over surviving trials.
    pub metrics: BTreeMap<String, Aggregate>,
    pub coverage: Option<CoverageSummary>,
}

/// The last recorded value of `metric` for every surviving trial that has one.
pub fn final_values(result: &ExperimentResult, metric: MetricName) -> Vec<f64> {
    result
        .surviving()
        .filter_map(|t| t.report.rows.last())
        .filter_map(|r| match metric {
            MetricName::Mmd2 => r.mmd2,
            MetricName::Ksd => r.ksd,
            MetricName::Loglik => r.loglik,
            MetricName::Coverage => None,
        })
        .filter(|v| v.is_finite())
        .collect()
}

pub fn summarize(result: &ExperimentResult) -> Summary {
    let trials = result
        .trials
        .iter()
        .map(|t| TrialSummary {
            trial: t.trial,
            seed: t.seed,
            status: t.status.as_str().to_string(),
            error: t.error.clone(),
            final_iteration: t.report.rows.last().map(|r| r.iteration),
            modes_covered: t.coverage.as_ref().map(|c| c.covered),
        })
        .collect();
    let mut metrics = BTreeMap::new();
    for m in [MetricName::Mmd2, MetricName::Ksd, MetricName::Loglik] {
        if result.config.metrics.list.contains(&m) {
            let key = serde_json::to_value(m).expect("metric name").as_str().unwrap_or_default().to_string();
            metrics.insert(key, aggregate(&final_values(result, m)));
        }
    }
    let covs: Vec<_> = result.surviving().filter_map(|t| t.coverage.as_ref()).collect();
    let coverage = covs.first().map(|first| {
        let n_modes = first.per_mode.len();
        let n = covs.len() as f64;
        CoverageSummary {
            n_modes,
            trials: covs.len(),
            mean_covered: covs.iter().map(|c| c.covered as f64).sum::<f64>() / n,
            full_coverage_fraction: covs.iter().filter(|c| c.covered == n_modes).count() as f64 / n,
        }
    });
    Summary { config_echo: result.config.clone(), trials, metrics, coverage }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalConfigRecord {
    pub trial: usize,
    pub seed: u64,
    pub status: String,
    /// One row per particle.
    pub y: Vec<Vec<f64>>,
    /// Weights relative to `exp(log_weight_scale)`.
    pub w: Vec<f64>,
    pub log_weight_scale: f64,
}

impl FinalConfigRecord {
    pub fn from_config(trial: &TrialResult, c: &ParticleConfiguration) -> Self {
        Self {
            trial: trial.trial,
            seed: trial.seed,
            status: trial.status.as_str().to_string(),
            y: c.y.row_iter().map(|r| r.iter().copied().collect()).collect(),
            w: c.w.iter().copied().collect(),
            log_weight_scale: c.log_weight_scale,
        }
    }

    pub fn to_config(&self) -> Option<ParticleConfiguration> {
        let m = self.y.len();
        let d = self.y.first().map_or(0, Vec::len);
        if m == 0 || self.w.len() != m || self.y.iter().any(|r| r.len() != d) {
            return None;
        }
        Some(ParticleConfiguration {
            y: DMatrix::from_fn(m, d, |i, j| self.y[i][j]),
            w: DVector::from_vec(self.w.clone()),
            log_weight_scale: self.log_weight_scale,
        })
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

pub fn svg_name(trial: usize) -> String {
    format!("trial_{trial:03}.svg")
}

/// Writes the configured formats into `dir`, plus the resolved config and
/// final configurations (which `plot` reads back). Returns the files written.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, contents: String| -> Result<()> {
        let path = dir.join(name);
        write(&path, &contents)?;
        written.push(path);
        Ok(())
    };
    put(CONFIG_FILE, to_json(&result.config) + "\n")?;
    let records: Vec<FinalConfigRecord> = result
        .trials
        .iter()
        .filter_map(|t| t.final_config.as_ref().map(|c| FinalConfigRecord::from_config(t, c)))
        .collect();
    put(FINAL_CONFIGS_FILE, serde_json::to_string_pretty(&records).expect("records serialize") + "\n")?;
    let formats = &result.config.output.formats;
    if formats.contains(&OutputFormat::Csv) {
        put(CSV_FILE, render_csv(&result.trials))?;
    }
    if formats.contains(&OutputFormat::Json) {
        put(SUMMARY_FILE, serde_json::to_string_pretty(&summarize(result)).expect("summary serializes") + "\n")?;
    }
    if formats.contains(&OutputFormat::Svg) {
        written.extend(plot_records(&result.config, &records, dir)?);
    }
    Ok(written)
}

fn plot_records(cfg: &RunConfig, records: &[FinalConfigRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    let target = crate::config::build_target(&cfg.target)?;
    let mut written = Vec::new();
    for r in records {
        let path = dir.join(svg_name(r.trial));
        let pc = r.to_config().ok_or_else(|| HarnessError::Results {
            path: dir.join(FINAL_CONFIGS_FILE),
            message: format!("trial {} has an inconsistent configuration", r.trial),
        })?;
        emit_scatter_svg(&pc, &target, &path)?;
        written.push(path);
    }
    Ok(written)
}

/// Re-emits the SVG plots of a finished run from its result directory.
pub fn plot_result_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let read = |name: &str| {
        let path = dir.join(name);
        std::fs::read(&path).map_err(|e| HarnessError::io(&path, e))
    };
    let cfg = parse_config(&read(CONFIG_FILE)?)?;
    let records: Vec<FinalConfigRecord> = serde_json::from_slice(&read(FINAL_CONFIGS_FILE)?)
        .map_err(|e| HarnessError::Results { path: dir.join(FINAL_CONFIGS_FILE), message: e.to_string() })?;
    plot_records(&cfg, &records, dir)
}
