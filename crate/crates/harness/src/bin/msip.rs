use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use msip_core::KernelSpec;
use msip_harness::acceptance::{gradient_check, invariance_check, run_all};
use msip_harness::config::build_target;
use msip_harness::output::{plot_result_dir, summarize};
use msip_harness::{load_config, run_experiment, write_outputs, HarnessError, RunConfig, TrialStatus};

/// Mean-shift interacting particles: experiments and checks.
#[derive(Debug, Parser)]
#[command(name = "msip", version)]
struct Cli {
    /// Override the base seed (MSIP_SEED, if set, takes precedence).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print nothing on success.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every trial of an experiment and write its results.
    Run { config: PathBuf },
    /// Compare the objective gradient with central differences.
    GradCheck { config: PathBuf },
    /// Check that the MSIP map ignores the normalizing constant.
    Invariance { config: PathBuf },
    /// Re-draw the SVG plots of a result directory.
    Plot { result_dir: PathBuf },
    /// Run the acceptance matrix.
    Bench,
}

const GRADIENT_TOL: f64 = 1e-5;
const INVARIANCE_TOL: f64 = 1e-10;

fn config(cli: &Cli, path: &Path) -> Result<RunConfig, HarnessError> {
    let mut cfg = load_config(path)?;
    let env = std::env::var("MSIP_SEED").ok();
    cfg.override_seed(cli.seed, env.as_deref())?;
    if let Some(out) = &cli.out {
        cfg.output.directory = out.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

fn kernel(cfg: &RunConfig) -> Result<KernelSpec, HarnessError> {
    Ok(KernelSpec::new(cfg.algorithm.sigma, cfg.algorithm.lambda)?)
}

fn run(cli: &Cli, path: &Path) -> Result<ExitCode, HarnessError> {
    let cfg = config(cli, path)?;
    let result = run_experiment(&cfg)?;
    let dir = PathBuf::from(&cfg.output.directory);
    let files = write_outputs(&result, &dir)?;
    if !cli.quiet {
        let summary = summarize(&result);
        for t in &result.trials {
            if t.status == TrialStatus::Failed {
                eprintln!("trial {} (seed {}) failed: {}", t.trial, t.seed, t.error.as_deref().unwrap_or(""));
            }
        }
        let ok = result.surviving().count();
        println!("{ok} of {} trials completed; results in {}", result.trials.len(), dir.display());
        for (name, a) in &summary.metrics {
            if let (Some(mean), Some(std)) = (a.mean, a.std) {
                println!("  {name}: mean {mean:.6e}, std {std:.3e} over {} trials", a.n);
            }
        }
        if let Some(c) = &summary.coverage {
            println!(
                "  coverage: {:.2} of {} modes on average; all modes in {:.0}% of trials",
                c.mean_covered,
                c.n_modes,
                100.0 * c.full_coverage_fraction
            );
        }
        println!("  wrote {} files", files.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn grad_check(cli: &Cli, path: &Path) -> Result<ExitCode, HarnessError> {
    let cfg = config(cli, path)?;
    let target = build_target(&cfg.target)?;
    if target.analytic().is_none() {
        return Err(HarnessError::Incompatible(format!(
            "grad-check needs closed-form embeddings; target `{}` has none",
            cfg.target.name
        )));
    }
    let worst = gradient_check(&target, &kernel(&cfg)?, cfg.particles.count, 20, cfg.trials.base_seed)?;
    if !cli.quiet {
        println!("max relative error: {worst:.6e}");
    }
    Ok(if worst <= GRADIENT_TOL { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn invariance(cli: &Cli, path: &Path) -> Result<ExitCode, HarnessError> {
    let cfg = config(cli, path)?;
    let target = build_target(&cfg.target)?;
    let worst = invariance_check(&target, &kernel(&cfg)?, cfg.particles.count, cfg.trials.base_seed)?;
    if !cli.quiet {
        println!("max relative error under log-density offsets ±40: {worst:.6e}");
    }
    Ok(if worst <= INVARIANCE_TOL { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn plot(cli: &Cli, dir: &Path) -> Result<ExitCode, HarnessError> {
    let files = plot_result_dir(dir)?;
    if !cli.quiet {
        for f in files {
            println!("{}", f.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn bench(cli: &Cli) -> ExitCode {
    let results = run_all(|r| {
        if !cli.quiet {
            println!("{}", r.line());
        }
    });
    let passed = results.iter().filter(|r| r.passed).count();
    if !cli.quiet {
        println!("{passed} of {} criteria passed", results.len());
    }
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.command {
        Command::Run { config } => run(&cli, config),
        Command::GradCheck { config } => grad_check(&cli, config),
        Command::Invariance { config } => invariance(&cli, config),
        Command::Plot { result_dir } => plot(&cli, result_dir),
        Command::Bench => Ok(bench(&cli)),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
