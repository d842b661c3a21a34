use std::path::Path;

use msip_harness::acceptance::strip_wall_ms;
use msip_harness::output::{aggregate, plot_result_dir, summarize, Summary, CSV_FILE, CSV_HEADER, SUMMARY_FILE};
use msip_harness::svg::render_scatter_svg;
use msip_harness::{parse_config, run_experiment, write_outputs, RunConfig};
use msip_core::make_benchmark;
use msip_core::msip::ParticleConfiguration;
use nalgebra::{DMatrix, DVector};

const GOLDEN_DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden");

fn toy_config() -> RunConfig {
    let text = std::fs::read(Path::new(GOLDEN_DIR).join("toy_config.json")).unwrap();
    parse_config(&text).unwrap()
}

// Regenerate with MSIP_BLESS=1 after an intentional numerical change.
#[test]
fn toy_run_reproduces_the_golden_csv() {
    let dir = tempfile::tempdir().unwrap();
    write_outputs(&run_experiment(&toy_config()).unwrap(), dir.path()).unwrap();
    let csv = strip_wall_ms(&std::fs::read_to_string(dir.path().join(CSV_FILE)).unwrap());
    let golden = Path::new(GOLDEN_DIR).join("toy_metrics.csv");
    if std::env::var_os("MSIP_BLESS").is_some() {
        std::fs::write(&golden, &csv).unwrap();
    }
    assert_eq!(csv, std::fs::read_to_string(golden).unwrap());
}

#[test]
fn csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    write_outputs(&run_experiment(&toy_config()).unwrap(), dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join(CSV_FILE)).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    // iterations 0, 10, 20, 30 for each of two trials
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.len() == 9 && r[8] == "ok"));
    assert_eq!(rows.iter().map(|r| r[1]).collect::<Vec<_>>(), ["0", "10", "20", "30", "0", "10", "20", "30"]);
    assert!(!csv.contains('\r') && csv.ends_with('\n'));
}

#[test]
fn unrequested_metrics_leave_empty_cells() {
    let mut cfg = toy_config();
    cfg.metrics.list = vec![serde_json::from_str("\"loglik\"").unwrap()];
    cfg.trials.count = 1;
    let r = run_experiment(&cfg).unwrap();
    let csv = msip_harness::output::render_csv(&r.trials);
    for line in csv.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!((cells[2], cells[3]), ("", ""));
        assert!(!cells[4].is_empty());
    }
}

#[test]
fn summary_matches_a_recomputation_from_the_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy_config();
    cfg.trials.count = 5;
    write_outputs(&run_experiment(&cfg).unwrap(), dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join(CSV_FILE)).unwrap();
    let summary: Summary = serde_json::from_str(&std::fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(summary.config_echo, cfg);
    // last row of each trial
    let mut last: Vec<Vec<String>> = Vec::new();
    for line in csv.lines().skip(1) {
        let cells: Vec<String> = line.split(',').map(String::from).collect();
        match last.last_mut() {
            Some(prev) if prev[0] == cells[0] => *prev = cells,
            _ => last.push(cells),
        }
    }
    assert_eq!(last.len(), 5);
    for (col, name) in [(2, "mmd2"), (3, "ksd"), (4, "loglik")] {
        let values: Vec<f64> = last.iter().map(|r| r[col].parse().unwrap()).collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let a = &summary.metrics[name];
        assert!((a.mean.unwrap() - mean).abs() <= 1e-12 * mean.abs().max(1.0), "{name}");
        assert!((a.std.unwrap() - std).abs() <= 1e-12 * std.max(1.0), "{name}");
        let again = aggregate(&values);
        for (x, y) in [(a.p05, again.p05), (a.p95, again.p95)] {
            assert!((x.unwrap() - y.unwrap()).abs() <= 1e-12, "{name}");
        }
    }
    let cov = summary.coverage.unwrap();
    assert_eq!((cov.n_modes, cov.trials), (5, 5));
}

#[test]
fn removing_a_trial_leaves_the_others_alone() {
    let all = run_experiment(&toy_config()).unwrap();
    let mut cfg = toy_config();
    cfg.trials.base_seed += 1;
    cfg.trials.count = 1;
    let second = run_experiment(&cfg).unwrap();
    let strip = |csv: String| strip_wall_ms(&csv).lines().skip(1).map(|l| l.split_once(',').unwrap().1.to_string()).collect::<Vec<_>>();
    let both = strip(msip_harness::output::render_csv(&all.trials));
    let alone = strip(msip_harness::output::render_csv(&second.trials));
    assert_eq!(&both[4..], &alone[..]);
}

#[test]
fn svg_files_parse_as_xml_and_can_be_redrawn() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_outputs(&run_experiment(&toy_config()).unwrap(), dir.path()).unwrap();
    let svgs: Vec<_> = files.iter().filter(|f| f.extension().is_some_and(|e| e == "svg")).collect();
    assert_eq!(svgs.len(), 2);
    let first = std::fs::read_to_string(svgs[0]).unwrap();
    let doc = roxmltree::Document::parse(&first).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    let circles = doc.descendants().filter(|n| n.has_tag_name("circle")).count();
    assert_eq!(circles, 6);
    // plot regenerates identical files from the result directory
    std::fs::remove_file(svgs[0]).unwrap();
    plot_result_dir(dir.path()).unwrap();
    assert_eq!(std::fs::read_to_string(svgs[0]).unwrap(), first);
}

#[test]
fn single_particle_svg() {
    let t = make_benchmark("himmelblau", 2, 0).unwrap();
    let pc = ParticleConfiguration {
        y: DMatrix::from_row_slice(1, 2, &[3.0, 2.0]),
        w: DVector::from_element(1, 1.0),
        log_weight_scale: 0.0,
    };
    let svg = render_scatter_svg(&pc, &t).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("circle")).count(), 1);
    assert!(doc.descendants().any(|n| n.has_tag_name("linearGradient")));
}

#[test]
fn summary_of_zero_trials() {
    let mut cfg = toy_config();
    cfg.trials.count = 0;
    let r = run_experiment(&cfg).unwrap();
    let s = summarize(&r);
    assert!(s.trials.is_empty() && s.coverage.is_none());
    assert_eq!(s.metrics["mmd2"].n, 0);
    assert_eq!(msip_harness::output::render_csv(&r.trials), format!("{CSV_HEADER}\n"));
}
