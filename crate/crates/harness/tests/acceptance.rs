//! The ten acceptance criteria, one PASS/FAIL line each.
//!
//! `cargo test --test acceptance -- 5` runs criterion 5 alone.

use std::process::ExitCode;

use msip_harness::acceptance::{run_criterion, CRITERIA};

fn main() -> ExitCode {
    // libtest flags are ignored; a bare number selects one criterion
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let ids: Vec<usize> = CRITERIA.iter().map(|c| c.0).filter(|id| only.is_none_or(|o| o == *id)).collect();
    let mut failed = 0;
    for id in &ids {
        let r = run_criterion(*id).expect("listed criterion");
        println!("{}", r.line());
        failed += usize::from(!r.passed);
    }
    println!("acceptance: {} of {} criteria passed", ids.len() - failed, ids.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
