//! Finite-difference verification of every layer kind and of the three
//! full networks at quarter width, in f64.

use wordblock::pipeline::{layer_checks, network_checks};

fn main() -> wordblock::Result<()> {
    let tolerance = 1e-4;
    let mut reports = layer_checks(tolerance, 0)?;
    reports.extend(network_checks(0.25, 4, tolerance, 0)?);
    for r in &reports {
        let checked: usize = r.report.entries.iter().map(|e| e.checked).sum();
        let kinks: usize = r.report.entries.iter().map(|e| e.kinks).sum();
        println!(
            "{:<16} {:<4} max rel error {:.2e} over {checked} coordinates ({kinks} kinks skipped)",
            r.name,
            if r.report.passed() { "ok" } else { "FAIL" },
            r.report.max_rel_error()
        );
    }
    Ok(())
}
