mod common;

use common::Check;

fn assert_all_pass(checks: &[Check]) {
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed())
        .map(|c| format!("{}: {:.3e} (tolerance {:.0e})", c.name, c.error, c.tolerance))
        .collect();
    assert!(failed.is_empty(), "failed gradient checks:\n{}", failed.join("\n"));
}

#[test]
fn every_primitive_matches_finite_differences() {
    let checks = common::primitive_checks();
    assert!(checks.len() >= 60);
    assert_all_pass(&checks);
}

#[test]
fn every_loss_matches_finite_differences() {
    assert_all_pass(&common::loss_checks());
}
