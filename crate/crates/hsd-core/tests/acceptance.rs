//! Acceptance gate: runs the full verification suite at the default
//! master seed and requires every criterion to pass. One line is printed
//! per criterion; run with `--nocapture` to see them on success.

use hsd_core::verify::{run_verification_suite, DEFAULT_MASTER_SEED};

#[test]
fn verification_suite_passes() {
    let report = run_verification_suite(DEFAULT_MASTER_SEED).expect("suite runs");
    for c in &report.criteria {
        println!(
            "criterion {:>2} [{}]: {}",
            c.id,
            if c.passed { "PASS" } else { "FAIL" },
            c.name
        );
        if !c.passed {
            for m in c.metrics.iter().filter(|m| !m.pass) {
                println!(
                    "    FAILED metric: {} (value {}, target {}, slack {})",
                    m.label, m.value, m.target, m.slack
                );
            }
        }
    }
    assert!(report.all_passed, "verification suite reported failures");
}
