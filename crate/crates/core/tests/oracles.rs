use inpaint_testkit::suites::{self, Check};

fn assert_all(checks: &[Check]) {
    for c in checks {
        println!("{}", c.line());
    }
    let failed: Vec<_> = checks.iter().filter(|c| !c.passed).map(|c| c.line()).collect();
    assert!(failed.is_empty(), "{failed:#?}");
}

#[test]
fn forward_passes_match_independent_oracles() {
    assert_all(&suites::oracle_suite(100, 11));
}

#[test]
fn gradients_match_finite_differences() {
    assert_all(&suites::gradient_suite(24, 5));
}

#[test]
fn blend_partitions_the_query_exactly() {
    assert_all(&[suites::partition_property(1000, 3)]);
}

#[test]
fn analytic_mac_ratio_vanishes() {
    assert_all(&[suites::mac_ratio_check()]);
}
