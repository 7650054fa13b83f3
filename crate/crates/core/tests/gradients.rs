mod support;

use tamperloc::gradcheck::directional_check;
use tamperloc::loss::LossKind;

#[test]
fn every_op_and_the_network_match_central_differences() {
    let reports = support::gradient_suite().unwrap();
    for r in &reports {
        println!("{:<28} max discrepancy {:.3e} over {} coords", r.op, r.max_discrepancy, r.checked);
    }
    let failed: Vec<_> = reports.iter().filter(|r| !r.passed).collect();
    assert!(failed.is_empty(), "{failed:#?}");
}

#[test]
fn network_directional_derivative() {
    let (op, inputs) = support::generic_desk_network(11, Some(LossKind::Combined));
    let r = directional_check(&op, &inputs, 1e-5, 4).unwrap();
    assert!(r.rel_err < 1e-4, "{r:?}");
}
