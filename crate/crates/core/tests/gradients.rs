mod common;

use common::gradient_check;

#[test]
fn full_network_gradient_matches_finite_differences() {
    let check = gradient_check(5, false);
    assert!(check.params > 4000);
    assert!(check.worst <= 1e-3, "max rel err {:.3e} in {}", check.worst, check.worst_block);
}

#[test]
fn gradient_with_dropout_masks() {
    let check = gradient_check(17, true);
    assert!(check.worst <= 1e-3, "max rel err {:.3e} in {}", check.worst, check.worst_block);
}
