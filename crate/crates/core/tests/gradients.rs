mod common;

use common::*;

const TOLERANCE: f64 = 1e-4;

#[test]
fn every_primitive_matches_finite_differences() {
    let mut failures = Vec::new();
    for name in PRIMITIVES {
        let err = primitive_grad_error(name);
        if !(err < TOLERANCE) {
            failures.push(format!("{name}: {err:e}"));
        }
    }
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn masked_autoencoder_loss_matches_finite_differences() {
    let err = mgae_grad_error();
    assert!(err < TOLERANCE, "{err:e}");
}

#[test]
fn pair_loss_matches_finite_differences() {
    let err = ranker_grad_error();
    assert!(err < TOLERANCE, "{err:e}");
}
