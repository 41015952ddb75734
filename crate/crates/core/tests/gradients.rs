mod common;

use common::{model_case, op_cases, rng};
use t3former_core::ModelMode;

const INSTANCES: u64 = 20;

#[test]
fn every_op_matches_central_differences() {
    for (name, case) in op_cases() {
        let mut r = rng(11);
        for i in 0..INSTANCES {
            let err = case(&mut r).unwrap();
            assert!(err < 1e-4, "{name} instance {i}: relative error {err:e}");
        }
    }
}

#[test]
fn model_matches_central_differences() {
    let mut r = rng(5);
    for mode in ModelMode::ALL {
        for i in 0..INSTANCES {
            let err = model_case(&mut r, mode, 0.0).unwrap();
            assert!(err < 1e-4, "{mode} instance {i}: relative error {err:e}");
        }
    }
    for i in 0..INSTANCES {
        let err = model_case(&mut r, ModelMode::Full, 0.3).unwrap();
        assert!(err < 1e-4, "dropout instance {i}: relative error {err:e}");
    }
}
