mod common;

use common::cases::{agim_small, branch_small, rollout_small};

#[test]
fn agim_matches_loop_reference() {
    for seed in 0..3 {
        let e = agim_small(seed);
        assert!(e < 1e-10, "seed {seed}: relative error {e:e}");
    }
}

#[test]
fn branch_matches_loop_reference() {
    for seed in 0..3 {
        let e = branch_small(seed);
        assert!(e < 1e-10, "seed {seed}: relative error {e:e}");
    }
}

#[test]
fn rollout_matches_loop_reference() {
    for seed in 0..3 {
        let e = rollout_small(seed);
        assert!(e < 1e-10, "seed {seed}: relative error {e:e}");
    }
}
