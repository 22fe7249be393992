//! Runs the per-op gradient suite across seeds and pins the tolerance.

use scr_core::nn::suite::gradient_suite;

#[test]
fn every_op_passes_at_1e3_across_seeds() {
    for seed in 0..3u64 {
        let entries = gradient_suite(seed).unwrap();
        assert!(entries.len() >= 30, "suite shrank to {} entries", entries.len());
        for (op, err) in &entries {
            assert!(
                *err < 1e-3,
                "seed {seed}: {op} relative error {err:.3e} exceeds 1e-3"
            );
        }
        let (worst_op, worst) = entries
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("suite is non-empty");
        println!("seed {seed}: worst op {worst_op} at {worst:.3e}");
    }
}
