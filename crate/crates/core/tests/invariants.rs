//! Property tests for engine-wide invariants.

use proptest::prelude::*;
use ulab_core::kernels;
use ulab_core::{Param, RngStream, Tape};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Softmax rows (causal and dense) sum to one within 1e-6.
    #[test]
    fn softmax_rows_sum_to_one(vals in prop::collection::vec(-30.0f64..30.0, 36)) {
        let tape = Tape::new();
        let x = tape.constant(vals.clone(), &[6, 6]);
        let y = x.causal_softmax().unwrap();
        let v = y.values();
        for r in 0..6 {
            let s: f64 = v[r * 6..(r + 1) * 6].iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
        let dense = kernels::softmax(&vals[0..6]);
        prop_assert!((dense.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    /// Documented ops on finite inputs inside their domains never produce
    /// NaN or infinity, through forward and backward.
    #[test]
    fn no_non_finite_values(
        a in prop::collection::vec(-50.0f64..50.0, 12),
        b in prop::collection::vec(-50.0f64..50.0, 12),
        target in 0usize..4,
    ) {
        let pa = Param::new("a", &[3, 4], a);
        let pb = Param::new("b", &[3, 4], b);
        let tape = Tape::new();
        let ta = tape.leaf(&pa);
        let tb = tape.leaf(&pb);
        let gain = tape.constant(vec![1.0; 4], &[4]);
        let bias = tape.constant(vec![0.0; 4], &[4]);
        let h = ta.add(&tb).unwrap().gelu().layer_norm(&gain, &bias, 1e-5).unwrap();
        let sm = h.causal_softmax().unwrap();
        let ce = sm
            .scale(3.0)
            .cross_entropy_rows_mean(&[target as u32, 0, 1])
            .unwrap();
        let extra = ta.mul(&tb).unwrap().softplus().mean_all();
        let loss = ce.add(&extra).unwrap();
        prop_assert!(loss.item().unwrap().is_finite());
        loss.backward().unwrap();
        for g in [pa.grad().unwrap(), pb.grad().unwrap()] {
            prop_assert!(g.iter().all(|v| v.is_finite()));
        }
    }

    /// Cosine similarity stays in [-1, 1] for non-degenerate inputs.
    #[test]
    fn cosine_bounded(
        a in prop::collection::vec(-10.0f64..10.0, 8),
        b in prop::collection::vec(-10.0f64..10.0, 8),
    ) {
        prop_assume!(a.iter().any(|v| v.abs() > 1e-6));
        prop_assume!(b.iter().any(|v| v.abs() > 1e-6));
        let tape = Tape::new();
        let ta = tape.constant(a, &[8]);
        let tb = tape.constant(b, &[8]);
        let c = ta.cosine_sim(&tb).unwrap().item().unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c));
    }

    /// Identical (seed, name) pairs give bit-identical initializations.
    #[test]
    fn seeded_init_is_bit_identical(seed in any::<u64>()) {
        let mut s1 = RngStream::new(seed, "w");
        let mut s2 = RngStream::new(seed, "w");
        let p1 = Param::init_fan_in("w", &[16, 8], 8, &mut s1);
        let p2 = Param::init_fan_in("w", &[16, 8], 8, &mut s2);
        prop_assert!(p1
            .value()
            .iter()
            .zip(p2.value())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
