//! Property tests for invariants that hold over whole input classes.

use longtail_core::data::ImbalanceProfile;
use longtail_core::eval::top_k_error;
use longtail_core::tensor::Tensor;
use longtail_core::weighting::{effective_number_weights, l2rw_postprocess};
use proptest::prelude::*;

proptest! {
    /// Postprocessed weights are a point of the simplex or exactly all-zero.
    #[test]
    fn l2rw_output_is_simplex_or_zero(raw in prop::collection::vec(-10.0f64..10.0, 1..40)) {
        let out = l2rw_postprocess(&raw);
        prop_assert_eq!(out.len(), raw.len());
        prop_assert!(out.iter().all(|&w| w >= 0.0));
        let sum: f64 = out.iter().sum();
        prop_assert!(sum == 0.0 || (sum - 1.0).abs() < 1e-9, "sum {}", sum);
    }

    /// Effective-number weights are positive, non-increasing when counts are
    /// non-decreasing, and normalize to sum K.
    #[test]
    fn effective_weights_monotone_and_normalized(
        mut counts in prop::collection::vec(1usize..5000, 2..30),
        beta_step in 0usize..6,
    ) {
        counts.sort_unstable();
        let beta = [0.0, 0.5, 0.9, 0.99, 0.999, 0.9999][beta_step];
        let w = effective_number_weights(&counts, beta, true).unwrap();
        prop_assert!(w.weights().iter().all(|&v| v > 0.0));
        for pair in w.weights().windows(2) {
            prop_assert!(pair[0] >= pair[1] - 1e-12, "{} then {}", pair[0], pair[1]);
        }
        let sum: f64 = w.weights().iter().sum();
        prop_assert!((sum - counts.len() as f64).abs() < 1e-9);
    }

    /// Top-k error never increases with k, and k = K is always zero.
    #[test]
    fn top_k_error_monotone(
        rows in 1usize..20,
        classes in 2usize..8,
        seed in 0u64..1000,
    ) {
        let mut rng = longtail_core::seeding::substream(seed, "topk-prop");
        let data: Vec<f64> = (0..rows * classes)
            .map(|_| longtail_core::model::standard_normal(&mut rng))
            .collect();
        let logits = Tensor::from_vec(vec![rows, classes], data).unwrap();
        use rand::RngCore;
        let labels: Vec<usize> = (0..rows).map(|_| (rng.next_u64() % classes as u64) as usize).collect();
        let mut prev = 1.0f64;
        for k in 1..=classes {
            let e = top_k_error(&logits, &labels, k).unwrap();
            prop_assert!(e <= prev + 1e-15);
            prev = e;
        }
        prop_assert_eq!(top_k_error(&logits, &labels, classes).unwrap(), 0.0);
    }

    /// Geometric retention: head keeps everything, counts never increase,
    /// every class keeps at least one example.
    #[test]
    fn retention_profile_monotone(
        classes in 2usize..40,
        base in 1usize..2000,
        imbalance in 1.0f64..500.0,
    ) {
        let p = ImbalanceProfile::geometric(classes, base, imbalance).unwrap();
        prop_assert_eq!(p.retained[0], base);
        prop_assert!(p.retained.iter().all(|&r| r >= 1));
        for pair in p.retained.windows(2) {
            prop_assert!(pair[0] >= pair[1]);
        }
    }
}
