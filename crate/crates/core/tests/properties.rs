use nalgebra::DVector;
use proptest::prelude::*;

use rflstd::features::{phi_closed_form, Activation, FeatureMap};
use rflstd::lstd::{build_operators, check_spectrum_assumption, lstd_fit_with, pathwise_adjustment, SolveForm};
use rflstd::mrp::{sample_path, stationary_distribution, synthetic_ergodic_mrp};
use rflstd::theory::{delta_fixed_point, DeltaOptions, Spectrum};

fn activation() -> impl Strategy<Value = Activation> {
    prop::sample::select(Activation::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn operators_are_one_hot(p in 2usize..30, n in 1usize..60, seed in 0u64..1000, adjust in any::<bool>()) {
        let mrp = synthetic_ergodic_mrp(p, 3, 0.9, seed).unwrap();
        let mut ds = sample_path(&mrp, n, seed).unwrap();
        if adjust {
            ds = pathwise_adjustment(&ds).unwrap();
        }
        let ops = build_operators(&ds, p, 0.9).unwrap();
        let w = 1.0 / (n as f64).sqrt();
        for j in 0..n {
            let col = ops.u_hat().column(j);
            prop_assert_eq!(col.iter().filter(|&&v| v == w).count(), 1);
            prop_assert_eq!(col.iter().filter(|&&v| v != 0.0).count(), 1);
            let next = ops.v_hat().column(j).iter().filter(|&&v| v != 0.0).count();
            let expected = if adjust && j == n - 1 { 0 } else { 1 };
            prop_assert_eq!(next, expected);
        }
        prop_assert!((ops.u_hat().norm_squared() - 1.0).abs() < 1e-12);
        let counts: usize = ops.counts().iter().sum();
        prop_assert_eq!(counts, n);
        for (k, w) in ops.visited_ids().windows(2).enumerate() {
            prop_assert!(w[0] < w[1], "visited ids unsorted at {}", k);
        }
    }

    #[test]
    fn pathwise_adjustment_restores_count_condition(p in 2usize..15, n in 1usize..80, seed in 0u64..1000) {
        let mrp = synthetic_ergodic_mrp(p, 2, 0.99, seed).unwrap();
        let ds = pathwise_adjustment(&sample_path(&mrp, n, seed).unwrap()).unwrap();
        let ops = build_operators(&ds, p, 0.99).unwrap();
        let rep = check_spectrum_assumption(&ops).unwrap();
        prop_assert!(rep.count_condition);
        prop_assert!(rep.pd);
    }

    #[test]
    fn push_through(p in 5usize..30, n in 2usize..40, big_n in 1usize..40, seed in 0u64..1000, act in activation()) {
        let mrp = synthetic_ergodic_mrp(p, 4, 0.9, seed).unwrap();
        let ds = pathwise_adjustment(&sample_path(&mrp, n, seed).unwrap()).unwrap();
        let ops = build_operators(&ds, p, 0.9).unwrap();
        let fm = FeatureMap::sample(big_n, 4, act, seed).unwrap();
        let s_hat = ops.visited_states(mrp.states());
        let a = lstd_fit_with(&ops, &fm, &s_hat, ds.rewards(), 1e-2, SolveForm::Feature).unwrap();
        let b = lstd_fit_with(&ops, &fm, &s_hat, ds.rewards(), 1e-2, SolveForm::Sample).unwrap();
        let scale = a.theta().norm().max(1e-300);
        prop_assert!((a.theta() - b.theta()).norm() <= 1e-8 * scale);
    }

    #[test]
    fn stationary_is_a_distribution(p in 2usize..40, seed in 0u64..1000) {
        let mrp = synthetic_ergodic_mrp(p, 2, 0.5, seed).unwrap();
        let pi = stationary_distribution(&mrp).unwrap();
        prop_assert!(pi.pi().iter().all(|&v| v > 0.0));
        prop_assert!((pi.pi().sum() - 1.0).abs() < 1e-12);
        prop_assert!(pi.residual() <= 1e-10);
    }

    #[test]
    fn kernel_is_symmetric_and_bounded(
        a in prop::collection::vec(-3.0f64..3.0, 3),
        b in prop::collection::vec(-3.0f64..3.0, 3),
        act in activation(),
    ) {
        let a = DVector::from_vec(a);
        let b = DVector::from_vec(b);
        prop_assume!(a.norm() > 1e-3 && b.norm() > 1e-3);
        let ab = phi_closed_form(&a, &b, act).unwrap();
        let ba = phi_closed_form(&b, &a, act).unwrap();
        let aa = phi_closed_form(&a, &a, act).unwrap();
        let bb = phi_closed_form(&b, &b, act).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-14 * aa.max(bb).max(1.0));
        prop_assert!(ab * ab <= aa * bb * (1.0 + 1e-10));
    }

    #[test]
    fn delta_monotone(
        eigs in prop::collection::vec(1e-3f64..10.0, 1..20),
        big_n in 1usize..100,
        lam in 1e-6f64..10.0,
    ) {
        let m = eigs.len();
        let s = Spectrum::from_eigenvalues(eigs.into_iter().map(|v| v.into()).collect(), m).unwrap();
        let opts = DeltaOptions::default();
        let d = delta_fixed_point(&s, big_n, lam, &opts).unwrap().delta;
        let more_n = delta_fixed_point(&s, big_n + 1, lam, &opts).unwrap().delta;
        let more_lam = delta_fixed_point(&s, big_n, lam * 2.0, &opts).unwrap().delta;
        prop_assert!(d > 0.0);
        prop_assert!(more_n < d);
        prop_assert!(more_lam < d);
    }
}
