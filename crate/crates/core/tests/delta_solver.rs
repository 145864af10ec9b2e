use num_complex::Complex64;

use rflstd::features::Activation;
use rflstd::lstd::{build_operators, pathwise_adjustment};
use rflstd::mrp::{sample_path, synthetic_ergodic_mrp, GroundTruth};
use rflstd::theory::{delta_fixed_point, delta_map, DeltaMethod, DeltaOptions, Spectrum, TheoryContext};

fn random_spectrum(seed: u64) -> Spectrum {
    let mrp = synthetic_ergodic_mrp(40, 8, 0.9, seed).unwrap();
    let truth = GroundTruth::compute(&mrp).unwrap();
    let ds = pathwise_adjustment(&sample_path(&mrp, 60, seed + 1).unwrap()).unwrap();
    let ops = build_operators(&ds, 40, 0.9).unwrap();
    let ctx = TheoryContext::new(&mrp, &truth, &ops, ds.rewards(), Activation::Relu).unwrap();
    ctx.spectrum().clone()
}

#[test]
fn fixed_point_residual_and_positivity() {
    for seed in 0..5 {
        let s = random_spectrum(seed);
        for (big_n, lam) in [(5, 1e-6), (s.m(), 1e-9), (4 * s.m(), 1e-3)] {
            let sol = delta_fixed_point(&s, big_n, lam, &DeltaOptions::default()).unwrap();
            assert!(sol.delta > 0.0);
            let f = delta_map(&s, big_n, lam, sol.delta);
            assert!((f - sol.delta).abs() <= 1e-9 * sol.delta, "seed {seed} N {big_n}");
        }
    }
}

#[test]
fn two_starts_agree() {
    let s = random_spectrum(3);
    let opts = DeltaOptions::default();
    for (big_n, lam) in [(10, 1e-3), (s.m(), 1e-6), (3 * s.m(), 1e-2)] {
        let a = delta_fixed_point(&s, big_n, lam, &opts).unwrap().delta;
        let b = delta_fixed_point(&s, big_n, lam, &DeltaOptions { initial: 1e6, ..opts })
            .unwrap()
            .delta;
        assert!((a - b).abs() <= 10.0 * opts.rtol * a, "{a} vs {b}");
    }
}

#[test]
fn picard_and_newton_agree_where_picard_contracts() {
    let s = random_spectrum(4);
    let newton = DeltaOptions::default();
    let picard = DeltaOptions {
        method: DeltaMethod::Picard,
        ..newton
    };
    for (big_n, lam) in [(2 * s.m(), 1e-1), (s.m() / 2, 1.0)] {
        let a = delta_fixed_point(&s, big_n, lam, &newton).unwrap().delta;
        let b = delta_fixed_point(&s, big_n, lam, &picard).unwrap().delta;
        assert!((a - b).abs() <= 1e-8 * a);
    }
}

#[test]
fn strictly_decreasing_in_features_and_regularization() {
    let s = random_spectrum(5);
    let opts = DeltaOptions::default();
    let ns = [3, 10, s.m(), 2 * s.m(), 8 * s.m()];
    let lams = [1e-8, 1e-5, 1e-3, 1e-1, 10.0];
    let d: Vec<Vec<f64>> = ns
        .iter()
        .map(|&n| {
            lams.iter()
                .map(|&l| delta_fixed_point(&s, n, l, &opts).unwrap().delta)
                .collect()
        })
        .collect();
    for i in 0..5 {
        for j in 0..5 {
            if i < 4 {
                assert!(d[i + 1][j] < d[i][j]);
            }
            if j < 4 {
                assert!(d[i][j + 1] < d[i][j]);
            }
        }
    }
}

#[test]
fn vanishes_as_regularization_grows() {
    let s = random_spectrum(6);
    let d = delta_fixed_point(&s, s.m(), 1e12, &DeltaOptions::default())
        .unwrap()
        .delta;
    assert!(d < 1e-9);
    assert!(d <= s.trace() / s.m() as f64 / 1e12 * (1.0 + 1e-9));
}

#[test]
fn scalar_quadratic_root() {
    for &(phi, big_n, lam) in &[(0.5, 1usize, 0.2), (1.3, 7, 1e-4), (0.01, 100, 3.0), (4.0, 2, 1e-8)] {
        let s = Spectrum::from_eigenvalues(vec![Complex64::new(phi, 0.0)], 1).unwrap();
        let b = big_n as f64 * phi + lam - phi;
        let root = 2.0 * phi / (b + (b * b + 4.0 * lam * phi).sqrt());
        let d = delta_fixed_point(&s, big_n, lam, &DeltaOptions::default())
            .unwrap()
            .delta;
        assert!((d - root).abs() <= 1e-10 * root, "{d} vs {root}");
    }
}
