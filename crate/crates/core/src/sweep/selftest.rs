//! Quick invariant checks runnable from the command line.

use nalgebra::{DMatrix, DVector};

use crate::features::{phi_closed_form, phi_monte_carlo, Activation, FeatureMap};
use crate::linalg::rel_diff;
use crate::lstd::{
    build_operators, check_spectrum_assumption, empirical_msbe, lstd_fit_with, pathwise_adjustment, SolveForm,
};
use crate::mrp::{sample_path, stationary_distribution, synthetic_ergodic_mrp, value_function, GroundTruth};
use crate::rng;
use crate::theory::{dense, DeltaMethod, DeltaOptions, TheoryContext};

pub struct CheckResult {
    pub name: &'static str,
    pub outcome: std::result::Result<(), String>,
}

type Check = fn() -> std::result::Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn stationary_and_bellman() -> std::result::Result<(), String> {
    for seed in 0..10 {
        let mrp = synthetic_ergodic_mrp(15, 4, 0.9, seed).map_err(|e| e.to_string())?;
        let pi = stationary_distribution(&mrp).map_err(|e| e.to_string())?;
        ensure(pi.residual() <= 1e-10, || {
            format!("stationary residual {:e}", pi.residual())
        })?;
        let v = value_function(&mrp).map_err(|e| e.to_string())?;
        let res = (&v - mrp.expected_rewards() - mrp.transition() * &v * mrp.discount()).amax();
        ensure(res <= 1e-10, || format!("Bellman residual {res:e}"))?;
    }
    Ok(())
}

fn push_through_and_msbe_forms() -> std::result::Result<(), String> {
    for seed in 0..5 {
        let mrp = synthetic_ergodic_mrp(20, 5, 0.9, seed).map_err(|e| e.to_string())?;
        let ds = pathwise_adjustment(&sample_path(&mrp, 30, seed + 100).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let ops = build_operators(&ds, 20, 0.9).map_err(|e| e.to_string())?;
        let fm = FeatureMap::sample(12, 5, Activation::Relu, seed).map_err(|e| e.to_string())?;
        let s_hat = ops.visited_states(mrp.states());
        let a = lstd_fit_with(&ops, &fm, &s_hat, ds.rewards(), 1e-2, SolveForm::Feature).map_err(|e| e.to_string())?;
        let b = lstd_fit_with(&ops, &fm, &s_hat, ds.rewards(), 1e-2, SolveForm::Sample).map_err(|e| e.to_string())?;
        let rel = (a.theta() - b.theta()).norm() / a.theta().norm();
        ensure(rel <= 1e-8, || format!("push-through mismatch {rel:e}"))?;
        empirical_msbe(&b, &ops, &fm, &ds).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn kernel_monte_carlo() -> std::result::Result<(), String> {
    use rand_distr::{Distribution, StandardNormal};
    let mut r = rng::seeded(7);
    for (k, act) in Activation::ALL.into_iter().enumerate() {
        let a = DVector::from_fn(4, |_, _| StandardNormal.sample(&mut r));
        let b = DVector::from_fn(4, |_, _| StandardNormal.sample(&mut r));
        let exact = phi_closed_form(&a, &b, act).map_err(|e| e.to_string())?;
        let (mean, se) = phi_monte_carlo(&a, &b, act, 20_000, k as u64).map_err(|e| e.to_string())?;
        ensure((mean - exact).abs() <= 5.0 * se, || {
            format!("{act}: {mean} vs {exact} (se {se})")
        })?;
    }
    Ok(())
}

fn pathwise_count_condition() -> std::result::Result<(), String> {
    let mrp = synthetic_ergodic_mrp(10, 3, 0.99, 3).map_err(|e| e.to_string())?;
    for seed in 0..20 {
        let ds = sample_path(&mrp, 25, seed).map_err(|e| e.to_string())?;
        let ops = build_operators(&pathwise_adjustment(&ds).map_err(|e| e.to_string())?, 10, 0.99)
            .map_err(|e| e.to_string())?;
        let rep = check_spectrum_assumption(&ops).map_err(|e| e.to_string())?;
        ensure(rep.count_condition, || format!("count condition fails for seed {seed}"))?;
    }
    Ok(())
}

fn delta_and_theory() -> std::result::Result<(), String> {
    let mrp = synthetic_ergodic_mrp(12, 6, 0.9, 1).map_err(|e| e.to_string())?;
    let truth = GroundTruth::compute(&mrp).map_err(|e| e.to_string())?;
    let ds = pathwise_adjustment(&sample_path(&mrp, 40, 2).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let ops = build_operators(&ds, 12, 0.9).map_err(|e| e.to_string())?;
    let ctx = TheoryContext::new(&mrp, &truth, &ops, ds.rewards(), Activation::Relu).map_err(|e| e.to_string())?;
    let newton = DeltaOptions::default();
    let picard = DeltaOptions {
        method: DeltaMethod::Picard,
        initial: 1e6,
        ..Default::default()
    };
    let de = ctx.equivalent(8, 1e-2, &newton).map_err(|e| e.to_string())?;
    let dp = ctx.equivalent(8, 1e-2, &picard).map_err(|e| e.to_string())?;
    ensure(rel_diff(de.delta(), dp.delta(), 0.0) <= 1e-8, || {
        format!("δ depends on the start: {} vs {}", de.delta(), dp.delta())
    })?;
    let res = de.q_bar_residual().map_err(|e| e.to_string())?;
    ensure(res <= 1e-8, || format!("Q̄ residual {res:e}"))?;
    let d = dense::evaluate(&ctx, 8, 1e-2, de.delta()).map_err(|e| e.to_string())?;
    let pairs = [
        (de.empirical_msbe().value, d.empirical_msbe.value),
        (de.true_msbe().value, d.true_msbe.value),
        (de.msve().value, d.msve.value),
    ];
    for (a, b) in pairs {
        ensure(rel_diff(a, b, 1e-300) <= 1e-8, || {
            format!("compressed {a:e} vs dense {b:e}")
        })?;
    }
    Ok(())
}

fn ridge_at_zero_discount() -> std::result::Result<(), String> {
    let mrp = synthetic_ergodic_mrp(15, 4, 0.0, 5).map_err(|e| e.to_string())?;
    let ds = sample_path(&mrp, 30, 6).map_err(|e| e.to_string())?;
    let ops = build_operators(&ds, 15, 0.0).map_err(|e| e.to_string())?;
    let fm = FeatureMap::sample(10, 4, Activation::Relu, 2).map_err(|e| e.to_string())?;
    let lam = 1e-3;
    let sol = lstd_fit_with(
        &ops,
        &fm,
        &ops.visited_states(mrp.states()),
        ds.rewards(),
        lam,
        SolveForm::Feature,
    )
    .map_err(|e| e.to_string())?;
    let sx = fm.apply(ds.states()).map_err(|e| e.to_string())?;
    let scale = lam * (ops.m() * ops.n()) as f64;
    let lhs = &sx * sx.transpose() + DMatrix::identity(10, 10) * scale;
    let ridge = lhs.lu().solve(&(&sx * ds.rewards())).ok_or("ridge solve failed")?;
    let rel = (sol.theta() - &ridge).norm() / ridge.norm();
    ensure(rel <= 1e-8, || format!("ridge mismatch {rel:e}"))
}

const CHECKS: [(&str, Check); 6] = [
    ("stationary distribution and Bellman residual", stationary_and_bellman),
    ("push-through and empirical MSBE forms", push_through_and_msbe_forms),
    ("kernel closed forms vs Monte Carlo", kernel_monte_carlo),
    ("pathwise adjustment count condition", pathwise_count_condition),
    ("delta uniqueness and compressed vs dense theory", delta_and_theory),
    ("ridge equivalence at zero discount", ridge_at_zero_discount),
];

/// Runs every check and returns the outcomes in order.
pub fn run_selftest() -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|&(name, check)| CheckResult { name, outcome: check() })
        .collect()
}
