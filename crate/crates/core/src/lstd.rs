//! Empirical operators, regularized LSTD and its error metrics.
//!
//! All regularization parameters are the scaled `λ = λ_{m,n} / (mn)`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{param_err, Error, Result};
use crate::features::FeatureMap;
use crate::linalg::{self, guarded_solve, CONDITION_LIMIT};
use crate::mrp::{GroundTruth, MarkovRewardProcess, TransitionDataset};

const MSBE_CONSISTENCY_RTOL: f64 = 1e-6;

/// Sample bookkeeping expressed as matrices over the visited states.
///
/// `√n Û` and `√n V̂` have one-hot columns selecting the state and next state
/// of each transition among the `m` visited states.
#[derive(Clone, Debug)]
pub struct EmpiricalOperators {
    u_hat: DMatrix<f64>,
    v_hat: DMatrix<f64>,
    a_hat: DMatrix<f64>,
    visited_ids: Vec<usize>,
    counts: Vec<usize>,
    next_counts: Vec<usize>,
    num_states: usize,
    discount: f64,
}

/// Builds `Û`, `V̂` and `Â = Û(Û − γV̂)ᵀ` from a dataset.
///
/// The visited set is every distinct state appearing in the transitions, as a
/// state or as a next state, sorted by global index.
pub fn build_operators(ds: &TransitionDataset, num_states: usize, discount: f64) -> Result<EmpiricalOperators> {
    let n = ds.len();
    if n == 0 {
        return param_err("dataset is empty");
    }
    if !(0.0..1.0).contains(&discount) {
        return param_err(format!("discount {discount} must lie in [0, 1)"));
    }
    let mut local: BTreeMap<usize, usize> = BTreeMap::new();
    for i in 0..n {
        local.insert(ds.state_ids()[i], 0);
        if let Some(s) = ds.next_state_id(i) {
            local.insert(s, 0);
        }
    }
    if let Some((&s, _)) = local.iter().next_back().filter(|(&s, _)| s >= num_states) {
        return param_err(format!("state id {s} out of range for {num_states} states"));
    }
    for (k, v) in local.values_mut().enumerate() {
        *v = k;
    }
    let visited_ids: Vec<usize> = local.keys().copied().collect();
    let m = visited_ids.len();
    let w = 1.0 / (n as f64).sqrt();
    let mut u_hat = DMatrix::zeros(m, n);
    let mut v_hat = DMatrix::zeros(m, n);
    let mut counts = vec![0; m];
    let mut next_counts = vec![0; m];
    for i in 0..n {
        let a = local[&ds.state_ids()[i]];
        u_hat[(a, i)] = w;
        counts[a] += 1;
        if let Some(s) = ds.next_state_id(i) {
            let b = local[&s];
            v_hat[(b, i)] = w;
            next_counts[b] += 1;
        }
    }
    let a_hat = &u_hat * (&u_hat - &v_hat * discount).transpose();
    Ok(EmpiricalOperators {
        u_hat,
        v_hat,
        a_hat,
        visited_ids,
        counts,
        next_counts,
        num_states,
        discount,
    })
}

impl EmpiricalOperators {
    pub fn n(&self) -> usize {
        self.u_hat.ncols()
    }

    pub fn m(&self) -> usize {
        self.u_hat.nrows()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn u_hat(&self) -> &DMatrix<f64> {
        &self.u_hat
    }

    pub fn v_hat(&self) -> &DMatrix<f64> {
        &self.v_hat
    }

    /// `Û − γV̂`.
    pub fn td_operator(&self) -> DMatrix<f64> {
        &self.u_hat - &self.v_hat * self.discount
    }

    pub fn a_hat(&self) -> &DMatrix<f64> {
        &self.a_hat
    }

    pub fn visited_ids(&self) -> &[usize] {
        &self.visited_ids
    }

    /// Occurrences of each visited state among the sampled states.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Occurrences of each visited state among the sampled next states.
    pub fn next_counts(&self) -> &[usize] {
        &self.next_counts
    }

    pub fn all_visited(&self) -> bool {
        self.m() == self.num_states
    }

    /// `Û` zero-padded to all `p` states.
    pub fn u_full(&self) -> DMatrix<f64> {
        self.pad(&self.u_hat)
    }

    /// `V̂` zero-padded to all `p` states.
    pub fn v_full(&self) -> DMatrix<f64> {
        self.pad(&self.v_hat)
    }

    fn pad(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut full = DMatrix::zeros(self.num_states, x.ncols());
        for (k, &s) in self.visited_ids.iter().enumerate() {
            full.set_row(s, &x.row(k));
        }
        full
    }

    /// Columns of `states` (a `d × p` matrix) at the visited ids: `Ŝ`.
    pub fn visited_states(&self, states: &DMatrix<f64>) -> DMatrix<f64> {
        states.select_columns(&self.visited_ids)
    }
}

/// Spectrum of the symmetric part of `Â` and the sufficient count condition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectrumReport {
    pub xi_min: f64,
    pub xi_max: f64,
    pub pd: bool,
    /// `c(s) ≥ γ c′(s)` for every visited state.
    pub count_condition: bool,
}

pub fn check_spectrum_assumption(ops: &EmpiricalOperators) -> Result<SpectrumReport> {
    let h = linalg::symmetric_part(ops.a_hat());
    let (xi_min, xi_max) = linalg::symmetric_extremes(&h);
    if !xi_min.is_finite() || !xi_max.is_finite() {
        return Err(Error::Numerical("eigenvalues of H(Â) are not finite".into()));
    }
    let gamma = ops.discount();
    let count_condition = ops
        .counts()
        .iter()
        .zip(ops.next_counts())
        .all(|(&c, &cn)| c as f64 >= gamma * cn as f64);
    Ok(SpectrumReport {
        xi_min,
        xi_max,
        pd: xi_min > 0.0,
        count_condition,
    })
}

/// Pathwise LSTD: removes the last next state from the learner's view.
pub fn pathwise_adjustment(ds: &TransitionDataset) -> Result<TransitionDataset> {
    if ds.is_empty() {
        return param_err("cannot adjust an empty dataset");
    }
    Ok(ds.with_tail_dropped())
}

/// Which linear system a fit solves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SolveForm {
    /// `N × N`: `[(1/m) Σ_Ŝ Â Σ_Ŝᵀ + λI] θ = Σ_Ŝ Û r / (m√n)`.
    Feature,
    /// `n × n`: the resolvent system `Q_m(λ)⁻¹ x = r`, then `θ = Σ_Ŝ Û x / (m√n)`.
    Sample,
    /// Whichever of the two is smaller.
    #[default]
    Auto,
}

/// Fitted LSTD parameters.
#[derive(Clone, Debug)]
pub struct LstdSolution {
    theta: DVector<f64>,
    lambda: f64,
    lambda_mn: f64,
    resolvent_r: Option<DVector<f64>>,
    condition: Option<f64>,
}

impl LstdSolution {
    /// Wraps externally chosen parameters (no resolvent cache).
    pub fn from_theta(theta: DVector<f64>, lambda: f64) -> Self {
        Self {
            theta,
            lambda,
            lambda_mn: f64::NAN,
            resolvent_r: None,
            condition: None,
        }
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    /// Scaled regularization `λ`.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Effective regularization `λ_{m,n} = λ m n`.
    pub fn lambda_mn(&self) -> f64 {
        self.lambda_mn
    }

    /// `Q_m(λ) r`.
    pub fn resolvent_r(&self) -> Option<&DVector<f64>> {
        self.resolvent_r.as_ref()
    }

    /// Condition estimate of the solved system.
    pub fn condition(&self) -> Option<f64> {
        self.condition
    }
}

pub fn lstd_fit(
    ops: &EmpiricalOperators,
    fm: &FeatureMap,
    visited_states: &DMatrix<f64>,
    rewards: &DVector<f64>,
    lambda: f64,
) -> Result<LstdSolution> {
    lstd_fit_with(ops, fm, visited_states, rewards, lambda, SolveForm::Auto)
}

pub fn lstd_fit_with(
    ops: &EmpiricalOperators,
    fm: &FeatureMap,
    visited_states: &DMatrix<f64>,
    rewards: &DVector<f64>,
    lambda: f64,
    form: SolveForm,
) -> Result<LstdSolution> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return param_err(format!("λ must be positive and finite, got {lambda}"));
    }
    let (m, n, big_n) = (ops.m(), ops.n(), fm.num_features());
    if visited_states.ncols() != m {
        return param_err(format!(
            "visited state matrix has {} columns, expected m = {m}",
            visited_states.ncols()
        ));
    }
    if rewards.len() != n {
        return param_err(format!("reward vector has length {}, expected n = {n}", rewards.len()));
    }
    let sigma = fm.apply(visited_states)?;
    let (mf, nf) = (m as f64, n as f64);
    let ur = ops.u_hat() * rewards;
    let td = ops.td_operator();
    let form = match form {
        SolveForm::Auto if big_n <= n => SolveForm::Feature,
        SolveForm::Auto => SolveForm::Sample,
        f => f,
    };
    let (theta, resolvent_r, condition) = match form {
        SolveForm::Feature => {
            let mut lhs = &sigma * ops.a_hat() * sigma.transpose() / mf;
            for i in 0..big_n {
                lhs[(i, i)] += lambda;
            }
            let rhs = &sigma * &ur / (mf * nf.sqrt());
            let (theta, cond) = guarded_solve(
                lhs,
                &DMatrix::from_column_slice(big_n, 1, rhs.as_slice()),
                CONDITION_LIMIT,
            )?;
            let theta = theta.column(0).into_owned();
            // Q_m r = (r − √n (Û − γV̂)ᵀ Σ_Ŝᵀ θ) / λ
            let fitted = td.transpose() * (sigma.transpose() * &theta) * nf.sqrt();
            let qr = (rewards - fitted) / lambda;
            (theta, qr, cond)
        }
        SolveForm::Sample => {
            let k = sigma.transpose() * &sigma / mf;
            let mut lhs = td.transpose() * (&k * ops.u_hat());
            for i in 0..n {
                lhs[(i, i)] += lambda;
            }
            let (x, cond) = guarded_solve(
                lhs,
                &DMatrix::from_column_slice(n, 1, rewards.as_slice()),
                CONDITION_LIMIT,
            )?;
            let qr = x.column(0).into_owned();
            let theta = &sigma * (ops.u_hat() * &qr) / (mf * nf.sqrt());
            (theta, qr, cond)
        }
        SolveForm::Auto => unreachable!(),
    };
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("LSTD parameters are not finite".into()));
    }
    Ok(LstdSolution {
        theta,
        lambda,
        lambda_mn: lambda * mf * nf,
        resolvent_r: Some(resolvent_r),
        condition: Some(condition),
    })
}

/// The `n × n` resolvent `Q_m(λ) = [(1/m)(Û − γV̂)ᵀ Σ_Ŝᵀ Σ_Ŝ Û + λI]⁻¹`, materialized.
pub fn resolvent_matrix(
    ops: &EmpiricalOperators,
    fm: &FeatureMap,
    visited_states: &DMatrix<f64>,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return param_err(format!("λ must be positive and finite, got {lambda}"));
    }
    if visited_states.ncols() != ops.m() {
        return param_err("visited state matrix does not match m");
    }
    let n = ops.n();
    let sigma = fm.apply(visited_states)?;
    let k = sigma.transpose() * &sigma / ops.m() as f64;
    let mut sys = ops.td_operator().transpose() * (&k * ops.u_hat());
    for i in 0..n {
        sys[(i, i)] += lambda;
    }
    Ok(guarded_solve(sys, &DMatrix::identity(n, n), CONDITION_LIMIT)?.0)
}

/// `(1/n) ‖r + γ Σ_{X′}ᵀ θ − Σ_Xᵀ θ‖²`.
///
/// When the solution carries `Q_m(λ) r`, the resolvent form `(λ²/n) ‖Q_m(λ) r‖²`
/// is evaluated too and the two must agree.
pub fn empirical_msbe(
    sol: &LstdSolution,
    ops: &EmpiricalOperators,
    fm: &FeatureMap,
    ds: &TransitionDataset,
) -> Result<f64> {
    let n = ds.len() as f64;
    let residual = empirical_residual(sol.theta(), ops.discount(), fm, ds)?;
    let direct = residual.norm_squared() / n;
    if let Some(qr) = sol.resolvent_r() {
        let lam = sol.lambda();
        let via_resolvent = lam * lam * qr.norm_squared() / n;
        let floor = 1e-12 * ds.rewards().norm_squared() / n;
        let rel = linalg::rel_diff(direct, via_resolvent, floor.max(f64::MIN_POSITIVE));
        if !(rel <= MSBE_CONSISTENCY_RTOL) {
            return Err(Error::Consistency(format!(
                "empirical MSBE forms disagree: direct {direct:.6e}, resolvent {via_resolvent:.6e} (rel {rel:.2e})"
            )));
        }
    }
    Ok(direct)
}

/// `r + γ Σ_{X′}ᵀ θ − Σ_Xᵀ θ` over the dataset.
pub fn empirical_residual(
    theta: &DVector<f64>,
    discount: f64,
    fm: &FeatureMap,
    ds: &TransitionDataset,
) -> Result<DVector<f64>> {
    if theta.len() != fm.num_features() {
        return param_err("θ length does not match the number of features");
    }
    let vx = fm.apply(ds.states())?.transpose() * theta;
    let vxn = fm.apply(ds.next_states())?.transpose() * theta;
    Ok(ds.rewards() + vxn * discount - vx)
}

/// Values `Σ_Sᵀ θ` of the fitted model at every state.
pub fn predicted_values(sol: &LstdSolution, mrp: &MarkovRewardProcess, fm: &FeatureMap) -> Result<DVector<f64>> {
    if sol.theta().len() != fm.num_features() {
        return param_err("θ length does not match the number of features");
    }
    Ok(fm.apply(mrp.states())?.transpose() * sol.theta())
}

/// `‖r̄ + γ P Σ_Sᵀθ − Σ_Sᵀθ‖²_{D_π}`.
pub fn true_msbe(sol: &LstdSolution, mrp: &MarkovRewardProcess, fm: &FeatureMap, truth: &GroundTruth) -> Result<f64> {
    let v = predicted_values(sol, mrp, fm)?;
    let residual = mrp.expected_rewards() + mrp.transition() * &v * mrp.discount() - &v;
    Ok(linalg::diag_quadratic(&residual, truth.pi()))
}

/// `‖V − Σ_Sᵀθ‖²_{D_π}`.
pub fn msve(sol: &LstdSolution, mrp: &MarkovRewardProcess, fm: &FeatureMap, truth: &GroundTruth) -> Result<f64> {
    let v = predicted_values(sol, mrp, fm)?;
    Ok(linalg::diag_quadratic(&(&truth.values - v), truth.pi()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Activation;
    use crate::mrp::{sample_path, synthetic_ergodic_mrp};

    fn two_state() -> MarkovRewardProcess {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, -0.3, 0.8]);
        let p = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let r = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.5, 0.0]);
        MarkovRewardProcess::new(s, p, r, 0.9, 1.0, 0).unwrap()
    }

    #[test]
    fn counting_on_short_path() {
        let mrp = two_state();
        let ds = TransitionDataset::from_path(&mrp, &[0, 1, 0, 1], 0).unwrap();
        let ops = build_operators(&ds, 2, 0.5).unwrap();
        assert_eq!(ops.m(), 2);
        assert_eq!(ops.counts(), &[2, 1]);
        assert_eq!(ops.next_counts(), &[1, 2]);
    }

    #[test]
    fn zero_discount_a_hat_is_diagonal_counts() {
        let mrp = synthetic_ergodic_mrp(6, 3, 0.5, 1).unwrap();
        let ds = sample_path(&mrp, 30, 2).unwrap();
        let ops = build_operators(&ds, 6, 0.0).unwrap();
        for i in 0..ops.m() {
            for j in 0..ops.m() {
                let expected = if i == j { ops.counts()[i] as f64 / 30.0 } else { 0.0 };
                assert!((ops.a_hat()[(i, j)] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn alternating_path_a_hat() {
        let mrp = two_state();
        let g = 0.9;
        let ds = TransitionDataset::from_path(&mrp, &[0, 1, 0, 1, 0], 0).unwrap();
        let ops = build_operators(&ds, 2, g).unwrap();
        // counts c = [2, 2], transitions 0→1 twice and 1→0 twice
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, -0.5 * g, -0.5 * g, 0.5]);
        assert!((ops.a_hat() - expected).amax() < 1e-15);
    }

    #[test]
    fn padded_rows_match() {
        let mrp = synthetic_ergodic_mrp(10, 3, 0.5, 4).unwrap();
        let ds = sample_path(&mrp, 6, 3).unwrap();
        let ops = build_operators(&ds, 10, 0.5).unwrap();
        let full = ops.u_full();
        for (k, &s) in ops.visited_ids().iter().enumerate() {
            assert_eq!(full.row(s), ops.u_hat().row(k));
        }
        assert_eq!(full.sum(), ops.u_hat().sum());
    }

    #[test]
    fn two_state_violating_count_condition() {
        // self loops are needed, so not the 2-cycle
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let mrp =
            MarkovRewardProcess::new(two_state().states().clone(), p, DMatrix::zeros(2, 2), 0.99, 1.0, 0).unwrap();
        let ds = TransitionDataset::from_path(&mrp, &[0, 1, 1, 1], 0).unwrap();
        let g = 0.99;
        let ops = build_operators(&ds, 2, g).unwrap();
        let report = check_spectrum_assumption(&ops).unwrap();
        // c = [1, 2], c' = [0, 3]
        assert!(!report.count_condition);
        // H(Â) = (1/3) [[1, −γ/2], [−γ/2, 2 − 2γ]]
        let (a, b, d) = (1.0 / 3.0, -g / 6.0, (2.0 - 2.0 * g) / 3.0);
        let lo = 0.5 * (a + d) - (0.25 * (a - d) * (a - d) + b * b).sqrt();
        assert!((report.xi_min - lo).abs() < 1e-14);
        assert_eq!(report.pd, lo > 0.0);
    }

    #[test]
    fn adjustment_restores_count_condition() {
        let mrp = synthetic_ergodic_mrp(5, 3, 0.9, 8).unwrap();
        let ds = sample_path(&mrp, 12, 5).unwrap();
        let adj = pathwise_adjustment(&ds).unwrap();
        let ops = build_operators(&adj, 5, 0.999).unwrap();
        assert!(ops.counts().iter().zip(ops.next_counts()).all(|(c, cn)| c >= cn));
        assert!(check_spectrum_assumption(&ops).unwrap().count_condition);
    }

    #[test]
    fn theta_zero_msbe_is_mean_squared_reward() {
        let mrp = synthetic_ergodic_mrp(5, 3, 0.9, 8).unwrap();
        let ds = sample_path(&mrp, 12, 5).unwrap();
        let ops = build_operators(&ds, 5, 0.9).unwrap();
        let fm = FeatureMap::sample(4, 3, Activation::Relu, 1).unwrap();
        let sol = LstdSolution::from_theta(DVector::zeros(4), 1.0);
        let e = empirical_msbe(&sol, &ops, &fm, &ds).unwrap();
        assert!((e - ds.rewards().norm_squared() / 12.0).abs() < 1e-15);
    }

    #[test]
    fn huge_lambda_shrinks_theta() {
        let mrp = synthetic_ergodic_mrp(8, 4, 0.9, 1).unwrap();
        let ds = sample_path(&mrp, 20, 2).unwrap();
        let ops = build_operators(&ds, 8, 0.9).unwrap();
        let fm = FeatureMap::sample(6, 4, Activation::Relu, 3).unwrap();
        let s_hat = ops.visited_states(mrp.states());
        let lam = 1e6;
        let sol = lstd_fit(&ops, &fm, &s_hat, ds.rewards(), lam).unwrap();
        let sx = fm.apply(ds.states()).unwrap();
        let (m, n) = (ops.m() as f64, ops.n() as f64);
        let bound = (&sx * ds.rewards()).norm() / (lam * m * n);
        assert!(sol.theta().norm() <= bound * (1.0 + 1e-6));
    }

    #[test]
    fn fit_rejects_nonpositive_lambda() {
        let mrp = synthetic_ergodic_mrp(4, 3, 0.9, 1).unwrap();
        let ds = sample_path(&mrp, 5, 2).unwrap();
        let ops = build_operators(&ds, 4, 0.9).unwrap();
        let fm = FeatureMap::sample(3, 3, Activation::Relu, 3).unwrap();
        let s_hat = ops.visited_states(mrp.states());
        assert!(lstd_fit(&ops, &fm, &s_hat, ds.rewards(), 0.0).is_err());
    }
}
