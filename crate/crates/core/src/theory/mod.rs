//! Deterministic equivalents of regularized LSTD with random features.
//!
//! Every `n × n` quantity (`B_n`, `Q̄`, `Ψ₁`, `Ψ₂`) is evaluated through `m × m`
//! factors by push-through identities:
//!
//! * `Û Q̄ = R Û` with `R = (λI + c Â Φ_Ŝ)⁻¹`
//! * `Q̄ (Û − γV̂)ᵀ = (Û − γV̂)ᵀ L` with `L = (λI + c Φ_Ŝ Â)⁻¹`
//! * `R Â = Â L`
//!
//! where `c = (N/m)/(1 + δ)`. The dense forms are still available for small
//! instances through [`DeterministicEquivalent::q_bar`] and friends.

pub mod delta;
pub mod dense;

use nalgebra::{DMatrix, DVector};

use crate::error::{param_err, Error, Result};
use crate::features::{phi_gram, Activation};
use crate::linalg::{self, trace_of_product};
use crate::lstd::EmpiricalOperators;
use crate::mrp::{GroundTruth, MarkovRewardProcess};

pub use delta::{
    delta_fixed_point, delta_map, dense_spectrum, transition_spectrum, DeltaMethod, DeltaOptions, DeltaSolution,
    Spectrum,
};

/// Relative Frobenius residual allowed for `M X = I` after a resolvent solve.
pub const RESOLVENT_RESIDUAL_TOL: f64 = 1e-8;

/// Everything the equivalents need that depends only on the dataset and the
/// activation, not on `(N, λ)`.
#[derive(Clone, Debug)]
pub struct TheoryContext {
    ops: EmpiricalOperators,
    rewards: DVector<f64>,
    phi_s: DMatrix<f64>,
    phi_hat: DMatrix<f64>,
    td: DMatrix<f64>,
    td_gram: DMatrix<f64>,
    ur: DVector<f64>,
    unvisited: Vec<usize>,
    lambda_p: DMatrix<f64>,
    pi: DVector<f64>,
    expected_rewards: DVector<f64>,
    values: DVector<f64>,
    transition: DMatrix<f64>,
    discount: f64,
    spectrum: Spectrum,
}

impl TheoryContext {
    pub fn new(
        mrp: &MarkovRewardProcess,
        truth: &GroundTruth,
        ops: &EmpiricalOperators,
        rewards: &DVector<f64>,
        activation: Activation,
    ) -> Result<Self> {
        let p = mrp.num_states();
        if ops.num_states() != p {
            return param_err("operators were built for a different number of states");
        }
        if rewards.len() != ops.n() {
            return param_err("reward vector length differs from n");
        }
        if (ops.discount() - mrp.discount()).abs() > 0.0 {
            return param_err("operators and MRP use different discounts");
        }
        let phi_s = phi_gram(mrp.states(), activation)?.into_matrix();
        let visited = ops.visited_ids();
        let phi_hat = phi_s.select_rows(visited).select_columns(visited);
        let td = ops.td_operator();
        let td_gram = &td * td.transpose();
        let ur = ops.u_hat() * rewards;
        let mut is_visited = vec![false; p];
        for &s in visited {
            is_visited[s] = true;
        }
        let unvisited = (0..p).filter(|&s| !is_visited[s]).collect();
        let gamma = mrp.discount();
        let i_gp = DMatrix::identity(p, p) - mrp.transition() * gamma;
        let pi = truth.pi().clone();
        let lambda_p = i_gp.transpose() * DMatrix::from_diagonal(&pi) * &i_gp;
        let spectrum = transition_spectrum(&phi_hat, ops.a_hat())?;
        Ok(Self {
            ops: ops.clone(),
            rewards: rewards.clone(),
            phi_s,
            phi_hat,
            td,
            td_gram,
            ur,
            unvisited,
            lambda_p,
            pi,
            expected_rewards: mrp.expected_rewards().clone(),
            values: truth.values.clone(),
            transition: mrp.transition().clone(),
            discount: gamma,
            spectrum,
        })
    }

    pub fn ops(&self) -> &EmpiricalOperators {
        &self.ops
    }

    pub fn rewards(&self) -> &DVector<f64> {
        &self.rewards
    }

    pub fn m(&self) -> usize {
        self.ops.m()
    }

    pub fn n(&self) -> usize {
        self.ops.n()
    }

    pub fn num_states(&self) -> usize {
        self.phi_s.nrows()
    }

    /// `Φ_S` over all states.
    pub fn phi_s(&self) -> &DMatrix<f64> {
        &self.phi_s
    }

    /// `Φ_Ŝ` over the visited states.
    pub fn phi_hat(&self) -> &DMatrix<f64> {
        &self.phi_hat
    }

    /// `Λ_P = (I − γP)ᵀ D_π (I − γP)`.
    pub fn lambda_p(&self) -> &DMatrix<f64> {
        &self.lambda_p
    }

    pub fn pi(&self) -> &DVector<f64> {
        &self.pi
    }

    pub fn expected_rewards(&self) -> &DVector<f64> {
        &self.expected_rewards
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Nonzero spectrum of `B_n`.
    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    /// Solves for `δ` and assembles the equivalent at `(N, λ)`.
    pub fn equivalent(
        &self,
        num_features: usize,
        lambda: f64,
        opts: &DeltaOptions,
    ) -> Result<DeterministicEquivalent<'_>> {
        DeterministicEquivalent::new(self, num_features, lambda, opts)
    }
}

/// A theoretical metric split into its main term and second-order correction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoryValue {
    pub value: f64,
    pub main: f64,
    pub correction: f64,
}

impl TheoryValue {
    fn new(main: f64, correction: f64) -> Self {
        Self {
            value: main + correction,
            main,
            correction,
        }
    }
}

/// `δ`, `Q̄` and the second-order quantities at one `(N, λ)`.
#[derive(Clone, Debug)]
pub struct DeterministicEquivalent<'a> {
    ctx: &'a TheoryContext,
    num_features: usize,
    lambda: f64,
    delta: DeltaSolution,
    c: f64,
    r_mat: DMatrix<f64>,
    l_mat: DMatrix<f64>,
    y: DVector<f64>,
    psi1_norm: f64,
    denominator: f64,
}

fn relative_identity_residual(m: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    let k = m.nrows();
    let res = (m * x - DMatrix::<f64>::identity(k, k)).norm();
    res / (m.norm() * x.norm()).max(f64::MIN_POSITIVE)
}

fn checked_inverse(m: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let k = m.nrows();
    let inv = linalg::solve(m.clone(), &DMatrix::identity(k, k))?;
    let res = relative_identity_residual(&m, &inv);
    if !(res <= RESOLVENT_RESIDUAL_TOL) {
        return Err(Error::Numerical(format!(
            "{what} residual {res:.3e} exceeds {RESOLVENT_RESIDUAL_TOL:.0e}"
        )));
    }
    Ok(inv)
}

impl<'a> DeterministicEquivalent<'a> {
    pub fn new(ctx: &'a TheoryContext, num_features: usize, lambda: f64, opts: &DeltaOptions) -> Result<Self> {
        let delta = delta_fixed_point(&ctx.spectrum, num_features, lambda, opts)?;
        let m = ctx.m();
        let c = num_features as f64 / m as f64 / (1.0 + delta.delta);
        let phi = &ctx.phi_hat;
        let a = ctx.ops.a_hat();
        let mut r_sys = a * phi * c;
        let mut l_sys = phi * a * c;
        for i in 0..m {
            r_sys[(i, i)] += lambda;
            l_sys[(i, i)] += lambda;
        }
        let r_mat = checked_inverse(r_sys, "deterministic resolvent")?;
        let l_mat = checked_inverse(l_sys, "deterministic resolvent")?;
        let y = &r_mat * &ctx.ur;
        let psi1_norm = c * y.dot(&(phi * &y));

        let al = a * &l_mat;
        let phi_al = phi * &al;
        let den_trace = c * c * trace_of_product(&(phi * al.transpose()), &phi_al);
        let denominator = 1.0 - den_trace / num_features as f64;
        if !(denominator > 0.0) || !denominator.is_finite() {
            return Err(Error::Assumption(format!(
                "correction denominator 1 − Tr(Ψ₂Q̄ᵀΨ₁Q̄)/N = {denominator:.3e} is not positive (trace {den_trace:.3e})"
            )));
        }
        Ok(Self {
            ctx,
            num_features,
            lambda,
            delta,
            c,
            r_mat,
            l_mat,
            y,
            psi1_norm,
            denominator,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta.delta
    }

    pub fn delta_solution(&self) -> &DeltaSolution {
        &self.delta
    }

    /// `c = (N/m) / (1 + δ)`.
    pub fn scale(&self) -> f64 {
        self.c
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn ratio(&self) -> f64 {
        self.num_features as f64 / self.ctx.m() as f64
    }

    /// `1 − (1/N) Tr(Ψ₂ Q̄ᵀ Ψ₁ Q̄)`.
    pub fn denominator(&self) -> f64 {
        self.denominator
    }

    /// `‖Q̄ r‖²_{Ψ₁}`.
    pub fn psi1_norm(&self) -> f64 {
        self.psi1_norm
    }

    /// `λ Q̄ r = r − c (Û − γV̂)ᵀ Φ_Ŝ R Û r`.
    pub fn lambda_q_bar_r(&self) -> DVector<f64> {
        let phi_y = &self.ctx.phi_hat * &self.y;
        &self.ctx.rewards - self.ctx.td.transpose() * phi_y * self.c
    }

    /// `g = (c/√n) Φ_S U_n Q̄ r`, the value estimate the equivalent predicts.
    pub fn predicted_values(&self) -> DVector<f64> {
        let visited = self.ctx.ops.visited_ids();
        let phi_cols = self.ctx.phi_s.select_columns(visited);
        phi_cols * &self.y * (self.c / (self.ctx.n() as f64).sqrt())
    }

    /// `F = c Φ_S U_n R Â (embedded) − I`; the bracket of the true-MSBE correction
    /// traced against a symmetric `W` equals `c Tr(W F Φ_S Fᵀ)`.
    fn correction_factor_matrix(&self) -> DMatrix<f64> {
        let ctx = self.ctx;
        let p = ctx.num_states();
        let visited = ctx.ops.visited_ids();
        let mut f = -DMatrix::<f64>::identity(p, p);
        let lam_l = &self.l_mat * self.lambda;
        let off = if ctx.unvisited.is_empty() {
            None
        } else {
            let phi_u = ctx.phi_s.select_rows(&ctx.unvisited).select_columns(visited);
            Some(phi_u * (ctx.ops.a_hat() * &self.l_mat) * self.c)
        };
        for (k, &s) in visited.iter().enumerate() {
            f[(s, s)] = 0.0;
            for (i, &t) in visited.iter().enumerate() {
                f[(t, s)] = -lam_l[(i, k)];
            }
            if let Some(off) = &off {
                for (i, &u) in ctx.unvisited.iter().enumerate() {
                    f[(u, s)] = off[(i, k)];
                }
            }
        }
        f
    }

    fn correction_scale(&self) -> f64 {
        self.psi1_norm / (self.ctx.n() as f64 * self.num_features as f64 * self.denominator)
    }

    /// Theoretical empirical MSBE: `(λ²/n) ‖Q̄ r‖² + Δ̂`.
    pub fn empirical_msbe(&self) -> TheoryValue {
        let n = self.ctx.n() as f64;
        let main = self.lambda_q_bar_r().norm_squared() / n;
        let lam_l = &self.l_mat * self.lambda;
        let inner = &lam_l * &self.ctx.phi_hat * lam_l.transpose();
        let numerator = self.c * trace_of_product(&inner, &self.ctx.td_gram);
        TheoryValue::new(main, numerator * self.correction_scale())
    }

    /// Theoretical true MSBE: `‖r̄ + γPg − g‖²_{D_π} + Δ`.
    pub fn true_msbe(&self) -> TheoryValue {
        let ctx = self.ctx;
        let g = self.predicted_values();
        let residual = &ctx.expected_rewards + &ctx.transition * &g * ctx.discount - &g;
        let main = linalg::diag_quadratic(&residual, &ctx.pi);
        let f = self.correction_factor_matrix();
        let numerator = self.c * trace_of_product(&(&ctx.lambda_p * &f), &(&ctx.phi_s * f.transpose()));
        TheoryValue::new(main, numerator * self.correction_scale())
    }

    /// Theoretical MSVE: `‖V − g‖²_{D_π} + Δ′`.
    pub fn msve(&self) -> TheoryValue {
        let ctx = self.ctx;
        let g = self.predicted_values();
        let main = linalg::diag_quadratic(&(&ctx.values - &g), &ctx.pi);
        let f = self.correction_factor_matrix();
        let fphi = &f * &ctx.phi_s;
        let mut numerator = 0.0;
        for i in 0..ctx.num_states() {
            numerator += ctx.pi[i] * fphi.row(i).dot(&f.row(i));
        }
        TheoryValue::new(main, self.c * numerator * self.correction_scale())
    }

    /// `Δ` through the identity that holds when every state was visited:
    /// `(λ²/n) (1/N) Tr(Uᵀ Â⁻ᵀ Λ_P Â⁻¹ U Q̄ Ψ₂ Q̄ᵀ) / den · ‖Q̄ r‖²_{Ψ₁}`.
    /// `None` when some state is unvisited.
    pub fn true_msbe_correction_closed_form(&self) -> Result<Option<f64>> {
        let ctx = self.ctx;
        if !ctx.ops.all_visited() {
            return Ok(None);
        }
        let m = ctx.m();
        let a = ctx.ops.a_hat();
        let a_inv = linalg::solve(a.clone(), &DMatrix::identity(m, m))?;
        let weight = a_inv.transpose() * &ctx.lambda_p * &a_inv;
        let ra = &self.r_mat * a;
        let inner = &ra * &ctx.phi_hat * ra.transpose();
        let numerator = self.lambda * self.lambda * self.c * trace_of_product(&weight, &inner);
        Ok(Some(numerator * self.correction_scale()))
    }

    /// `B_n = (Û − γV̂)ᵀ Φ_Ŝ Û`, materialized.
    pub fn b_n(&self) -> DMatrix<f64> {
        self.ctx.td.transpose() * &self.ctx.phi_hat * self.ctx.ops.u_hat()
    }

    /// `Q̄ = [c B_n + λI]⁻¹`, materialized by a dense solve.
    pub fn q_bar(&self) -> Result<DMatrix<f64>> {
        let n = self.ctx.n();
        linalg::solve(self.resolvent_system(), &DMatrix::identity(n, n))
    }

    /// `c B_n + λI`.
    pub fn resolvent_system(&self) -> DMatrix<f64> {
        let n = self.ctx.n();
        let mut sys = self.b_n() * self.c;
        for i in 0..n {
            sys[(i, i)] += self.lambda;
        }
        sys
    }

    /// `‖Q̄ M − I‖_F / (‖Q̄‖_F ‖M‖_F)` for `M = c B_n + λI`.
    pub fn q_bar_residual(&self) -> Result<f64> {
        let q = self.q_bar()?;
        Ok(relative_identity_residual(&self.resolvent_system(), &q))
    }

    /// `Ψ₁ = c Ûᵀ Φ_Ŝ Û`.
    pub fn psi1(&self) -> DMatrix<f64> {
        let u = self.ctx.ops.u_hat();
        u.transpose() * &self.ctx.phi_hat * u * self.c
    }

    /// `Ψ₂ = c (Û − γV̂)ᵀ Φ_Ŝ (Û − γV̂)`.
    pub fn psi2(&self) -> DMatrix<f64> {
        let x = &self.ctx.td;
        x.transpose() * &self.ctx.phi_hat * x * self.c
    }

    /// `Ψ_S = c Φ_S`.
    pub fn psi_s(&self) -> DMatrix<f64> {
        &self.ctx.phi_s * self.c
    }

    pub fn report(&self) -> Result<TheoryReport> {
        Ok(TheoryReport {
            delta: self.delta(),
            delta_iterations: self.delta.iterations,
            scale: self.c,
            denominator: self.denominator,
            empirical_msbe: self.empirical_msbe(),
            true_msbe: self.true_msbe(),
            msve: self.msve(),
            true_msbe_correction_closed_form: self.true_msbe_correction_closed_form()?,
        })
    }
}

/// All theoretical outputs at one `(N, λ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoryReport {
    pub delta: f64,
    pub delta_iterations: usize,
    pub scale: f64,
    pub denominator: f64,
    pub empirical_msbe: TheoryValue,
    pub true_msbe: TheoryValue,
    pub msve: TheoryValue,
    pub true_msbe_correction_closed_form: Option<f64>,
}
