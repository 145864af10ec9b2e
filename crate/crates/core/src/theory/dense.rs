//! Literal `n × n` evaluation of the equivalents, for small instances.
//!
//! Nothing here uses the push-through factors of the parent module; it forms
//! `B_n`, `Q̄`, `Ψ₁`, `Ψ₂`, `Θ_S` and the correction brackets exactly as
//! written and is used to cross-check the compressed evaluation.

use nalgebra::{DMatrix, DVector};

use super::{TheoryContext, TheoryValue};
use crate::error::Result;
use crate::linalg::{self, trace_of_product};

#[derive(Clone, Debug)]
pub struct DenseEquivalent {
    pub q_bar: DMatrix<f64>,
    pub psi1: DMatrix<f64>,
    pub psi2: DMatrix<f64>,
    pub denominator: f64,
    pub empirical_msbe: TheoryValue,
    pub true_msbe: TheoryValue,
    pub msve: TheoryValue,
}

/// Evaluates every quantity at a given `δ` with dense `n × n` algebra.
pub fn evaluate(ctx: &TheoryContext, num_features: usize, lambda: f64, delta: f64) -> Result<DenseEquivalent> {
    let ops = ctx.ops();
    let (m, n) = (ops.m(), ops.n());
    let nf = n as f64;
    let big_n = num_features as f64;
    let c = big_n / m as f64 / (1.0 + delta);
    let u_hat = ops.u_hat();
    let x_hat = ops.td_operator();
    let phi = ctx.phi_hat();

    let b_n = x_hat.transpose() * phi * u_hat;
    let mut sys = &b_n * c;
    for i in 0..n {
        sys[(i, i)] += lambda;
    }
    let q_bar = linalg::solve(sys, &DMatrix::identity(n, n))?;
    let psi1 = u_hat.transpose() * phi * u_hat * c;
    let psi2 = x_hat.transpose() * phi * &x_hat * c;
    let r = ctx.rewards();
    let qr = &q_bar * r;
    let psi1_norm = linalg::quadratic(&qr, &psi1);
    let denominator = 1.0 - trace_of_product(&(&psi2 * q_bar.transpose()), &(&psi1 * &q_bar)) / big_n;
    let scale = psi1_norm / denominator;

    let emp_main = lambda * lambda / nf * qr.norm_squared();
    let emp_corr = lambda * lambda / nf * trace_of_product(&(&q_bar * &psi2), &q_bar.transpose()) / big_n * scale;

    let u_full = ops.u_full();
    let x_full = &u_full - ops.v_full() * ctx.discount();
    let psi_s = ctx.phi_s() * c;
    let g = &psi_s * &u_full * &qr / nf.sqrt();
    let gamma_pg = ctx.transition() * &g * ctx.discount();
    let bellman: DVector<f64> = ctx.expected_rewards() + gamma_pg - &g;
    let true_main = linalg::diag_quadratic(&bellman, ctx.pi());
    let theta_s = &psi_s * &u_full * &q_bar;
    let bracket = &theta_s * &psi2 * theta_s.transpose() - &theta_s * x_full.transpose() * &psi_s * 2.0 + &psi_s;
    let true_corr = trace_of_product(ctx.lambda_p(), &bracket) / big_n / nf * scale;

    let msve_main = linalg::diag_quadratic(&(ctx.values() - &g), ctx.pi());
    let d_pi = DMatrix::from_diagonal(ctx.pi());
    let msve_corr = trace_of_product(&d_pi, &bracket) / big_n / nf * scale;

    Ok(DenseEquivalent {
        q_bar,
        psi1,
        psi2,
        denominator,
        empirical_msbe: TheoryValue::new(emp_main, emp_corr),
        true_msbe: TheoryValue::new(true_main, true_corr),
        msve: TheoryValue::new(msve_main, msve_corr),
    })
}
