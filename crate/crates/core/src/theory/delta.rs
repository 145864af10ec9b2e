//! The correction factor `δ` and the spectrum it is computed from.
//!
//! `δ` solves `δ = (1/m) Σ_j ν_j / (c(δ) ν_j + λ)` with `c(δ) = (N/m)/(1 + δ)`,
//! where `ν_j` ranges over the nonzero eigenvalues of `B_n = (Û − γV̂)ᵀ Φ_Ŝ Û`.
//! Those are the eigenvalues of `Z̄ᵀ Â Z̄` for any factor `Φ_Ŝ = Z̄ Z̄ᵀ`, so the
//! spectrum is computed once on an `m × m` matrix and reused for every `(N, λ)`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{param_err, Error, Result};
use crate::linalg;

const IMAG_RESIDUE_TOL: f64 = 1e-8;

/// Eigenvalues of `B_n` restricted to its `m`-dimensional range.
#[derive(Clone, Debug)]
pub struct Spectrum {
    eigenvalues: Vec<Complex64>,
    m: usize,
    jitter: f64,
}

impl Spectrum {
    /// From explicit eigenvalues; `m` is the number of visited states.
    pub fn from_eigenvalues(eigenvalues: Vec<Complex64>, m: usize) -> Result<Self> {
        if m == 0 {
            return param_err("m must be positive");
        }
        if eigenvalues.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numerical("non-finite eigenvalue".into()));
        }
        Ok(Self {
            eigenvalues,
            m,
            jitter: 0.0,
        })
    }

    pub fn eigenvalues(&self) -> &[Complex64] {
        &self.eigenvalues
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Diagonal shift that was needed to factor `Φ_Ŝ`.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `Σ_j Re ν_j = Tr(Φ_Ŝ Â)`.
    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z.re).sum()
    }
}

/// Spectrum of `Z̄ᵀ Â Z̄` with `Z̄` the (jittered) Cholesky factor of `Φ_Ŝ`.
pub fn transition_spectrum(phi_hat: &DMatrix<f64>, a_hat: &DMatrix<f64>) -> Result<Spectrum> {
    let m = a_hat.nrows();
    if phi_hat.shape() != (m, m) || a_hat.ncols() != m {
        return param_err("Φ_Ŝ and Â must both be m x m");
    }
    let (z, jitter) = linalg::jittered_cholesky(phi_hat)?;
    let compressed = z.transpose() * a_hat * &z;
    let eigenvalues = linalg::complex_eigenvalues(&compressed)?;
    Ok(Spectrum { eigenvalues, m, jitter })
}

/// Spectrum of an explicit `n × n` matrix `B_n`.
pub fn dense_spectrum(b_n: &DMatrix<f64>, m: usize) -> Result<Spectrum> {
    if !b_n.is_square() {
        return param_err("B_n must be square");
    }
    Spectrum::from_eigenvalues(linalg::complex_eigenvalues(b_n)?, m)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DeltaMethod {
    /// Newton steps on `f(δ) − δ`, safeguarded by a bracketing interval.
    #[default]
    Newton,
    /// Plain fixed-point iteration `δ ← f(δ)`.
    Picard,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeltaOptions {
    pub rtol: f64,
    pub max_iter: usize,
    pub method: DeltaMethod,
    pub initial: f64,
}

impl Default for DeltaOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            max_iter: 100_000,
            method: DeltaMethod::Newton,
            initial: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeltaSolution {
    pub delta: f64,
    pub iterations: usize,
    /// `|f(δ) − δ|` at the returned point.
    pub residual: f64,
}

/// `f(δ)` and `f′(δ)` from the spectrum; the imaginary residue of the sum is returned too.
fn map_and_slope(eigs: &[Complex64], m: usize, ratio: f64, lambda: f64, delta: f64) -> (f64, f64, f64) {
    let c = ratio / (1.0 + delta);
    let mut f = Complex64::new(0.0, 0.0);
    let mut slope = Complex64::new(0.0, 0.0);
    for &nu in eigs {
        let den = nu * c + lambda;
        f += nu / den;
        slope += nu * nu / (den * den);
    }
    let mf = m as f64;
    let dc = ratio / ((1.0 + delta) * (1.0 + delta));
    (f.re / mf, slope.re * dc / mf, f.im.abs() / mf)
}

/// One application of the fixed-point map.
pub fn delta_map(spectrum: &Spectrum, num_features: usize, lambda: f64, delta: f64) -> f64 {
    let ratio = num_features as f64 / spectrum.m as f64;
    map_and_slope(&spectrum.eigenvalues, spectrum.m, ratio, lambda, delta).0
}

/// Solves for the unique positive `δ`.
pub fn delta_fixed_point(
    spectrum: &Spectrum,
    num_features: usize,
    lambda: f64,
    opts: &DeltaOptions,
) -> Result<DeltaSolution> {
    if num_features == 0 {
        return param_err("N must be positive");
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return param_err(format!("λ must be positive and finite, got {lambda}"));
    }
    if !(opts.rtol > 0.0) || opts.max_iter == 0 || !(opts.initial >= 0.0) {
        return param_err("δ solver needs rtol > 0, max_iter > 0 and a nonnegative start");
    }
    let m = spectrum.m;
    let ratio = num_features as f64 / m as f64;
    let eigs = spectrum.eigenvalues.as_slice();
    let eval = |d: f64| map_and_slope(eigs, m, ratio, lambda, d);

    let (f0, _, _) = eval(0.0);
    if !(f0 > 0.0) {
        return Err(Error::Assumption(format!(
            "fixed-point map is nonpositive at δ = 0 ({f0:.3e}); H(Â) is not positive definite"
        )));
    }
    let sol = match opts.method {
        DeltaMethod::Picard => picard(&eval, opts)?,
        DeltaMethod::Newton => newton(&eval, opts)?,
    };
    let (_, _, imag) = eval(sol.delta);
    if imag > IMAG_RESIDUE_TOL * sol.delta.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::Numerical(format!(
            "imaginary residue {imag:.3e} of the fixed-point sum is not negligible against δ = {:.3e}",
            sol.delta
        )));
    }
    Ok(sol)
}

fn picard(eval: &impl Fn(f64) -> (f64, f64, f64), opts: &DeltaOptions) -> Result<DeltaSolution> {
    let mut delta = opts.initial;
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let next = eval(delta).0;
        if !(next >= 0.0) {
            return Err(Error::Assumption(format!(
                "fixed-point iterate became negative ({next:.3e})"
            )));
        }
        residual = (next - delta).abs();
        delta = next;
        if residual <= opts.rtol * delta.max(1e-300) {
            return Ok(DeltaSolution {
                delta,
                iterations: it,
                residual: (eval(delta).0 - delta).abs(),
            });
        }
    }
    Err(Error::Convergence {
        iterations: opts.max_iter,
        residual,
    })
}

fn newton(eval: &impl Fn(f64) -> (f64, f64, f64), opts: &DeltaOptions) -> Result<DeltaSolution> {
    // g(δ) = f(δ) − δ is positive at 0 and negative for large δ
    let g = |d: f64| eval(d).0 - d;
    let mut lo = 0.0;
    let mut hi = opts.initial.max(1.0);
    let mut iterations = 0;
    while g(hi) >= 0.0 {
        lo = hi;
        hi *= 2.0;
        iterations += 1;
        if iterations > 2100 || !hi.is_finite() {
            return Err(Error::Convergence {
                iterations,
                residual: g(lo),
            });
        }
    }
    let mut delta = if opts.initial > lo && opts.initial < hi {
        opts.initial
    } else {
        0.5 * (lo + hi)
    };
    let mut last_step = f64::INFINITY;
    while iterations < opts.max_iter {
        iterations += 1;
        let (f, slope, _) = eval(delta);
        let gv = f - delta;
        if !(f >= 0.0) {
            return Err(Error::Assumption(format!("fixed-point map became negative ({f:.3e})")));
        }
        if gv > 0.0 {
            lo = delta;
        } else {
            hi = delta;
        }
        let dg = slope - 1.0;
        let newton_step = if dg != 0.0 { delta - gv / dg } else { f64::NAN };
        let next = if newton_step > lo && newton_step < hi {
            newton_step
        } else {
            0.5 * (lo + hi)
        };
        last_step = (next - delta).abs();
        delta = next;
        if last_step <= opts.rtol * delta.max(1e-300) || hi - lo <= opts.rtol * lo {
            if hi - lo <= opts.rtol * lo {
                delta = 0.5 * (lo + hi);
            }
            return Ok(DeltaSolution {
                delta,
                iterations,
                residual: g(delta).abs(),
            });
        }
    }
    Err(Error::Convergence {
        iterations,
        residual: last_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(phi: f64) -> Spectrum {
        Spectrum::from_eigenvalues(vec![Complex64::new(phi, 0.0)], 1).unwrap()
    }

    fn quadratic_root(phi: f64, n: f64, lambda: f64) -> f64 {
        let (a, b, c) = (lambda, n * phi + lambda - phi, -phi);
        // numerically stable positive root
        let disc = (b * b - 4.0 * a * c).sqrt();
        if b >= 0.0 {
            2.0 * (-c) / (b + disc)
        } else {
            (-b + disc) / (2.0 * a)
        }
    }

    #[test]
    fn scalar_matches_quadratic_formula() {
        let cases = [
            (0.7, 3, 0.1, true),
            (2.0, 1, 1e-3, false),
            (0.3, 10, 5.0, true),
            (1.0, 1, 1e-9, false),
        ];
        for &(phi, n, lambda, picard_too) in &cases {
            let expected = quadratic_root(phi, n as f64, lambda);
            // Picard contracts too slowly at small λ for its step test to bound the error
            let methods: &[DeltaMethod] = if picard_too {
                &[DeltaMethod::Newton, DeltaMethod::Picard]
            } else {
                &[DeltaMethod::Newton]
            };
            for &method in methods {
                let opts = DeltaOptions {
                    method,
                    max_iter: 10_000_000,
                    ..Default::default()
                };
                let got = delta_fixed_point(&scalar(phi), n, lambda, &opts).unwrap().delta;
                assert!(
                    linalg::rel_diff(got, expected, 0.0) <= 1e-9,
                    "{method:?}: {got} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn huge_lambda_vanishes() {
        let d = delta_fixed_point(&scalar(1.0), 1, 1e12, &DeltaOptions::default()).unwrap();
        assert!(d.delta < 1e-9 && d.delta > 0.0);
    }

    #[test]
    fn conjugate_pair_sum_is_real() {
        let eigs = vec![
            Complex64::new(0.5, 0.2),
            Complex64::new(0.5, -0.2),
            Complex64::new(0.1, 0.0),
        ];
        let s = Spectrum::from_eigenvalues(eigs, 3).unwrap();
        let d = delta_fixed_point(&s, 2, 0.01, &DeltaOptions::default()).unwrap();
        assert!(d.delta > 0.0);
        assert!((delta_map(&s, 2, 0.01, d.delta) - d.delta).abs() <= 1e-9 * d.delta);
    }

    #[test]
    fn rejects_nonpositive_map() {
        let s = Spectrum::from_eigenvalues(vec![Complex64::new(-1.0, 0.0)], 1).unwrap();
        assert!(matches!(
            delta_fixed_point(&s, 1, 1.0, &DeltaOptions::default()),
            Err(Error::Assumption(_))
        ));
    }

    #[test]
    fn picard_reports_non_convergence() {
        let opts = DeltaOptions {
            method: DeltaMethod::Picard,
            max_iter: 3,
            ..Default::default()
        };
        assert!(matches!(
            delta_fixed_point(&scalar(1.0), 1, 1e-9, &opts),
            Err(Error::Convergence { .. })
        ));
    }

    #[test]
    fn compressed_spectrum_matches_product() {
        let phi = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let a = DMatrix::from_row_slice(2, 2, &[0.6, -0.3, -0.2, 0.4]);
        let s = transition_spectrum(&phi, &a).unwrap();
        let mut got: Vec<f64> = s.eigenvalues().iter().map(|z| z.re).collect();
        let mut want: Vec<f64> = linalg::complex_eigenvalues(&(&phi * &a))
            .unwrap()
            .iter()
            .map(|z| z.re)
            .collect();
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }
}
