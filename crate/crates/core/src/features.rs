//! Random feature maps `RF(s) = σ(W s)` and the expected Gram matrix `Φ`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::linalg::symmetric_part;
use crate::rng;

/// Pointwise nonlinearity of the random feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Abs,
    Sign,
}

impl Activation {
    pub const ALL: [Activation; 4] = [Self::Linear, Self::Relu, Self::Abs, Self::Sign];

    #[inline]
    pub fn apply(self, t: f64) -> f64 {
        match self {
            Self::Linear => t,
            Self::Relu => t.max(0.0),
            Self::Abs => t.abs(),
            Self::Sign => {
                if t > 0.0 {
                    1.0
                } else if t < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Lipschitz constant `K_σ`, or `None` for sign (closed form only).
    pub fn lipschitz(self) -> Option<f64> {
        match self {
            Self::Linear | Self::Relu | Self::Abs => Some(1.0),
            Self::Sign => None,
        }
    }

    /// Whether the closed-form kernel depends on the angle between inputs.
    pub fn is_angular(self) -> bool {
        !matches!(self, Self::Linear)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Relu => "relu",
            Self::Abs => "abs",
            Self::Sign => "sign",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Parameter(format!("unknown activation {s:?}")))
    }
}

/// A fixed random map `s ↦ σ(W s)` with `W ∈ ℝ^{N×d}`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    weights: DMatrix<f64>,
    activation: Activation,
    seed: u64,
}

impl FeatureMap {
    /// Draws `W` with i.i.d. standard Gaussian entries.
    ///
    /// Rows are drawn in order, so the map for `N` features is a prefix of the
    /// map for any larger `N` with the same seed.
    pub fn sample(num_features: usize, state_dim: usize, activation: Activation, seed: u64) -> Result<Self> {
        Self::sample_with(num_features, state_dim, activation, seed, |w| w)
    }

    /// As [`FeatureMap::sample`] with entries `φ(w̃)` for a pointwise `φ`.
    pub fn sample_with(
        num_features: usize,
        state_dim: usize,
        activation: Activation,
        seed: u64,
        phi: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        if num_features == 0 || state_dim == 0 {
            return param_err("feature map needs N >= 1 and d >= 1");
        }
        let mut rng = rng::stream(seed, 3);
        let mut weights = DMatrix::zeros(num_features, state_dim);
        for i in 0..num_features {
            for j in 0..state_dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                weights[(i, j)] = phi(z);
            }
        }
        Ok(Self {
            weights,
            activation,
            seed,
        })
    }

    pub fn from_weights(weights: DMatrix<f64>, activation: Activation, seed: u64) -> Result<Self> {
        if weights.is_empty() {
            return param_err("feature weights must be nonempty");
        }
        Ok(Self {
            weights,
            activation,
            seed,
        })
    }

    pub fn num_features(&self) -> usize {
        self.weights.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `σ(W A)` applied column-wise to a `d × q` matrix.
    pub fn apply(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if a.nrows() != self.state_dim() {
            return param_err(format!(
                "input has {} rows but the feature map expects d = {}",
                a.nrows(),
                self.state_dim()
            ));
        }
        if a.ncols() == 0 {
            return param_err("input must have at least one column");
        }
        let act = self.activation;
        Ok((&self.weights * a).map(|t| act.apply(t)))
    }
}

/// Closed-form `E_w[σ(wᵀa) σ(wᵀb)]` for `w ~ N(0, I_d)`.
pub fn phi_closed_form(a: &DVector<f64>, b: &DVector<f64>, act: Activation) -> Result<f64> {
    if a.len() != b.len() {
        return param_err("kernel inputs have different lengths");
    }
    let dot = a.dot(b);
    if !act.is_angular() {
        return Ok(dot);
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return param_err(format!("{act} kernel needs nonzero inputs"));
    }
    Ok(angular_kernel(act, dot, na, nb))
}

fn angular_kernel(act: Activation, dot: f64, na: f64, nb: f64) -> f64 {
    let cos = (dot / (na * nb)).clamp(-1.0, 1.0);
    let sin = (1.0 - cos * cos).max(0.0).sqrt();
    match act {
        Activation::Linear => dot,
        Activation::Relu => na * nb * (cos * (-cos).acos() + sin) / (2.0 * PI),
        Activation::Abs => 2.0 / PI * na * nb * (cos * cos.asin() + sin),
        Activation::Sign => 2.0 / PI * cos.asin(),
    }
}

/// Expected Gram matrix `Φ` over the columns of a state matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    phi: DMatrix<f64>,
}

impl GramMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.phi
    }

    pub fn min_eigenvalue(&self) -> f64 {
        crate::linalg::symmetric_extremes(&self.phi).0
    }
}

/// `Φ_ij = phi_closed_form(S_i, S_j)` over the columns of `states`, symmetrized.
pub fn phi_gram(states: &DMatrix<f64>, act: Activation) -> Result<GramMatrix> {
    let q = states.ncols();
    let dots = states.transpose() * states;
    if !act.is_angular() {
        return Ok(GramMatrix {
            phi: symmetric_part(&dots),
        });
    }
    let norms: Vec<f64> = (0..q).map(|i| states.column(i).norm()).collect();
    if let Some(i) = norms.iter().position(|&x| x == 0.0) {
        return param_err(format!("state column {i} is zero; {act} kernel is undefined"));
    }
    let mut phi = DMatrix::zeros(q, q);
    for j in 0..q {
        for i in 0..=j {
            let v = angular_kernel(act, dots[(i, j)], norms[i], norms[j]);
            phi[(i, j)] = v;
            phi[(j, i)] = v;
        }
    }
    Ok(GramMatrix { phi })
}

/// Monte Carlo estimate of `E_w[σ(wᵀa) σ(wᵀb)]`: sample mean and standard error.
pub fn phi_monte_carlo(
    a: &DVector<f64>,
    b: &DVector<f64>,
    act: Activation,
    num_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if num_samples < 2 {
        return param_err("Monte Carlo needs at least 2 samples");
    }
    if a.len() != b.len() {
        return param_err("kernel inputs have different lengths");
    }
    let d = a.len();
    let mut rng = rng::stream(seed, 4);
    let mut w = DVector::zeros(d);
    // Welford accumulation
    let (mut mean, mut m2) = (0.0, 0.0);
    for k in 0..num_samples {
        for x in w.iter_mut() {
            *x = StandardNormal.sample(&mut rng);
        }
        let v = act.apply(w.dot(a)) * act.apply(w.dot(b));
        let delta = v - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (v - mean);
    }
    let var = m2 / (num_samples - 1) as f64;
    Ok((mean, (var / num_samples as f64).sqrt()))
}
