//! Sweep configuration read from TOML.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Activation;
use crate::mrp::{EnvKind, EnvSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvName {
    Synthetic,
    Gridworld,
}

/// A quantity a sweep can record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    EmpiricalMsbe,
    TrueMsbe,
    Msve,
    TheoryEmpiricalMsbe,
    TheoryTrueMsbe,
    TheoryMsve,
    TheoryEmpiricalMsbeCorrection,
    TheoryTrueMsbeCorrection,
    TheoryMsveCorrection,
    Delta,
}

impl Metric {
    pub const ALL: [Metric; 10] = [
        Self::EmpiricalMsbe,
        Self::TrueMsbe,
        Self::Msve,
        Self::TheoryEmpiricalMsbe,
        Self::TheoryTrueMsbe,
        Self::TheoryMsve,
        Self::TheoryEmpiricalMsbeCorrection,
        Self::TheoryTrueMsbeCorrection,
        Self::TheoryMsveCorrection,
        Self::Delta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::EmpiricalMsbe => "empirical_msbe",
            Self::TrueMsbe => "true_msbe",
            Self::Msve => "msve",
            Self::TheoryEmpiricalMsbe => "theory_empirical_msbe",
            Self::TheoryTrueMsbe => "theory_true_msbe",
            Self::TheoryMsve => "theory_msve",
            Self::TheoryEmpiricalMsbeCorrection => "theory_empirical_msbe_correction",
            Self::TheoryTrueMsbeCorrection => "theory_true_msbe_correction",
            Self::TheoryMsveCorrection => "theory_msve_correction",
            Self::Delta => "delta",
        }
    }

    /// Measured per feature draw, as opposed to computed once per grid point.
    pub fn is_instance(self) -> bool {
        matches!(self, Self::EmpiricalMsbe | Self::TrueMsbe | Self::Msve)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown metric {s:?}")))
    }
}

fn default_dataset_seed() -> u64 {
    42
}

fn default_activation() -> Activation {
    Activation::Relu
}

fn default_metrics() -> Vec<Metric> {
    Metric::ALL.to_vec()
}

fn default_instances() -> usize {
    30
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub env: EnvName,
    /// Number of states of the synthetic MRP.
    #[serde(default)]
    pub num_states: Option<usize>,
    /// Side length of the gridworld.
    #[serde(default)]
    pub side: Option<usize>,
    #[serde(default)]
    pub env_seed: u64,
    pub state_dim: usize,
    /// Multiplier of the Gaussian state embeddings; defaults to `1/√d`.
    #[serde(default)]
    pub embedding_scale: Option<f64>,
    pub n: usize,
    pub gamma: f64,
    pub lambdas: Vec<f64>,
    pub ratios: Vec<f64>,
    #[serde(default = "default_instances")]
    pub num_instances: usize,
    #[serde(default = "default_dataset_seed")]
    pub dataset_seed: u64,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    /// Default output directory when none is given on the command line.
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
}

impl SweepConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match (self.env, self.num_states, self.side) {
            (EnvName::Synthetic, Some(p), None) if p >= 2 => {}
            (EnvName::Synthetic, _, _) => return bad("synthetic env needs num_states >= 2 and no side".into()),
            (EnvName::Gridworld, None, Some(s)) if s >= 2 => {}
            (EnvName::Gridworld, _, _) => return bad("gridworld env needs side >= 2 and no num_states".into()),
        }
        if self.state_dim == 0 {
            return bad("state_dim must be positive".into());
        }
        if let Some(s) = self.embedding_scale {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("embedding_scale {s} must be positive"));
            }
        }
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} must lie in [0, 1)", self.gamma));
        }
        if self.lambdas.is_empty() || self.ratios.is_empty() {
            return bad("lambdas and ratios must be nonempty".into());
        }
        if let Some(l) = self.lambdas.iter().find(|&&l| !(l > 0.0 && l.is_finite())) {
            return bad(format!("lambda {l} must be positive"));
        }
        if let Some(r) = self.ratios.iter().find(|&&r| !(r > 0.0 && r.is_finite())) {
            return bad(format!("ratio {r} must be positive"));
        }
        if self.num_instances == 0 {
            return bad("num_instances must be positive".into());
        }
        if self.metrics.is_empty() {
            return bad("metrics must be nonempty".into());
        }
        Ok(())
    }

    pub fn env_spec(&self) -> EnvSpec {
        let kind = match self.env {
            EnvName::Synthetic => EnvKind::Synthetic {
                num_states: self.num_states.unwrap_or(0),
            },
            EnvName::Gridworld => EnvKind::Gridworld {
                side: self.side.unwrap_or(0),
            },
        };
        EnvSpec {
            kind,
            state_dim: self.state_dim,
            discount: self.gamma,
            seed: self.env_seed,
            embedding_scale: self.embedding_scale,
        }
    }

    /// Label written into the `env` column.
    pub fn env_label(&self) -> String {
        match self.env {
            EnvName::Synthetic => format!("synthetic-{}", self.num_states.unwrap_or(0)),
            EnvName::Gridworld => format!("gridworld-{}", self.side.unwrap_or(0)),
        }
    }

    /// Selected metrics in canonical order without duplicates.
    pub fn metric_set(&self) -> Vec<Metric> {
        let mut ms = self.metrics.clone();
        ms.sort();
        ms.dedup();
        ms
    }
}

/// `N = round(ratio · m)`, at least 1.
pub fn features_for_ratio(ratio: f64, m: usize) -> usize {
    ((ratio * m as f64).round() as usize).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
env = "synthetic"
num_states = 20
state_dim = 5
n = 50
gamma = 0.9
lambdas = [1e-3]
ratios = [0.5, 1.0]
num_instances = 2
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = SweepConfig::from_toml_str(BASE).unwrap();
        assert_eq!(cfg.dataset_seed, 42);
        assert_eq!(cfg.activation, Activation::Relu);
        assert_eq!(cfg.metric_set().len(), Metric::ALL.len());
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = format!("{BASE}\nbogus = 1\n");
        assert!(matches!(SweepConfig::from_toml_str(&text), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(SweepConfig::from_toml_str(&BASE.replace("gamma = 0.9", "gamma = 1.0")).is_err());
        assert!(SweepConfig::from_toml_str(&BASE.replace("[1e-3]", "[0.0]")).is_err());
        assert!(SweepConfig::from_toml_str(&BASE.replace("[0.5, 1.0]", "[]")).is_err());
        assert!(SweepConfig::from_toml_str(&BASE.replace("synthetic", "gridworld")).is_err());
    }

    #[test]
    fn round_trips() {
        let cfg = SweepConfig::from_toml_str(BASE).unwrap();
        let back = SweepConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn feature_counts() {
        assert_eq!(features_for_ratio(0.5, 61), 31);
        assert_eq!(features_for_ratio(0.001, 10), 1);
        assert_eq!(features_for_ratio(1.0, 37), 37);
    }
}
