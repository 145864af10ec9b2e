//! Single-configuration diagnostics.

use std::fmt;

use serde::Serialize;

use super::{evaluate_instance, evaluate_theory, features_for_ratio, prepare, InstanceMetrics, SweepConfig};
use crate::error::Result;
use crate::theory::TheoryReport;

#[derive(Clone, Debug, Serialize)]
pub struct PointReport {
    pub env: String,
    pub ratio: f64,
    pub num_features: usize,
    pub lambda: f64,
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub num_states: usize,
    pub pathwise_adjusted: bool,
    pub xi_min: f64,
    pub xi_max: f64,
    pub pd: bool,
    pub count_condition: bool,
    pub gram_jitter: f64,
    pub delta: Option<f64>,
    pub delta_iterations: Option<usize>,
    pub denominator: Option<f64>,
    pub instance: std::result::Result<InstanceMetrics, String>,
    #[serde(skip)]
    pub theory: std::result::Result<TheoryReport, String>,
}

pub fn show_point(cfg: &SweepConfig, ratio: f64, lambda: f64, seed: u64) -> Result<PointReport> {
    let prep = prepare(cfg)?;
    let m = prep.ops.m();
    let big_n = features_for_ratio(ratio, m);
    let instance = evaluate_instance(&prep, cfg, big_n, lambda, seed).map_err(|e| e.to_string());
    let theory = evaluate_theory(&prep, big_n, lambda).map_err(|e| e.to_string());
    let th = theory.as_ref().ok();
    Ok(PointReport {
        env: cfg.env_label(),
        ratio,
        num_features: big_n,
        lambda,
        seed,
        n: prep.ops.n(),
        m,
        num_states: prep.mrp.num_states(),
        pathwise_adjusted: prep.adjusted,
        xi_min: prep.spectrum.xi_min,
        xi_max: prep.spectrum.xi_max,
        pd: prep.spectrum.pd,
        count_condition: prep.spectrum.count_condition,
        gram_jitter: prep.theory.spectrum().jitter(),
        delta: th.map(|t| t.delta),
        delta_iterations: th.map(|t| t.delta_iterations),
        denominator: th.map(|t| t.denominator),
        instance,
        theory,
    })
}

impl fmt::Display for PointReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "env               {}", self.env)?;
        writeln!(f, "states p          {}", self.num_states)?;
        writeln!(f, "transitions n     {}", self.n)?;
        writeln!(f, "visited m         {}", self.m)?;
        writeln!(f, "features N        {} (ratio {})", self.num_features, self.ratio)?;
        writeln!(f, "lambda            {:e}", self.lambda)?;
        writeln!(f, "feature seed      {}", self.seed)?;
        writeln!(f, "pathwise adjusted {}", self.pathwise_adjusted)?;
        writeln!(f, "H(A) xi_min       {:e}", self.xi_min)?;
        writeln!(f, "H(A) xi_max       {:e}", self.xi_max)?;
        writeln!(f, "H(A) pd           {}", self.pd)?;
        writeln!(f, "count_condition   {}", self.count_condition)?;
        writeln!(f, "gram jitter       {:e}", self.gram_jitter)?;
        match &self.theory {
            Ok(t) => {
                writeln!(f, "delta             {:e} ({} iterations)", t.delta, t.delta_iterations)?;
                writeln!(f, "denominator       {:e}", t.denominator)?;
                for (name, v) in [
                    ("theory emp. MSBE", &t.empirical_msbe),
                    ("theory true MSBE", &t.true_msbe),
                    ("theory MSVE", &t.msve),
                ] {
                    writeln!(
                        f,
                        "{name:<17} {:e} (main {:e}, correction {:e})",
                        v.value, v.main, v.correction
                    )?;
                }
                if let Some(c) = t.true_msbe_correction_closed_form {
                    writeln!(f, "correction (all-visited identity) {c:e}")?;
                }
            }
            Err(e) => writeln!(f, "theory            failed: {e}")?,
        }
        match &self.instance {
            Ok(i) => {
                writeln!(f, "empirical MSBE    {:e}", i.empirical_msbe)?;
                writeln!(f, "true MSBE         {:e}", i.true_msbe)?;
                writeln!(f, "MSVE              {:e}", i.msve)?;
                write!(f, "solve condition   {:e}", i.condition)
            }
            Err(e) => write!(f, "instance          failed: {e}"),
        }
    }
}
