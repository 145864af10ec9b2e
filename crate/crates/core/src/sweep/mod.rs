//! Experiment harness: seed-parallel sweeps over `N/m` and `λ`.

pub mod config;
pub mod point;
pub mod selftest;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

pub use config::{features_for_ratio, EnvName, Metric, SweepConfig};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::lstd::{
    build_operators, check_spectrum_assumption, empirical_msbe, lstd_fit, msve, pathwise_adjustment, true_msbe,
    EmpiricalOperators, SpectrumReport,
};
use crate::mrp::{sample_path_from, GroundTruth, MarkovRewardProcess, TransitionDataset};
use crate::theory::{DeltaOptions, TheoryContext, TheoryReport};

/// Fixed CSV header.
pub const CSV_HEADER: [&str; 11] = [
    "env", "ratio", "N", "m", "n", "lambda", "kind", "seed", "metric", "value", "status",
];

/// Environment variable shifting every instance seed.
pub const SEED_OFFSET_VAR: &str = "RFLSTD_SEED_OFFSET";

/// Reads the instance seed offset from the environment (0 when unset).
pub fn seed_offset_from_env() -> Result<u64> {
    match std::env::var(SEED_OFFSET_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_OFFSET_VAR}={v:?} is not a nonnegative integer"))),
        Err(std::env::VarError::NotPresent) => Ok(0),
        Err(e) => Err(Error::Config(format!("{SEED_OFFSET_VAR}: {e}"))),
    }
}

/// Environment, dataset and per-dataset theory shared by every grid point.
#[derive(Debug)]
pub struct Prepared {
    pub mrp: MarkovRewardProcess,
    pub truth: GroundTruth,
    pub dataset: TransitionDataset,
    pub ops: EmpiricalOperators,
    pub spectrum: SpectrumReport,
    /// Spectrum report of the raw dataset before any adjustment.
    pub raw_spectrum: SpectrumReport,
    pub adjusted: bool,
    pub theory: TheoryContext,
}

/// Builds the environment and dataset, applying the pathwise adjustment when the
/// count condition fails.
pub fn prepare(cfg: &SweepConfig) -> Result<Prepared> {
    cfg.validate()?;
    let mrp = cfg.env_spec().build()?;
    let truth = GroundTruth::compute(&mrp)?;
    let raw = sample_path_from(&mrp, truth.pi(), cfg.n, cfg.dataset_seed)?;
    let p = mrp.num_states();
    let raw_ops = build_operators(&raw, p, cfg.gamma)?;
    let raw_spectrum = check_spectrum_assumption(&raw_ops)?;
    let (dataset, ops, spectrum, adjusted) = if raw_spectrum.count_condition {
        (raw, raw_ops, raw_spectrum, false)
    } else {
        let ds = pathwise_adjustment(&raw)?;
        let ops = build_operators(&ds, p, cfg.gamma)?;
        let report = check_spectrum_assumption(&ops)?;
        (ds, ops, report, true)
    };
    let theory = TheoryContext::new(&mrp, &truth, &ops, dataset.rewards(), cfg.activation)?;
    Ok(Prepared {
        mrp,
        truth,
        dataset,
        ops,
        spectrum,
        raw_spectrum,
        adjusted,
        theory,
    })
}

/// Metrics of one fitted instance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InstanceMetrics {
    pub empirical_msbe: f64,
    pub true_msbe: f64,
    pub msve: f64,
    pub condition: f64,
}

impl InstanceMetrics {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::EmpiricalMsbe => Some(self.empirical_msbe),
            Metric::TrueMsbe => Some(self.true_msbe),
            Metric::Msve => Some(self.msve),
            _ => None,
        }
    }
}

/// Fits LSTD with the feature draw `seed` and evaluates all instance metrics.
pub fn evaluate_instance(
    prep: &Prepared,
    cfg: &SweepConfig,
    num_features: usize,
    lambda: f64,
    seed: u64,
) -> Result<InstanceMetrics> {
    let fm = FeatureMap::sample(num_features, cfg.state_dim, cfg.activation, seed)?;
    let s_hat = prep.ops.visited_states(prep.mrp.states());
    let sol = lstd_fit(&prep.ops, &fm, &s_hat, prep.dataset.rewards(), lambda)?;
    let metrics = InstanceMetrics {
        empirical_msbe: empirical_msbe(&sol, &prep.ops, &fm, &prep.dataset)?,
        true_msbe: true_msbe(&sol, &prep.mrp, &fm, &prep.truth)?,
        msve: msve(&sol, &prep.mrp, &fm, &prep.truth)?,
        condition: sol.condition().unwrap_or(f64::NAN),
    };
    let all = [metrics.empirical_msbe, metrics.true_msbe, metrics.msve];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite metric".into()));
    }
    Ok(metrics)
}

/// Evaluates the deterministic equivalent at one grid point.
pub fn evaluate_theory(prep: &Prepared, num_features: usize, lambda: f64) -> Result<TheoryReport> {
    prep.theory
        .equivalent(num_features, lambda, &DeltaOptions::default())?
        .report()
}

fn theory_metric(report: &TheoryReport, metric: Metric) -> Option<f64> {
    match metric {
        Metric::TheoryEmpiricalMsbe => Some(report.empirical_msbe.value),
        Metric::TheoryTrueMsbe => Some(report.true_msbe.value),
        Metric::TheoryMsve => Some(report.msve.value),
        Metric::TheoryEmpiricalMsbeCorrection => Some(report.empirical_msbe.correction),
        Metric::TheoryTrueMsbeCorrection => Some(report.true_msbe.correction),
        Metric::TheoryMsveCorrection => Some(report.msve.correction),
        Metric::Delta => Some(report.delta),
        _ => None,
    }
}

/// One line of the output CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub env: String,
    pub ratio: f64,
    pub num_features: usize,
    pub m: usize,
    pub n: usize,
    pub lambda: f64,
    pub kind: &'static str,
    pub seed: String,
    pub metric: Metric,
    pub value: f64,
    pub status: &'static str,
}

impl SweepRow {
    fn record(&self) -> [String; 11] {
        [
            self.env.clone(),
            format!("{:e}", self.ratio),
            self.num_features.to_string(),
            self.m.to_string(),
            self.n.to_string(),
            format!("{:e}", self.lambda),
            self.kind.to_string(),
            self.seed.clone(),
            self.metric.name().to_string(),
            format!("{:e}", self.value),
            self.status.to_string(),
        ]
    }
}

/// Per-point aggregates written to the JSON summary.
#[derive(Clone, Debug, Serialize)]
pub struct PointSummary {
    pub ratio: f64,
    #[serde(rename = "N")]
    pub num_features: usize,
    pub lambda: f64,
    pub failed_instances: usize,
    pub errors: Vec<String>,
    pub means: BTreeMap<String, f64>,
    pub stds: BTreeMap<String, f64>,
    pub theory: BTreeMap<String, f64>,
    pub theory_error: Option<String>,
    pub hard_failure: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepSummary {
    pub env: String,
    pub num_states: usize,
    pub state_dim: usize,
    pub n: usize,
    pub m: usize,
    pub gamma: f64,
    pub activation: String,
    pub dataset_seed: u64,
    pub instance_seeds: Vec<u64>,
    pub pathwise_adjusted: bool,
    pub xi_min: f64,
    pub xi_max: f64,
    pub count_condition: bool,
    pub gram_jitter: f64,
    pub points: Vec<PointSummary>,
}

pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub summary: SweepSummary,
}

impl SweepOutput {
    /// Grid points at which every instance failed.
    pub fn hard_failures(&self) -> Vec<&PointSummary> {
        self.summary.points.iter().filter(|p| p.hard_failure).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(CSV_HEADER)?;
        for row in &self.rows {
            wtr.write_record(row.record())?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Numerical(e.to_string()))
    }

    /// Writes `sweep.csv` and `summary.json` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let csv_file = std::fs::File::create(dir.join("sweep.csv"))?;
        self.write_csv(std::io::BufWriter::new(csv_file))?;
        let json = serde_json::to_string_pretty(&self.summary)?;
        std::fs::write(dir.join("summary.json"), json + "\n")?;
        Ok(())
    }
}

/// Sample mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
    (mean, var.sqrt())
}

/// Grid points in output order: ratios ascending, then λ ascending.
fn grid(cfg: &SweepConfig) -> Vec<(f64, f64)> {
    let mut ratios = cfg.ratios.clone();
    ratios.sort_by(f64::total_cmp);
    ratios.dedup();
    let mut lambdas = cfg.lambdas.clone();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();
    ratios
        .iter()
        .flat_map(|&r| lambdas.iter().map(move |&l| (r, l)))
        .collect()
}

/// Runs the full sweep with `jobs` worker threads.
pub fn run_sweep(cfg: &SweepConfig, jobs: usize, seed_offset: u64) -> Result<SweepOutput> {
    let prep = prepare(cfg)?;
    run_prepared(&prep, cfg, jobs, seed_offset)
}

pub fn run_prepared(prep: &Prepared, cfg: &SweepConfig, jobs: usize, seed_offset: u64) -> Result<SweepOutput> {
    let metrics = cfg.metric_set();
    let instance_metrics: Vec<Metric> = metrics.iter().copied().filter(|m| m.is_instance()).collect();
    let theory_metrics: Vec<Metric> = metrics.iter().copied().filter(|m| !m.is_instance()).collect();
    let seeds: Vec<u64> = (1..=cfg.num_instances as u64).map(|s| s + seed_offset).collect();
    let points = grid(cfg);
    let m = prep.ops.m();
    let n = prep.ops.n();

    enum Job {
        Instance(usize, u64),
        Theory(usize),
    }
    let mut job_list = Vec::new();
    for (k, _) in points.iter().enumerate() {
        if !instance_metrics.is_empty() {
            job_list.extend(seeds.iter().map(|&s| Job::Instance(k, s)));
        }
        if !theory_metrics.is_empty() {
            job_list.push(Job::Theory(k));
        }
    }
    enum Outcome {
        Instance(usize, u64, std::result::Result<InstanceMetrics, String>),
        Theory(usize, std::result::Result<TheoryReport, String>),
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<Outcome> = pool.install(|| {
        job_list
            .par_iter()
            .map(|job| match *job {
                Job::Instance(k, seed) => {
                    let (ratio, lambda) = points[k];
                    let big_n = features_for_ratio(ratio, m);
                    let res = evaluate_instance(prep, cfg, big_n, lambda, seed).map_err(|e| e.to_string());
                    Outcome::Instance(k, seed, res)
                }
                Job::Theory(k) => {
                    let (ratio, lambda) = points[k];
                    let big_n = features_for_ratio(ratio, m);
                    Outcome::Theory(k, evaluate_theory(prep, big_n, lambda).map_err(|e| e.to_string()))
                }
            })
            .collect()
    });

    let mut inst: Vec<BTreeMap<u64, std::result::Result<InstanceMetrics, String>>> =
        vec![BTreeMap::new(); points.len()];
    let mut theo: Vec<Option<std::result::Result<TheoryReport, String>>> = vec![None; points.len()];
    for o in outcomes {
        match o {
            Outcome::Instance(k, s, r) => {
                inst[k].insert(s, r);
            }
            Outcome::Theory(k, r) => theo[k] = Some(r),
        }
    }

    let env = cfg.env_label();
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (k, &(ratio, lambda)) in points.iter().enumerate() {
        let big_n = features_for_ratio(ratio, m);
        let row = |kind: &'static str, seed: String, metric: Metric, value: f64, status: &'static str| SweepRow {
            env: env.clone(),
            ratio,
            num_features: big_n,
            m,
            n,
            lambda,
            kind,
            seed,
            metric,
            value,
            status,
        };
        let mut summary = PointSummary {
            ratio,
            num_features: big_n,
            lambda,
            failed_instances: 0,
            errors: Vec::new(),
            means: BTreeMap::new(),
            stds: BTreeMap::new(),
            theory: BTreeMap::new(),
            theory_error: None,
            hard_failure: false,
        };
        if !instance_metrics.is_empty() {
            for (&seed, res) in &inst[k] {
                for &metric in &instance_metrics {
                    match res {
                        Ok(v) => rows.push(row("instance", seed.to_string(), metric, v.get(metric).unwrap(), "ok")),
                        Err(_) => rows.push(row("instance", seed.to_string(), metric, f64::NAN, "failed")),
                    }
                }
            }
            let failed = inst[k].values().filter(|r| r.is_err()).count();
            summary.failed_instances = failed;
            summary.errors = inst[k]
                .iter()
                .filter_map(|(s, r)| r.as_ref().err().map(|e| format!("seed {s}: {e}")))
                .collect();
            summary.hard_failure = failed == seeds.len();
            for &metric in &instance_metrics {
                let vals: Vec<f64> = inst[k]
                    .values()
                    .filter_map(|r| r.as_ref().ok().and_then(|v| v.get(metric)))
                    .collect();
                let (mean, std) = mean_std(&vals);
                let status = if vals.is_empty() { "failed" } else { "ok" };
                rows.push(row("mean", "mean".into(), metric, mean, status));
                rows.push(row("std", "std".into(), metric, std, status));
                if failed > 0 {
                    rows.push(row("failed_count", "failed_count".into(), metric, failed as f64, "ok"));
                }
                summary.means.insert(metric.name().into(), mean);
                summary.stds.insert(metric.name().into(), std);
            }
        }
        if !theory_metrics.is_empty() {
            match theo[k].as_ref().expect("theory job ran") {
                Ok(report) => {
                    for &metric in &theory_metrics {
                        let v = theory_metric(report, metric).unwrap();
                        rows.push(row("theory", "theory".into(), metric, v, "ok"));
                        summary.theory.insert(metric.name().into(), v);
                    }
                }
                Err(e) => {
                    for &metric in &theory_metrics {
                        rows.push(row("theory", "theory".into(), metric, f64::NAN, "failed"));
                    }
                    summary.theory_error = Some(e.clone());
                }
            }
        }
        summaries.push(summary);
    }

    let summary = SweepSummary {
        env,
        num_states: prep.mrp.num_states(),
        state_dim: prep.mrp.state_dim(),
        n,
        m,
        gamma: cfg.gamma,
        activation: cfg.activation.to_string(),
        dataset_seed: cfg.dataset_seed,
        instance_seeds: seeds,
        pathwise_adjusted: prep.adjusted,
        xi_min: prep.spectrum.xi_min,
        xi_max: prep.spectrum.xi_max,
        count_condition: prep.spectrum.count_condition,
        gram_jitter: prep.theory.spectrum().jitter(),
        points: summaries,
    };
    Ok(SweepOutput { rows, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SweepConfig {
        SweepConfig::from_toml_str(
            r#"
env = "synthetic"
num_states = 12
state_dim = 6
n = 40
gamma = 0.9
lambdas = [1e-3]
ratios = [0.5]
num_instances = 3
metrics = ["empirical_msbe", "true_msbe", "delta"]
"#,
        )
        .unwrap()
    }

    #[test]
    fn row_count_matches_schema() {
        let out = run_sweep(&small_cfg(), 2, 0).unwrap();
        let count = |kind: &str| out.rows.iter().filter(|r| r.kind == kind).count();
        assert_eq!(count("instance"), 6);
        assert_eq!(count("mean") + count("std"), 4);
        assert_eq!(count("theory"), 1);
        assert_eq!(count("failed_count"), 0);
    }

    #[test]
    fn mean_std_basics() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn seed_offset_shifts_seeds() {
        let out = run_sweep(&small_cfg(), 1, 10).unwrap();
        assert_eq!(out.summary.instance_seeds, vec![11, 12, 13]);
    }
}
