//! Drop sweeps: every drop runs each algorithm on each CSI case and reports
//! ergodic and UatF sum-rates on a held-out evaluation batch.
//!
//! A run is a pure function of its [`ExperimentConfig`]; drop `d` derives all
//! of its randomness from `seed ^ d`, and results are merged in drop order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamforming::PolicyParams;
use crate::channel::{sample_channels, split_batch, ChannelBatch};
use crate::metrics::{ergodic_rates, estimate_moments, nats_to_bits, uatf_rate};
use crate::optimizer::{
    longterm_lsfd, longterm_power_only, longterm_wmmse, shortterm_ergodic, OptimizationResult,
    OptimizerOptions,
};
use crate::scenario::{
    assign_clusters, build_csi_structure, compute_large_scale, generate_drop, CsiCase,
    LargeScaleCoefficients, ScenarioConfig,
};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    LongTermWmmse,
    PowerOnly,
    Lsfd,
    ShortTermWmmse,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::LongTermWmmse,
        Algorithm::PowerOnly,
        Algorithm::Lsfd,
        Algorithm::ShortTermWmmse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::LongTermWmmse => "long-term-wmmse",
            Algorithm::PowerOnly => "power-only",
            Algorithm::Lsfd => "lsfd",
            Algorithm::ShortTermWmmse => "short-term-wmmse",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    pub fn supports(self, case: CsiCase) -> bool {
        !(self == Algorithm::ShortTermWmmse && case == CsiCase::Distributed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weights {
    Unit,
    Custom(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub num_drops: usize,
    /// Channel realizations per drop, split into fitting and evaluation parts.
    pub samples_per_drop: usize,
    /// Share of the realizations held out for evaluation.
    pub eval_fraction: f64,
    pub algorithms: Vec<Algorithm>,
    pub cases: Vec<CsiCase>,
    pub weights: Weights,
    /// Where outputs go; not echoed into results so that they depend only on the run.
    #[serde(skip_serializing)]
    pub output_path: PathBuf,
    pub optimizer: OptimizerOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            num_drops: 300,
            samples_per_drop: 1000,
            eval_fraction: 0.5,
            algorithms: Algorithm::ALL.to_vec(),
            cases: CsiCase::ALL.to_vec(),
            weights: Weights::Unit,
            output_path: PathBuf::from("results"),
            optimizer: OptimizerOptions::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses without validating, so callers can apply overrides first.
    pub fn parse_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config = Self::parse_toml(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.optimizer
            .validate()
            .map_err(|e| Error::Config(format!("optimizer: {e}")))?;
        if self.num_drops == 0 {
            return Err(Error::Config("num_drops must be at least 1".into()));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(Error::Config(format!(
                "eval_fraction {} outside (0, 1)",
                self.eval_fraction
            )));
        }
        let fit = self.fit_samples();
        if fit == 0 || fit == self.samples_per_drop {
            return Err(Error::Config(format!(
                "{} samples per drop leave an empty fitting or evaluation batch",
                self.samples_per_drop
            )));
        }
        if self.algorithms.is_empty() || self.cases.is_empty() {
            return Err(Error::Config(
                "at least one algorithm and one case are required".into(),
            ));
        }
        if let Weights::Custom(w) = &self.weights {
            if w.len() != self.scenario.num_users || w.iter().any(|x| !(x.is_finite() && *x > 0.0))
            {
                return Err(Error::Config(format!(
                    "custom weights need {} positive entries",
                    self.scenario.num_users
                )));
            }
        }
        if self.jobs().is_empty() {
            return Err(Error::Config(
                "no supported (algorithm, case) pair selected".into(),
            ));
        }
        Ok(())
    }

    pub fn fit_samples(&self) -> usize {
        (self.samples_per_drop as f64 * (1.0 - self.eval_fraction)).floor() as usize
    }

    pub fn omega(&self) -> Vec<f64> {
        match &self.weights {
            Weights::Unit => vec![1.0; self.scenario.num_users],
            Weights::Custom(w) => w.clone(),
        }
    }

    /// Supported (algorithm, case) pairs in run order.
    pub fn jobs(&self) -> Vec<(Algorithm, CsiCase)> {
        let mut jobs = Vec::new();
        for &case in &self.cases {
            for &alg in &self.algorithms {
                if alg.supports(case) && !jobs.contains(&(alg, case)) {
                    jobs.push((alg, case));
                }
            }
        }
        jobs
    }

    /// Selected pairs that are not run, with the reason.
    pub fn skipped(&self) -> Vec<String> {
        let mut out = Vec::new();
        for &case in &self.cases {
            for &alg in &self.algorithms {
                if !alg.supports(case) {
                    out.push(format!(
                        "{} is not applicable to the {} case",
                        alg.name(),
                        case.name()
                    ));
                }
            }
        }
        out
    }

    /// Serving cluster size used for `case`.
    pub fn cluster_size(&self, case: CsiCase) -> usize {
        match case {
            CsiCase::SmallCells => 1,
            CsiCase::Centralized | CsiCase::Distributed => self.scenario.cluster_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub drop: u64,
    pub algorithm: Algorithm,
    pub case: CsiCase,
    pub ergodic_sum_rate_bits: f64,
    pub ergodic_sum_rate_std_err_bits: f64,
    /// Not reported for the short-term method, which has no long-term policy.
    pub uatf_sum_rate_bits: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Weighted UatF sum-rate on the fitting batch per iteration (nats).
    pub objective_trace: Vec<f64>,
    /// Optimized powers in mW; per-user averages for the short-term method.
    pub p_opt: Vec<f64>,
    pub policy: Option<PolicyParams>,
    #[serde(skip)]
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMetadata {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub code_version: String,
    pub rate_unit: String,
    pub power_unit: String,
    pub fit_samples: usize,
    pub eval_samples: usize,
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub metadata: ExperimentMetadata,
    pub rows: Vec<ResultRow>,
}

/// Per-drop inputs shared by all algorithms.
pub struct DropData {
    pub beta: Arc<LargeScaleCoefficients>,
    pub fit: ChannelBatch,
    pub eval: ChannelBatch,
}

pub fn prepare_drop(config: &ExperimentConfig, drop: u64) -> Result<DropData> {
    let scenario = &config.scenario;
    let geometry = generate_drop(scenario, drop)?;
    let beta = compute_large_scale(&geometry, scenario)?;
    let seed = rng::derive_seed(geometry.drop_seed, rng::TAG_CHANNELS);
    let batch = sample_channels(
        &beta,
        scenario.antennas_per_ap,
        config.samples_per_drop,
        seed,
    )?;
    let (fit, eval) = split_batch(&batch, 1.0 - config.eval_fraction)?;
    Ok(DropData {
        beta: Arc::new(beta),
        fit,
        eval,
    })
}

/// Algorithm output before conversion to bits.
struct Outcome {
    ergodic: f64,
    std_err: f64,
    uatf: Option<f64>,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
    p_opt: Vec<f64>,
    policy: Option<PolicyParams>,
}

fn evaluate_long_term(result: OptimizationResult, data: &DropData) -> Result<Outcome> {
    let p = result.p_opt.as_slice();
    let ergodic = ergodic_rates(&result.policy, &data.eval, p)?;
    let moments = estimate_moments(&result.policy, &data.eval)?;
    Ok(Outcome {
        ergodic: ergodic.sum_mean,
        std_err: ergodic.sum_std_err,
        uatf: Some((0..p.len()).map(|k| uatf_rate(&moments, p, k)).sum()),
        iterations: result.iterations,
        converged: result.converged,
        p_opt: p.to_vec(),
        policy: Some(result.policy.params().clone()),
        trace: result.objective_trace,
    })
}

/// Runs one algorithm on one case of a prepared drop.
pub fn run_job(
    config: &ExperimentConfig,
    data: &DropData,
    drop: u64,
    algorithm: Algorithm,
    case: CsiCase,
) -> Result<ResultRow> {
    let start = Instant::now();
    let omega = config.omega();
    let budget = config.scenario.power_budget_mw();
    let clusters = assign_clusters(&data.beta, config.cluster_size(case))?;
    let csi = Arc::new(build_csi_structure(
        case,
        clusters,
        config.scenario.num_aps,
    )?);
    let opts = &config.optimizer;
    let beta = data.beta.clone();
    let out = match algorithm {
        Algorithm::LongTermWmmse => evaluate_long_term(
            longterm_wmmse(beta, csi, &data.fit, &omega, budget, opts)?,
            data,
        )?,
        Algorithm::PowerOnly => evaluate_long_term(
            longterm_power_only(beta, csi, &data.fit, &omega, budget, opts)?,
            data,
        )?,
        Algorithm::Lsfd => evaluate_long_term(
            longterm_lsfd(beta, csi, &data.fit, &omega, budget, opts)?,
            data,
        )?,
        Algorithm::ShortTermWmmse => {
            let s = shortterm_ergodic(&data.eval, &csi, &omega, budget, opts)?;
            Outcome {
                ergodic: s.ergodic.sum_mean,
                std_err: s.ergodic.sum_std_err,
                uatf: None,
                iterations: s.max_iterations,
                converged: s.all_converged,
                trace: Vec::new(),
                p_opt: s.mean_power,
                policy: None,
            }
        }
    };
    Ok(ResultRow {
        drop,
        algorithm,
        case,
        ergodic_sum_rate_bits: nats_to_bits(out.ergodic),
        ergodic_sum_rate_std_err_bits: nats_to_bits(out.std_err),
        uatf_sum_rate_bits: out.uatf.map(nats_to_bits),
        iterations: out.iterations,
        converged: out.converged,
        objective_trace: out.trace,
        p_opt: out.p_opt,
        policy: out.policy,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let skipped = config.skipped();
    for reason in &skipped {
        log::warn!("skipping: {reason}");
    }
    let jobs = config.jobs();
    let per_drop: Vec<Vec<ResultRow>> = (0..config.num_drops as u64)
        .into_par_iter()
        .map(|drop| {
            let data = prepare_drop(config, drop)?;
            let rows = jobs
                .iter()
                .map(|&(alg, case)| run_job(config, &data, drop, alg, case))
                .collect::<Result<Vec<_>>>()?;
            log::info!("drop {drop} done");
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let fit_samples = config.fit_samples();
    Ok(ExperimentResult {
        metadata: ExperimentMetadata {
            config: config.clone(),
            seed: config.scenario.seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            rate_unit: "bit/s/Hz".into(),
            power_unit: "mW".into(),
            fit_samples,
            eval_samples: config.samples_per_drop - fit_samples,
            skipped,
        },
        rows: per_drop.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    Algorithm,
    Case,
    Both,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdfPoint {
    pub group: String,
    pub value_bits: f64,
    pub cdf_level: f64,
}

fn metric_of(row: &ResultRow, metric: &str) -> Result<Option<f64>> {
    match metric {
        "ergodic" => Ok(Some(row.ergodic_sum_rate_bits)),
        "uatf" => Ok(row.uatf_sum_rate_bits),
        other => Err(Error::Argument(format!(
            "unknown metric {other:?} (expected ergodic or uatf)"
        ))),
    }
}

fn group_of(row: &ResultRow, group_by: GroupBy) -> String {
    match group_by {
        GroupBy::Algorithm => row.algorithm.name().to_string(),
        GroupBy::Case => row.case.name().to_string(),
        GroupBy::Both => format!("{}/{}", row.algorithm.name(), row.case.name()),
    }
}

/// Values of `metric` per group, each sorted ascending.
pub fn grouped_values(
    result: &ExperimentResult,
    metric: &str,
    group_by: GroupBy,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for row in &result.rows {
        if let Some(v) = metric_of(row, metric)? {
            groups.entry(group_of(row, group_by)).or_default().push(v);
        }
    }
    for values in groups.values_mut() {
        values.sort_by(f64::total_cmp);
    }
    Ok(groups)
}

/// Empirical CDF per group: the `i`-th smallest of `n` values sits at `i / n`.
pub fn emit_cdf(
    result: &ExperimentResult,
    metric: &str,
    group_by: GroupBy,
) -> Result<Vec<CdfPoint>> {
    if result.rows.is_empty() {
        return Err(Error::Argument("result has no rows".into()));
    }
    let groups = grouped_values(result, metric, group_by)?;
    let mut points = Vec::new();
    for (group, values) in groups {
        let n = values.len() as f64;
        for (i, v) in values.into_iter().enumerate() {
            points.push(CdfPoint {
                group: group.clone(),
                value_bits: v,
                cdf_level: (i + 1) as f64 / n,
            });
        }
    }
    Ok(points)
}

pub fn cdf_to_csv(points: &[CdfPoint]) -> String {
    let mut out = String::from("group,value_bits,cdf_level\n");
    for p in points {
        writeln!(out, "{},{},{}", p.group, p.value_bits, p.cdf_level).expect("writing to a String");
    }
    out
}

/// Median of a sample (mean of the two middle values for even sizes).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

/// Writes `results.json`, `cdf_ergodic.csv`, `cdf_uatf.csv` and `timings.csv`
/// into `dir`. Only `timings.csv` depends on wall-clock time.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(result)?;
    json.push('\n');
    std::fs::write(dir.join("results.json"), json)?;
    for metric in ["ergodic", "uatf"] {
        let points = emit_cdf(result, metric, GroupBy::Both)?;
        std::fs::write(dir.join(format!("cdf_{metric}.csv")), cdf_to_csv(&points))?;
    }
    let mut timings = String::from("drop,algorithm,case,runtime_s\n");
    for row in &result.rows {
        writeln!(
            timings,
            "{},{},{},{:.6}",
            row.drop,
            row.algorithm.name(),
            row.case.name(),
            row.runtime_s
        )
        .expect("writing to a String");
    }
    std::fs::write(dir.join("timings.csv"), timings)?;
    Ok(())
}
