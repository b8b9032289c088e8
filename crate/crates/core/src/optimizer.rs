//! Long-term W-MMSE block coordinate ascent and its comparison methods.
//!
//! All long-term methods share one loop over a fixed fitting batch:
//!
//! 1. beamformer step at the current powers (strategy-specific), followed by
//!    a per-user scalar receive gain that minimizes each MSE,
//! 2. `d_k = 1 / MSE_k`,
//! 3. `p_k = min{(w_k d_k Re E[h_k^H v_k] / sum_j w_j d_j E|h_k^H v_j|^2)^2, P}`.
//!
//! The recorded objective is the UatF weighted sum-rate after step 1, which
//! never decreases from one iteration to the next.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamforming::{
    estimate_local_moments, fit_lsfd_weights, full_csi_clustered_mmse, BeamformerPolicy,
    BeamformerSample, Strategy,
};
use crate::channel::{ChannelBatch, ChannelSample};
use crate::metrics::{
    estimate_moments, instantaneous_rates, mse, optimal_gain, optimal_scaling_mse, summarize_rates,
    wsr_uatf, ErgodicEstimate, PowerVector, UatfMoments,
};
use crate::scenario::{CsiCase, CsiStructure, LargeScaleCoefficients};
use crate::{Error, Result, C64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialPower {
    FullPower,
    Custom(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerOptions {
    pub max_iters: usize,
    /// Stop once `|f_t - f_{t-1}| <= rel_tol |f_{t-1}|`.
    pub rel_tol: f64,
    pub initial_power: InitialPower,
    /// Keep the whole objective trace rather than only its last value.
    pub trace: bool,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            rel_tol: 1e-5,
            initial_power: InitialPower::FullPower,
            trace: true,
        }
    }
}

impl OptimizerOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Argument("max_iters must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) {
            return Err(Error::Argument("rel_tol must be positive".into()));
        }
        Ok(())
    }

    fn initial(&self, num_users: usize, budget: f64) -> Result<PowerVector> {
        match &self.initial_power {
            InitialPower::FullPower => PowerVector::full(num_users, budget),
            InitialPower::Custom(p) if p.len() == num_users => PowerVector::new(p.clone(), budget),
            InitialPower::Custom(p) => Err(Error::Argument(format!(
                "initial power has {} entries for {num_users} users",
                p.len()
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub p_opt: PowerVector,
    pub policy: BeamformerPolicy,
    pub d_final: Vec<f64>,
    /// UatF weighted sum-rate (nats) per iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Moments of `policy` on the fitting batch.
    pub moments: UatfMoments,
}

impl OptimizationResult {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("at least one iteration")
    }
}

/// `d_k = 1 / MSE_k`.
pub fn d_update(moments: &UatfMoments, p: &[f64]) -> Vec<f64> {
    (0..moments.num_users())
        .map(|k| 1.0 / mse(moments, p, k))
        .collect()
}

/// Closed-form maximizer of the W-MMSE objective over each `p_k in [0, P]`.
///
/// `Re E[h_k^H v_k]` enters the numerator; with the receive gain applied by
/// the beamformer step it equals `|E[h_k^H v_k]|`.
pub fn p_update(moments: &UatfMoments, d: &[f64], omega: &[f64], budget: f64) -> Vec<f64> {
    let k = moments.num_users();
    (0..k)
        .map(|u| {
            let num = omega[u] * d[u] * moments.mean[u].re.max(0.0);
            if num == 0.0 {
                return 0.0;
            }
            let den: f64 = (0..k)
                .map(|j| omega[j] * d[j] * moments.cross[(u, j)])
                .sum();
            if den <= 0.0 {
                return budget;
            }
            (num / den).powi(2).min(budget)
        })
        .collect()
}

fn weighted_scaled_mse(base: &UatfMoments, p: &[f64], d: &[f64], omega: &[f64]) -> f64 {
    (0..base.num_users())
        .map(|k| omega[k] * d[k] * optimal_scaling_mse(base, p, k))
        .sum()
}

/// A beamformer step: the unit-gain policy and its moments on the batch.
struct Candidate {
    policy: BeamformerPolicy,
    base: UatfMoments,
}

fn check_weights(omega: &[f64], num_users: usize) -> Result<()> {
    if omega.len() != num_users {
        return Err(Error::Argument(format!(
            "{} weights for {num_users} users",
            omega.len()
        )));
    }
    if omega.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::Argument("user weights must be positive".into()));
    }
    Ok(())
}

fn ascend<F>(
    omega: &[f64],
    budget: f64,
    options: &OptimizerOptions,
    num_users: usize,
    mut propose: F,
) -> Result<OptimizationResult>
where
    F: FnMut(&[f64]) -> Result<Candidate>,
{
    options.validate()?;
    check_weights(omega, num_users)?;
    let mut p = options.initial(num_users, budget)?.into_vec();
    let mut d: Option<Vec<f64>> = None;
    let mut current: Option<Candidate> = None;
    let mut trace = Vec::new();
    let mut last: Option<f64> = None;
    let mut converged = false;
    let mut iterations = 0;

    loop {
        iterations += 1;
        let candidate = propose(&p)?;
        // A new beamformer is kept only if it does not increase the weighted
        // MSE at the current (p, d); this makes the trace monotone on a
        // finite batch even where the filter is not the exact sample minimizer.
        let mut chosen = match (current.take(), &d) {
            (Some(prev), Some(d))
                if weighted_scaled_mse(&prev.base, &p, d, omega)
                    < weighted_scaled_mse(&candidate.base, &p, d, omega) =>
            {
                prev
            }
            _ => candidate,
        };
        let gains: Vec<C64> = (0..num_users)
            .map(|k| optimal_gain(&chosen.base, &p, k))
            .collect();
        chosen.policy.set_receive_gains(gains.clone())?;
        let moments = chosen.base.scaled(&gains);
        let f = wsr_uatf(&moments, &p, omega);
        if let Some(prev) = last {
            converged = (f - prev).abs() <= options.rel_tol * prev.abs();
        }
        last = Some(f);
        if options.trace || trace.is_empty() {
            trace.push(f);
        } else {
            trace[0] = f;
        }
        log::trace!("iteration {iterations}: objective {f:.9}");
        let done = converged || iterations >= options.max_iters;
        if done {
            let d_final = d_update(&moments, &p);
            return Ok(OptimizationResult {
                p_opt: PowerVector::new(p, budget)?,
                policy: chosen.policy,
                d_final,
                objective_trace: trace,
                iterations,
                converged,
                moments,
            });
        }
        let d_new = d_update(&moments, &p);
        p = p_update(&moments, &d_new, omega, budget);
        d = Some(d_new);
        current = Some(chosen);
    }
}

/// Long-term joint power control and beamforming: the beamformer step
/// refits the architecture's MMSE filter at the current powers.
pub fn longterm_wmmse(
    beta: Arc<LargeScaleCoefficients>,
    csi: Arc<CsiStructure>,
    batch: &ChannelBatch,
    omega: &[f64],
    budget: f64,
    options: &OptimizerOptions,
) -> Result<OptimizationResult> {
    let strategy = Strategy::for_case(csi.case);
    let n = batch.antennas_per_ap();
    let k = csi.num_users();
    ascend(omega, budget, options, k, |p| {
        let mut policy = BeamformerPolicy::new(strategy, csi.clone(), beta.clone(), n, p.to_vec())?;
        let base = if strategy == Strategy::LocalMmseWithLsfd {
            let local = estimate_local_moments(&policy, batch)?;
            let weights = fit_lsfd_weights(&local, p)?;
            let base = local.combine(&weights);
            policy.set_lsfd_weights(weights)?;
            base
        } else {
            estimate_moments(&policy, batch)?
        };
        Ok(Candidate { policy, base })
    })
}

/// Long-term power control with the architecture's MMSE filter frozen at
/// full power; only the powers and the scalar receive gains move.
pub fn longterm_power_only(
    beta: Arc<LargeScaleCoefficients>,
    csi: Arc<CsiStructure>,
    batch: &ChannelBatch,
    omega: &[f64],
    budget: f64,
    options: &OptimizerOptions,
) -> Result<OptimizationResult> {
    let k = csi.num_users();
    let policy = BeamformerPolicy::fixed_full_power(csi, beta, batch.antennas_per_ap(), budget)?;
    let base = estimate_moments(&policy, batch)?;
    ascend(omega, budget, options, k, |_| {
        Ok(Candidate {
            policy: policy.clone(),
            base: base.clone(),
        })
    })
}

/// Long-term power control with LSFD over local MMSE combiners frozen at
/// full power; the LSFD weights are refit at every iteration.
pub fn longterm_lsfd(
    beta: Arc<LargeScaleCoefficients>,
    csi: Arc<CsiStructure>,
    batch: &ChannelBatch,
    omega: &[f64],
    budget: f64,
    options: &OptimizerOptions,
) -> Result<OptimizationResult> {
    let k = csi.num_users();
    let n = batch.antennas_per_ap();
    let frozen = BeamformerPolicy::new(Strategy::LocalMmseWithLsfd, csi, beta, n, vec![budget; k])?;
    let local = estimate_local_moments(&frozen, batch)?;
    ascend(omega, budget, options, k, |p| {
        let weights = fit_lsfd_weights(&local, p)?;
        let base = local.combine(&weights);
        let mut policy = frozen.clone();
        policy.set_lsfd_weights(weights)?;
        Ok(Candidate { policy, base })
    })
}

/// Output of [`shortterm_wmmse`] for one realization.
#[derive(Debug, Clone)]
pub struct ShortTermSolution {
    pub p: Vec<f64>,
    pub v: BeamformerSample,
    /// Instantaneous weighted sum-rate (nats) per iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn shortterm_supported(csi: &CsiStructure) -> Result<()> {
    if csi.case == CsiCase::Distributed {
        return Err(Error::UnsupportedCase {
            algorithm: "short-term WMMSE",
            case: CsiCase::Distributed.name(),
        });
    }
    Ok(())
}

/// Per-realization WMMSE with instantaneous CSI on the cluster antennas.
pub fn shortterm_wmmse(
    h: &ChannelSample,
    csi: &CsiStructure,
    antennas_per_ap: usize,
    omega: &[f64],
    budget: f64,
    options: &OptimizerOptions,
) -> Result<ShortTermSolution> {
    shortterm_supported(csi)?;
    options.validate()?;
    let k = csi.num_users();
    check_weights(omega, k)?;
    if h.shape() != (csi.num_aps() * antennas_per_ap, k) {
        return Err(Error::Input(
            "channel shape does not match the CSI structure".into(),
        ));
    }
    let mut p = options.initial(k, budget)?.into_vec();
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let v = full_csi_clustered_mmse(h, &p, csi, antennas_per_ap)?;
        let m = UatfMoments::from_sample(h, &v);
        let f = wsr_uatf(&m, &p, omega);
        let converged = trace
            .last()
            .is_some_and(|&prev: &f64| (f - prev).abs() <= options.rel_tol * prev.abs());
        trace.push(f);
        if converged || iterations >= options.max_iters {
            if !options.trace {
                trace = vec![f];
            }
            return Ok(ShortTermSolution {
                p,
                v,
                trace,
                iterations,
                converged,
            });
        }
        let d = d_update(&m, &p);
        p = p_update(&m, &d, omega, budget);
    }
}

/// Batch summary of [`shortterm_wmmse`] run on every realization.
#[derive(Debug, Clone)]
pub struct ShortTermSummary {
    pub ergodic: ErgodicEstimate,
    pub mean_power: Vec<f64>,
    pub max_iterations: usize,
    pub all_converged: bool,
}

/// Runs the short-term method on each sample of `batch` and averages the
/// instantaneous rates.
pub fn shortterm_ergodic(
    batch: &ChannelBatch,
    csi: &CsiStructure,
    omega: &[f64],
    budget: f64,
    options: &OptimizerOptions,
) -> Result<ShortTermSummary> {
    shortterm_supported(csi)?;
    let n = batch.antennas_per_ap();
    let k = csi.num_users();
    let solutions: Vec<ShortTermSolution> = batch
        .samples()
        .par_iter()
        .map(|h| {
            let quiet = OptimizerOptions {
                trace: false,
                ..options.clone()
            };
            shortterm_wmmse(h, csi, n, omega, budget, &quiet)
        })
        .collect::<Result<_>>()?;
    let rates: Vec<Vec<f64>> = batch
        .samples()
        .iter()
        .zip(&solutions)
        .map(|(h, s)| instantaneous_rates(h, &s.v, &s.p))
        .collect();
    let mut mean_power = vec![0.0; k];
    for s in &solutions {
        for (acc, p) in mean_power.iter_mut().zip(&s.p) {
            *acc += p / solutions.len() as f64;
        }
    }
    Ok(ShortTermSummary {
        ergodic: summarize_rates(&rates, k),
        mean_power,
        max_iterations: solutions.iter().map(|s| s.iterations).max().unwrap_or(0),
        all_converged: solutions.iter().all(|s| s.converged),
    })
}
