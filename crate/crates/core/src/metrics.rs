//! Use-and-then-forget (UatF) statistics, MSE, rates and the W-MMSE objective.
//!
//! Everything here is computed from [`UatfMoments`]:
//!
//! - `mean[k]  = E[h_k^H v_k]`
//! - `cross[(j, k)] = E[|h_j^H v_k|^2]`
//! - `norm[k]  = E[||v_k||^2]`
//!
//! estimated as plain sample averages over a [`ChannelBatch`]. Rates are in
//! nats; convert with [`nats_to_bits`] for reporting.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamforming::{BeamformerPolicy, BeamformerSample};
use crate::channel::{ChannelBatch, ChannelSample};
use crate::{Error, Result, C64};

/// Transmit powers with a per-user budget, `0 <= p_k <= P`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerVector {
    values: Vec<f64>,
    budget: f64,
}

impl PowerVector {
    pub fn new(values: Vec<f64>, budget: f64) -> Result<Self> {
        if !(budget > 0.0 && budget.is_finite()) {
            return Err(Error::Argument(format!(
                "power budget must be positive (got {budget})"
            )));
        }
        if let Some(p) = values.iter().find(|p| !(**p >= 0.0 && **p <= budget)) {
            return Err(Error::Argument(format!("power {p} outside [0, {budget}]")));
        }
        Ok(Self { values, budget })
    }

    pub fn full(num_users: usize, budget: f64) -> Result<Self> {
        Self::new(vec![budget; num_users], budget)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UatfMoments {
    pub mean: Vec<C64>,
    pub cross: DMatrix<f64>,
    pub norm: Vec<f64>,
    pub sample_count: usize,
}

impl UatfMoments {
    pub fn zeros(num_users: usize) -> Self {
        Self {
            mean: vec![C64::new(0.0, 0.0); num_users],
            cross: DMatrix::zeros(num_users, num_users),
            norm: vec![0.0; num_users],
            sample_count: 0,
        }
    }

    pub fn num_users(&self) -> usize {
        self.mean.len()
    }

    /// Moments of `v_k -> g_k v_k`.
    pub fn scaled(&self, gains: &[C64]) -> Self {
        let mut out = self.clone();
        for (k, g) in gains.iter().enumerate() {
            let g2 = g.norm_sqr();
            out.mean[k] *= *g;
            out.norm[k] *= g2;
            for j in 0..self.num_users() {
                out.cross[(j, k)] *= g2;
            }
        }
        out
    }

    /// Instantaneous quantities of one realization.
    pub fn from_sample(h: &ChannelSample, v: &BeamformerSample) -> Self {
        let mut m = Self::zeros(h.ncols());
        m.add_sample(h, v);
        m
    }

    fn add_sample(&mut self, h: &ChannelSample, v: &BeamformerSample) {
        let g = h.adjoint() * v;
        let k = h.ncols();
        for u in 0..k {
            self.mean[u] += g[(u, u)];
            self.norm[u] += v.column(u).norm_squared();
            for j in 0..k {
                self.cross[(j, u)] += g[(j, u)].norm_sqr();
            }
        }
        self.sample_count += 1;
    }

    fn merge(&mut self, other: &Self) {
        for u in 0..self.num_users() {
            self.mean[u] += other.mean[u];
            self.norm[u] += other.norm[u];
        }
        self.cross += &other.cross;
        self.sample_count += other.sample_count;
    }
}

/// Samples reduced sequentially per chunk; chunk results are merged in order
/// so estimates do not depend on the number of worker threads.
const CHUNK: usize = 16;

pub fn estimate_moments(policy: &BeamformerPolicy, batch: &ChannelBatch) -> Result<UatfMoments> {
    policy.check_batch(batch)?;
    let k = policy.num_users();
    let partials: Vec<UatfMoments> = batch
        .samples()
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = UatfMoments::zeros(k);
            for h in chunk {
                acc.add_sample(h, &policy.evaluate_unchecked(h));
            }
            acc
        })
        .collect();
    let mut total = UatfMoments::zeros(k);
    for part in &partials {
        total.merge(part);
    }
    let s = total.sample_count as f64;
    total.mean.iter_mut().for_each(|x| *x /= s);
    total.norm.iter_mut().for_each(|x| *x /= s);
    total.cross /= s;
    Ok(total)
}

/// `sum_j p_j E|h_j^H v_k|^2 + E||v_k||^2`.
fn total_power(m: &UatfMoments, p: &[f64], k: usize) -> f64 {
    (0..m.num_users())
        .map(|j| p[j] * m.cross[(j, k)])
        .sum::<f64>()
        + m.norm[k]
}

/// `E|x_k - v_k^H y|^2`, expanded in terms of the moments.
pub fn mse(m: &UatfMoments, p: &[f64], k: usize) -> f64 {
    total_power(m, p, k) - 2.0 * p[k].sqrt() * m.mean[k].re + 1.0
}

pub fn uatf_sinr(m: &UatfMoments, p: &[f64], k: usize) -> f64 {
    let signal = p[k] * m.mean[k].norm_sqr();
    let total = total_power(m, p, k);
    if signal == 0.0 {
        return 0.0;
    }
    // p_k Var(h_k^H v_k) + sum_{j != k} p_j E|h_j^H v_k|^2 + E||v_k||^2
    let interference = total - signal;
    if interference <= 0.0 {
        return f64::INFINITY;
    }
    signal / interference
}

pub fn uatf_rate(m: &UatfMoments, p: &[f64], k: usize) -> f64 {
    uatf_sinr(m, p, k).ln_1p()
}

pub fn wsr_uatf(m: &UatfMoments, p: &[f64], omega: &[f64]) -> f64 {
    omega
        .iter()
        .enumerate()
        .map(|(k, w)| w * uatf_rate(m, p, k))
        .sum()
}

/// `sum_k omega_k (ln d_k - d_k MSE_k)`.
pub fn wmmse_objective(m: &UatfMoments, p: &[f64], d: &[f64], omega: &[f64]) -> f64 {
    omega
        .iter()
        .enumerate()
        .map(|(k, w)| w * (d[k].ln() - d[k] * mse(m, p, k)))
        .sum()
}

/// `inf over scalar beta of MSE_k(beta v_k)`.
pub fn optimal_scaling_mse(m: &UatfMoments, p: &[f64], k: usize) -> f64 {
    let total = total_power(m, p, k);
    if total == 0.0 {
        return 1.0;
    }
    1.0 - p[k] * m.mean[k].norm_sqr() / total
}

/// The scalar `beta` attaining [`optimal_scaling_mse`]:
/// `sqrt(p_k) conj(E[h_k^H v_k]) / (sum_j p_j E|h_j^H v_k|^2 + E||v_k||^2)`.
pub fn optimal_gain(m: &UatfMoments, p: &[f64], k: usize) -> C64 {
    let total = total_power(m, p, k);
    if total == 0.0 {
        return C64::new(0.0, 0.0);
    }
    m.mean[k].conj() * (p[k].sqrt() / total)
}

pub fn nats_to_bits(x: f64) -> f64 {
    x / std::f64::consts::LN_2
}

/// Instantaneous rates `ln(1 + SINR_k^inst)` of one realization; users with
/// a zero beamformer get rate 0.
pub fn instantaneous_rates(h: &ChannelSample, v: &BeamformerSample, p: &[f64]) -> Vec<f64> {
    let g = h.adjoint() * v;
    let k = h.ncols();
    (0..k)
        .map(|u| {
            let noise = v.column(u).norm_squared();
            if noise == 0.0 {
                return 0.0;
            }
            let interference: f64 = (0..k)
                .filter(|&j| j != u)
                .map(|j| p[j] * g[(j, u)].norm_sqr())
                .sum::<f64>()
                + noise;
            (p[u] * g[(u, u)].norm_sqr() / interference).ln_1p()
        })
        .collect()
}

/// Monte Carlo estimate of ergodic rates (nats) with standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicEstimate {
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
    pub sum_mean: f64,
    pub sum_std_err: f64,
    pub sample_count: usize,
}

/// Mean and standard error of per-sample rate vectors, summed in sample order.
pub fn summarize_rates(per_sample: &[Vec<f64>], num_users: usize) -> ErgodicEstimate {
    let s = per_sample.len() as f64;
    let mut sum = vec![0.0; num_users];
    let mut total = Vec::with_capacity(per_sample.len());
    for rates in per_sample {
        for (acc, r) in sum.iter_mut().zip(rates) {
            *acc += r;
        }
        total.push(rates.iter().sum::<f64>());
    }
    let mean: Vec<f64> = sum.iter().map(|x| x / s).collect();
    let std_err = |values: &mut dyn Iterator<Item = f64>, mean: f64| {
        if per_sample.len() < 2 {
            return 0.0;
        }
        let ss: f64 = values.map(|x| (x - mean).powi(2)).sum();
        (ss / (s - 1.0) / s).sqrt()
    };
    let sum_mean = total.iter().sum::<f64>() / s;
    ErgodicEstimate {
        std_err: (0..num_users)
            .map(|u| std_err(&mut per_sample.iter().map(|r| r[u]), mean[u]))
            .collect(),
        sum_std_err: std_err(&mut total.iter().copied(), sum_mean),
        mean,
        sum_mean,
        sample_count: per_sample.len(),
    }
}

pub fn ergodic_rates(
    policy: &BeamformerPolicy,
    batch: &ChannelBatch,
    p: &[f64],
) -> Result<ErgodicEstimate> {
    policy.check_batch(batch)?;
    if p.len() != policy.num_users() {
        return Err(Error::Input(
            "power vector length does not match the policy".into(),
        ));
    }
    let per_sample: Vec<Vec<f64>> = batch
        .samples()
        .par_iter()
        .map(|h| instantaneous_rates(h, &policy.evaluate_unchecked(h), p))
        .collect();
    Ok(summarize_rates(&per_sample, policy.num_users()))
}

/// Ergodic rate of user `k` in nats.
pub fn ergodic_rate(
    policy: &BeamformerPolicy,
    batch: &ChannelBatch,
    p: &[f64],
    k: usize,
) -> Result<f64> {
    if k >= policy.num_users() {
        return Err(Error::Argument(format!("user index {k} out of range")));
    }
    Ok(ergodic_rates(policy, batch, p)?.mean[k])
}
