//! Beamformer families under information constraints.
//!
//! A beamformer is a *function* of instantaneous CSI. What the optimizer
//! stores are its long-term parameters: the power vector frozen into the MMSE
//! filters, optional large-scale fading decoding (LSFD) weights per serving
//! AP, and a scalar receive gain per user. [`BeamformerPolicy::evaluate`]
//! turns those parameters plus one channel realization into the `M x K`
//! matrix `V = [v_1, ..., v_K]`.
//!
//! Every filter solves a Hermitian positive-definite system regularized by
//! the identity (noise). Channels that the processing unit does not observe
//! enter only through their second-order statistics `p_j beta_{l,j} I_N`,
//! which makes the filters the conditional MMSE estimators under the
//! uncorrelated Rayleigh model.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelBatch, ChannelSample};
use crate::linalg::{solve_hpd, solve_pinv};
use crate::scenario::{CsiCase, CsiStructure, LargeScaleCoefficients};
use crate::{Error, Result, C64};

/// `M x K` beamforming matrix for one realization, column `k` is `v_k`.
pub type BeamformerSample = DMatrix<C64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// MMSE over the antennas of the serving cluster, using all CSI pooled in it.
    CentralizedClusteredMmse,
    /// Per-AP MMSE from local CSI, stacked with unit weights.
    LocalMmse,
    /// Per-AP MMSE from local CSI, combined with long-term LSFD weights.
    LocalMmseWithLsfd,
    /// The architecture's MMSE filter frozen at full power `p = 1 P`.
    FixedFullPowerMmse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Filter {
    Clustered,
    Local,
}

impl Strategy {
    /// The MSE-minimizing family this crate uses for each architecture.
    pub fn for_case(case: CsiCase) -> Self {
        match case {
            CsiCase::Centralized => Strategy::CentralizedClusteredMmse,
            CsiCase::Distributed => Strategy::LocalMmseWithLsfd,
            CsiCase::SmallCells => Strategy::LocalMmse,
        }
    }

    fn filter(self, case: CsiCase) -> Filter {
        match self {
            Strategy::CentralizedClusteredMmse => Filter::Clustered,
            Strategy::LocalMmse | Strategy::LocalMmseWithLsfd => Filter::Local,
            Strategy::FixedFullPowerMmse => match case {
                CsiCase::Centralized => Filter::Clustered,
                CsiCase::Distributed | CsiCase::SmallCells => Filter::Local,
            },
        }
    }
}

/// Serializable long-term parameters of a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub strategy: Strategy,
    pub filter_powers: Vec<f64>,
    pub receive_gains: Vec<C64>,
    /// `lsfd_weights[k][q]` weights the block of the `q`-th AP in `L_k`.
    pub lsfd_weights: Option<Vec<Vec<C64>>>,
}

#[derive(Debug, Clone)]
pub struct BeamformerPolicy {
    params: PolicyParams,
    csi: Arc<CsiStructure>,
    beta: Arc<LargeScaleCoefficients>,
    antennas_per_ap: usize,
}

impl BeamformerPolicy {
    /// A policy whose MMSE filters are built with `filter_powers`, unit
    /// receive gains and no LSFD weights.
    pub fn new(
        strategy: Strategy,
        csi: Arc<CsiStructure>,
        beta: Arc<LargeScaleCoefficients>,
        antennas_per_ap: usize,
        filter_powers: Vec<f64>,
    ) -> Result<Self> {
        let k = csi.num_users();
        if beta.num_users() != k || beta.num_aps() != csi.num_aps() {
            return Err(Error::Input(
                "large-scale gains do not match the CSI structure".into(),
            ));
        }
        if filter_powers.len() != k {
            return Err(Error::Input(format!(
                "expected {k} filter powers, got {}",
                filter_powers.len()
            )));
        }
        if filter_powers.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Input(
                "filter powers must be finite and nonnegative".into(),
            ));
        }
        if antennas_per_ap == 0 {
            return Err(Error::Input("antennas per AP must be at least 1".into()));
        }
        Ok(Self {
            params: PolicyParams {
                strategy,
                filter_powers,
                receive_gains: vec![C64::new(1.0, 0.0); k],
                lsfd_weights: None,
            },
            csi,
            beta,
            antennas_per_ap,
        })
    }

    /// The full-power baseline filter of the architecture in `csi`.
    pub fn fixed_full_power(
        csi: Arc<CsiStructure>,
        beta: Arc<LargeScaleCoefficients>,
        antennas_per_ap: usize,
        budget: f64,
    ) -> Result<Self> {
        let k = csi.num_users();
        Self::new(
            Strategy::FixedFullPowerMmse,
            csi,
            beta,
            antennas_per_ap,
            vec![budget; k],
        )
    }

    /// Restores a policy from serialized parameters.
    pub fn from_params(
        params: PolicyParams,
        csi: Arc<CsiStructure>,
        beta: Arc<LargeScaleCoefficients>,
        antennas_per_ap: usize,
    ) -> Result<Self> {
        let mut policy = Self::new(
            params.strategy,
            csi,
            beta,
            antennas_per_ap,
            params.filter_powers.clone(),
        )?;
        policy.set_receive_gains(params.receive_gains)?;
        if let Some(w) = params.lsfd_weights {
            policy.set_lsfd_weights(w)?;
        }
        Ok(policy)
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn strategy(&self) -> Strategy {
        self.params.strategy
    }

    pub fn csi(&self) -> &CsiStructure {
        &self.csi
    }

    pub fn beta(&self) -> &LargeScaleCoefficients {
        &self.beta
    }

    pub fn antennas_per_ap(&self) -> usize {
        self.antennas_per_ap
    }

    pub fn num_users(&self) -> usize {
        self.csi.num_users()
    }

    pub fn set_receive_gains(&mut self, gains: Vec<C64>) -> Result<()> {
        if gains.len() != self.num_users()
            || gains
                .iter()
                .any(|g| !(g.re.is_finite() && g.im.is_finite()))
        {
            return Err(Error::Input(
                "receive gains must be finite, one per user".into(),
            ));
        }
        self.params.receive_gains = gains;
        Ok(())
    }

    pub fn set_lsfd_weights(&mut self, weights: Vec<Vec<C64>>) -> Result<()> {
        let ok = weights.len() == self.num_users()
            && weights
                .iter()
                .zip(&self.csi.serving_sets)
                .all(|(w, set)| w.len() == set.len());
        if !ok {
            return Err(Error::Input(
                "LSFD weights must have one entry per serving AP".into(),
            ));
        }
        self.params.lsfd_weights = Some(weights);
        Ok(())
    }

    fn filter(&self) -> Filter {
        self.params.strategy.filter(self.csi.case)
    }

    fn check_shape(&self, h: &ChannelSample) -> Result<()> {
        let m = self.csi.num_aps() * self.antennas_per_ap;
        if h.shape() != (m, self.num_users()) {
            return Err(Error::Input(format!(
                "channel is {:?}, policy expects {m} x {}",
                h.shape(),
                self.num_users()
            )));
        }
        Ok(())
    }

    fn check_fitted(&self) -> Result<()> {
        if self.params.strategy == Strategy::LocalMmseWithLsfd && self.params.lsfd_weights.is_none()
        {
            return Err(Error::State("LSFD weights have not been fitted".into()));
        }
        Ok(())
    }

    /// Checks a whole batch once so that per-sample evaluation can skip it.
    pub fn check_batch(&self, batch: &ChannelBatch) -> Result<()> {
        self.check_fitted()?;
        if batch.antennas_per_ap() != self.antennas_per_ap {
            return Err(Error::Input(
                "batch and policy disagree on antennas per AP".into(),
            ));
        }
        for h in batch.samples() {
            self.check_shape(h)?;
            check_finite(h)?;
        }
        Ok(())
    }

    /// Maps one channel realization to beamforming vectors.
    pub fn evaluate(&self, h: &ChannelSample) -> Result<BeamformerSample> {
        self.check_fitted()?;
        self.check_shape(h)?;
        check_finite(h)?;
        Ok(self.evaluate_unchecked(h))
    }

    /// The unit-gain, unit-weight filter output.
    pub(crate) fn raw_filter(&self, h: &ChannelSample) -> BeamformerSample {
        let p = &self.params.filter_powers;
        match self.filter() {
            Filter::Clustered => clustered(h, p, &self.csi, Some(&self.beta), self.antennas_per_ap),
            Filter::Local => {
                let mut v = DMatrix::zeros(h.nrows(), h.ncols());
                for l in 0..self.csi.num_aps() {
                    for (k, block) in
                        local_blocks(h, p, &self.csi, &self.beta, self.antennas_per_ap, l)
                    {
                        v.view_mut((l * self.antennas_per_ap, k), (self.antennas_per_ap, 1))
                            .copy_from(&block);
                    }
                }
                v
            }
        }
    }

    pub(crate) fn evaluate_unchecked(&self, h: &ChannelSample) -> BeamformerSample {
        let mut v = self.raw_filter(h);
        let n = self.antennas_per_ap;
        if let (Some(weights), Strategy::LocalMmseWithLsfd) =
            (&self.params.lsfd_weights, self.params.strategy)
        {
            for (k, w) in weights.iter().enumerate() {
                for (&l, &wq) in self.csi.serving_sets[k].iter().zip(w) {
                    let mut block = v.view_mut((l * n, k), (n, 1));
                    block *= wq;
                }
            }
        }
        for (k, &g) in self.params.receive_gains.iter().enumerate() {
            if g != C64::new(1.0, 0.0) {
                let mut col = v.column_mut(k);
                col *= g;
            }
        }
        v
    }
}

fn check_finite(h: &ChannelSample) -> Result<()> {
    if h.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::Input("channel contains non-finite entries".into()));
    }
    Ok(())
}

fn check_powers(p: &[f64], k: usize) -> Result<()> {
    if p.len() != k || p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::Input(format!(
            "power vector must hold {k} finite nonnegative entries"
        )));
    }
    Ok(())
}

/// Clustered MMSE for every user. With `beta = Some(_)` only CSI visible to
/// the cluster is used and the rest enters through its statistics; with
/// `None` the cluster sees every channel on its antennas.
fn clustered(
    h: &ChannelSample,
    p: &[f64],
    csi: &CsiStructure,
    beta: Option<&LargeScaleCoefficients>,
    n: usize,
) -> BeamformerSample {
    let (m, num_users) = h.shape();
    let mut v = DMatrix::zeros(m, num_users);
    for k in 0..num_users {
        if p[k] == 0.0 {
            continue;
        }
        let aps = &csi.serving_sets[k];
        let dim = aps.len() * n;
        let mut a = DMatrix::<C64>::identity(dim, dim);
        let mut x = DVector::<C64>::zeros(dim);
        for j in 0..num_users {
            if p[j] == 0.0 {
                continue;
            }
            let mut any_known = false;
            for (q, &l) in aps.iter().enumerate() {
                let known = beta.is_none() || csi.visible_to(k, l, j);
                for i in 0..n {
                    x[q * n + i] = if known {
                        h[(l * n + i, j)]
                    } else {
                        C64::new(0.0, 0.0)
                    };
                }
                if known {
                    any_known = true;
                } else if let Some(beta) = beta {
                    let var = p[j] * beta.get(l, j);
                    for i in 0..n {
                        a[(q * n + i, q * n + i)] += var;
                    }
                }
            }
            if any_known {
                a.gerc(C64::new(p[j], 0.0), &x, &x, C64::new(1.0, 0.0));
            }
        }
        let rhs = DVector::from_fn(dim, |r, _| {
            let (q, i) = (r / n, r % n);
            h[(aps[q] * n + i, k)] * p[k].sqrt()
        });
        let sol = solve_hpd(a, &rhs).expect("identity-regularized matrix is positive definite");
        for (q, &l) in aps.iter().enumerate() {
            for i in 0..n {
                v[(l * n + i, k)] = sol[q * n + i];
            }
        }
    }
    v
}

/// Per-AP MMSE blocks `(user, v_{l,k})` for the users served by AP `l`.
fn local_blocks(
    h: &ChannelSample,
    p: &[f64],
    csi: &CsiStructure,
    beta: &LargeScaleCoefficients,
    n: usize,
    l: usize,
) -> Vec<(usize, DVector<C64>)> {
    let served = &csi.knowledge_mask[l];
    if served.iter().all(|&k| p[k] == 0.0) {
        return served.iter().map(|&k| (k, DVector::zeros(n))).collect();
    }
    let rows = l * n..(l + 1) * n;
    let mut a = DMatrix::<C64>::identity(n, n);
    for j in 0..csi.num_users() {
        if p[j] == 0.0 {
            continue;
        }
        if csi.serves(l, j) {
            let x = DVector::from_fn(n, |i, _| h[(rows.start + i, j)]);
            a.gerc(C64::new(p[j], 0.0), &x, &x, C64::new(1.0, 0.0));
        } else {
            let var = p[j] * beta.get(l, j);
            for i in 0..n {
                a[(i, i)] += var;
            }
        }
    }
    let chol = a
        .cholesky()
        .expect("identity-regularized matrix is positive definite");
    served
        .iter()
        .map(|&k| {
            if p[k] == 0.0 {
                return (k, DVector::zeros(n));
            }
            let rhs = DVector::from_fn(n, |i, _| h[(rows.start + i, k)] * p[k].sqrt());
            (k, chol.solve(&rhs))
        })
        .collect()
}

/// Clustered MMSE beamformers: for each user `k`,
/// `v_k = (sum_j p_j E[h_j h_j^H | CSI of L_k] + I)^{-1} h_k sqrt(p_k)` on the
/// antennas of `L_k`, zero elsewhere.
pub fn centralized_mmse(
    h: &ChannelSample,
    p: &[f64],
    csi: &CsiStructure,
    beta: &LargeScaleCoefficients,
    antennas_per_ap: usize,
) -> Result<BeamformerSample> {
    check_finite(h)?;
    check_powers(p, h.ncols())?;
    Ok(clustered(h, p, csi, Some(beta), antennas_per_ap))
}

/// Clustered MMSE that sees every channel on the cluster antennas, i.e. the
/// per-realization minimizer of `||P^{1/2} H^H v - e_k||^2 + ||v||^2` under the
/// cluster's structural zeros.
pub fn full_csi_clustered_mmse(
    h: &ChannelSample,
    p: &[f64],
    csi: &CsiStructure,
    antennas_per_ap: usize,
) -> Result<BeamformerSample> {
    check_finite(h)?;
    check_powers(p, h.ncols())?;
    Ok(clustered(h, p, csi, None, antennas_per_ap))
}

/// Local MMSE blocks of AP `ap`, built from the channels it acquires.
pub fn local_mmse(
    h: &ChannelSample,
    p: &[f64],
    csi: &CsiStructure,
    beta: &LargeScaleCoefficients,
    antennas_per_ap: usize,
    ap: usize,
) -> Result<Vec<(usize, DVector<C64>)>> {
    if ap >= csi.num_aps() {
        return Err(Error::Argument(format!("AP index {ap} out of range")));
    }
    check_finite(h)?;
    check_powers(p, h.ncols())?;
    Ok(local_blocks(h, p, csi, beta, antennas_per_ap, ap))
}

/// Statistics of the per-AP soft estimates of every user, the input of LSFD.
///
/// With `g_j[q] = h_{l_q,j}^H u_{l_q,k}` for the `q`-th AP of `L_k`:
/// `mean[k][q] = E[g_k[q]]`, `cross[k][j] = E[conj(g_j) g_j^T]` and
/// `norms[k][q] = E[||u_{l_q,k}||^2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMoments {
    pub mean: Vec<Vec<C64>>,
    pub cross: Vec<Vec<DMatrix<C64>>>,
    pub norms: Vec<Vec<f64>>,
    pub sample_count: usize,
}

impl LocalMoments {
    fn zeros(csi: &CsiStructure) -> Self {
        let k = csi.num_users();
        let sizes: Vec<usize> = csi.serving_sets.iter().map(Vec::len).collect();
        Self {
            mean: sizes.iter().map(|&q| vec![C64::new(0.0, 0.0); q]).collect(),
            cross: sizes
                .iter()
                .map(|&q| vec![DMatrix::zeros(q, q); k])
                .collect(),
            norms: sizes.iter().map(|&q| vec![0.0; q]).collect(),
            sample_count: 0,
        }
    }

    fn accumulate(&mut self, other: &Self) {
        for k in 0..self.mean.len() {
            for (a, b) in self.mean[k].iter_mut().zip(&other.mean[k]) {
                *a += b;
            }
            for (a, b) in self.norms[k].iter_mut().zip(&other.norms[k]) {
                *a += b;
            }
            for (a, b) in self.cross[k].iter_mut().zip(&other.cross[k]) {
                *a += b;
            }
        }
        self.sample_count += other.sample_count;
    }

    fn normalize(&mut self) {
        let s = self.sample_count as f64;
        for k in 0..self.mean.len() {
            self.mean[k].iter_mut().for_each(|x| *x /= s);
            self.norms[k].iter_mut().for_each(|x| *x /= s);
            self.cross[k]
                .iter_mut()
                .for_each(|m| *m /= C64::new(s, 0.0));
        }
    }

    /// Multiplies every moment as if all channels were scaled by `sqrt(c)`
    /// and all filters by `sqrt(c)` (used to check scale invariance).
    pub fn scale(&mut self, c: f64) {
        for k in 0..self.mean.len() {
            self.mean[k].iter_mut().for_each(|x| *x *= c);
            self.norms[k].iter_mut().for_each(|x| *x *= c);
            self.cross[k]
                .iter_mut()
                .for_each(|m| *m *= C64::new(c, 0.0));
        }
    }

    /// UatF moments of the combined beamformer `v_k = (w_q u_{l_q,k})_q`.
    pub fn combine(&self, weights: &[Vec<C64>]) -> crate::metrics::UatfMoments {
        let k = self.mean.len();
        let mut b = DMatrix::zeros(k, k);
        let mut a = vec![C64::new(0.0, 0.0); k];
        let mut c = vec![0.0; k];
        for u in 0..k {
            let w = DVector::from_column_slice(&weights[u]);
            a[u] = self.mean[u].iter().zip(w.iter()).map(|(m, x)| m * x).sum();
            c[u] = self.norms[u]
                .iter()
                .zip(w.iter())
                .map(|(nq, x)| nq * x.norm_sqr())
                .sum();
            for j in 0..k {
                let quad = w.dotc(&(&self.cross[u][j] * &w));
                b[(j, u)] = quad.re.max(0.0);
            }
        }
        crate::metrics::UatfMoments {
            mean: a,
            cross: b,
            norm: c,
            sample_count: self.sample_count,
        }
    }
}

const CHUNK: usize = 16;

/// Estimates [`LocalMoments`] of the unit-gain, unit-weight filters of
/// `policy` over `batch`.
pub fn estimate_local_moments(
    policy: &BeamformerPolicy,
    batch: &ChannelBatch,
) -> Result<LocalMoments> {
    if batch.antennas_per_ap() != policy.antennas_per_ap {
        return Err(Error::Input(
            "batch and policy disagree on antennas per AP".into(),
        ));
    }
    for h in batch.samples() {
        policy.check_shape(h)?;
        check_finite(h)?;
    }
    let csi = policy.csi();
    let n = policy.antennas_per_ap;
    let partials: Vec<LocalMoments> = batch
        .samples()
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = LocalMoments::zeros(csi);
            for h in chunk {
                let u = policy.raw_filter(h);
                for k in 0..csi.num_users() {
                    let aps = &csi.serving_sets[k];
                    let q = aps.len();
                    let mut g = DMatrix::<C64>::zeros(q, csi.num_users());
                    for (qi, &l) in aps.iter().enumerate() {
                        let block = u.view((l * n, k), (n, 1));
                        acc.norms[k][qi] += block.norm_squared();
                        for j in 0..csi.num_users() {
                            g[(qi, j)] = h.view((l * n, j), (n, 1)).dotc(&block);
                        }
                    }
                    for qi in 0..q {
                        acc.mean[k][qi] += g[(qi, k)];
                    }
                    for j in 0..csi.num_users() {
                        let col = g.column(j);
                        acc.cross[k][j].gerc(
                            C64::new(1.0, 0.0),
                            &col.conjugate(),
                            &col.conjugate(),
                            C64::new(1.0, 0.0),
                        );
                    }
                }
                acc.sample_count += 1;
            }
            acc
        })
        .collect();
    let mut total = LocalMoments::zeros(csi);
    for part in &partials {
        total.accumulate(part);
    }
    total.normalize();
    Ok(total)
}

/// LSFD weights maximizing the UatF SINR of the combined estimate.
///
/// For each user the direction is `T^{-1} conj(b)` with
/// `T = sum_j p_j cross[k][j] + diag(norms[k])` and `b = mean[k]`, scaled to
/// unit norm. This choice makes the combined mean `E[h_k^H v_k]` real and
/// nonnegative. Users with vanishing moments get zero weights.
pub fn fit_lsfd_weights(local: &LocalMoments, p: &[f64]) -> Result<Vec<Vec<C64>>> {
    let k = local.mean.len();
    check_powers(p, k)?;
    let weights = (0..k)
        .map(|u| {
            let q = local.mean[u].len();
            let b = DVector::from_iterator(q, local.mean[u].iter().map(|x| x.conj()));
            let mut t = DMatrix::from_diagonal(&DVector::from_iterator(
                q,
                local.norms[u].iter().map(|&x| C64::new(x, 0.0)),
            ));
            for (j, cross) in local.cross[u].iter().enumerate() {
                if p[j] > 0.0 {
                    t += cross * C64::new(p[j], 0.0);
                }
            }
            if b.norm() == 0.0 || t.norm() == 0.0 {
                return vec![C64::new(0.0, 0.0); q];
            }
            let w = solve_hpd(t.clone(), &b).or_else(|| solve_pinv(t, &b));
            match w {
                Some(w) if w.norm() > 0.0 => (w.clone() / C64::new(w.norm(), 0.0))
                    .iter()
                    .copied()
                    .collect(),
                _ => vec![C64::new(0.0, 0.0); q],
            }
        })
        .collect();
    Ok(weights)
}
