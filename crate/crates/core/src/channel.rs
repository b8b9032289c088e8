//! Seeded batches of fading realizations.
//!
//! A [`ChannelBatch`] is the sample-average stand-in for every expectation
//! the optimizer touches. Sample `s` is drawn from its own ChaCha stream
//! `(seed, s)`, so the batch does not depend on how many workers generate it.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::scenario::LargeScaleCoefficients;
use crate::{rng, Error, Result, C64};

/// Uplink channel matrix `H = [h_1, ..., h_K]` of one coherence block, `M x K`.
pub type ChannelSample = DMatrix<C64>;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelBatch {
    samples: Vec<ChannelSample>,
    antennas_per_ap: usize,
    seed: u64,
}

impl ChannelBatch {
    /// Wraps explicit realizations, e.g. a deterministic channel.
    pub fn from_samples(
        samples: Vec<ChannelSample>,
        antennas_per_ap: usize,
        seed: u64,
    ) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Argument("a channel batch needs at least one sample".into()))?;
        let (m, k) = first.shape();
        if antennas_per_ap == 0 || m % antennas_per_ap != 0 {
            return Err(Error::Input(format!(
                "{m} antennas do not split into APs of {antennas_per_ap}"
            )));
        }
        if samples.iter().any(|h| h.shape() != (m, k)) {
            return Err(Error::Input(
                "channel samples have mismatched shapes".into(),
            ));
        }
        Ok(Self {
            samples,
            antennas_per_ap,
            seed,
        })
    }

    pub fn samples(&self) -> &[ChannelSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn antennas_per_ap(&self) -> usize {
        self.antennas_per_ap
    }

    pub fn num_antennas(&self) -> usize {
        self.samples[0].nrows()
    }

    pub fn num_users(&self) -> usize {
        self.samples[0].ncols()
    }

    pub fn num_aps(&self) -> usize {
        self.num_antennas() / self.antennas_per_ap
    }

    /// Writes the batch as a little-endian binary blob: five `u64` header
    /// words `(S, M, K, N, seed)` followed by interleaved `(re, im)` doubles,
    /// column-major within each sample.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        for word in [
            self.len() as u64,
            self.num_antennas() as u64,
            self.num_users() as u64,
            self.antennas_per_ap as u64,
            self.seed,
        ] {
            w.write_all(&word.to_le_bytes())?;
        }
        for h in &self.samples {
            for z in h.iter() {
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut header = [0u64; 5];
        for h in header.iter_mut() {
            r.read_exact(&mut word)?;
            *h = u64::from_le_bytes(word);
        }
        let [s, m, k, n, seed] = header;
        let (s, m, k) = (s as usize, m as usize, k as usize);
        let mut samples = Vec::with_capacity(s);
        for _ in 0..s {
            let mut data = Vec::with_capacity(m * k);
            for _ in 0..m * k {
                r.read_exact(&mut word)?;
                let re = f64::from_le_bytes(word);
                r.read_exact(&mut word)?;
                let im = f64::from_le_bytes(word);
                data.push(C64::new(re, im));
            }
            samples.push(DMatrix::from_vec(m, k, data));
        }
        Self::from_samples(samples, n as usize, seed)
    }
}

/// Draws `S` i.i.d. uncorrelated Rayleigh realizations: entry `(n of AP l, k)`
/// is circularly-symmetric complex Gaussian with variance `beta[l][k]`.
pub fn sample_channels(
    beta: &LargeScaleCoefficients,
    antennas_per_ap: usize,
    sample_count: usize,
    seed: u64,
) -> Result<ChannelBatch> {
    if sample_count == 0 {
        return Err(Error::Argument("sample count must be at least 1".into()));
    }
    if antennas_per_ap == 0 {
        return Err(Error::Argument("antennas per AP must be at least 1".into()));
    }
    let (num_aps, num_users) = beta.beta.shape();
    let m = num_aps * antennas_per_ap;
    let std: Vec<f64> = beta.beta.iter().map(|b| (b / 2.0).sqrt()).collect();

    let samples = (0..sample_count)
        .into_par_iter()
        .map(|s| {
            let mut r = rng::stream(seed, s as u64);
            let mut h = DMatrix::zeros(m, num_users);
            for k in 0..num_users {
                for row in 0..m {
                    let l = row / antennas_per_ap;
                    let sd = std[l + k * num_aps];
                    let re: f64 = StandardNormal.sample(&mut r);
                    let im: f64 = StandardNormal.sample(&mut r);
                    h[(row, k)] = C64::new(re * sd, im * sd);
                }
            }
            h
        })
        .collect();
    ChannelBatch::from_samples(samples, antennas_per_ap, seed)
}

/// Splits a batch into a fitting part of `floor(S * fraction)` samples and an
/// evaluation part with the rest, preserving order.
pub fn split_batch(batch: &ChannelBatch, fraction: f64) -> Result<(ChannelBatch, ChannelBatch)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Argument(format!(
            "split fraction {fraction} outside (0, 1)"
        )));
    }
    let cut = (batch.len() as f64 * fraction).floor() as usize;
    if cut == 0 || cut == batch.len() {
        return Err(Error::Argument(format!(
            "splitting {} samples at {fraction} leaves an empty part",
            batch.len()
        )));
    }
    let fit = batch.samples[..cut].to_vec();
    let eval = batch.samples[cut..].to_vec();
    Ok((
        ChannelBatch::from_samples(fit, batch.antennas_per_ap, batch.seed)?,
        ChannelBatch::from_samples(eval, batch.antennas_per_ap, batch.seed)?,
    ))
}
