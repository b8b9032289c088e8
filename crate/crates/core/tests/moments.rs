use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use wsr_core::beamforming::{BeamformerPolicy, Strategy};
use wsr_core::channel::{sample_channels, ChannelBatch};
use wsr_core::metrics::{
    ergodic_rate, ergodic_rates, estimate_moments, mse, optimal_scaling_mse, uatf_rate, UatfMoments,
};
use wsr_core::scenario::{assign_clusters, build_csi_structure, CsiCase, LargeScaleCoefficients};
use wsr_core::C64;

fn setup(
    case: CsiCase,
    q: usize,
    seed: u64,
) -> (
    Arc<LargeScaleCoefficients>,
    Arc<wsr_core::scenario::CsiStructure>,
    ChannelBatch,
) {
    let beta = DMatrix::from_fn(3, 4, |l, k| {
        0.3 + ((l * 5 + k * 3 + seed as usize) % 7) as f64 * 0.3
    });
    let beta = LargeScaleCoefficients::new(beta).unwrap();
    let csi = build_csi_structure(case, assign_clusters(&beta, q).unwrap(), 3).unwrap();
    let batch = sample_channels(&beta, 2, 64, seed).unwrap();
    (Arc::new(beta), Arc::new(csi), batch)
}

#[test]
fn single_sample_moments_are_instantaneous() {
    let (beta, csi, batch) = setup(CsiCase::Centralized, 2, 1);
    let policy = BeamformerPolicy::new(
        Strategy::CentralizedClusteredMmse,
        csi,
        beta,
        2,
        vec![1.0, 2.0, 0.5, 1.0],
    )
    .unwrap();
    let h = batch.samples()[3].clone();
    let one = ChannelBatch::from_samples(vec![h.clone()], 2, 0).unwrap();
    let v = policy.evaluate(&h).unwrap();
    assert_eq!(
        estimate_moments(&policy, &one).unwrap(),
        UatfMoments::from_sample(&h, &v)
    );
}

#[test]
fn deterministic_channel_ergodic_equals_uatf() {
    let (beta, csi, batch) = setup(CsiCase::Centralized, 3, 2);
    let p = vec![1.0, 2.0, 0.5, 1.0];
    let policy =
        BeamformerPolicy::new(Strategy::CentralizedClusteredMmse, csi, beta, 2, p.clone()).unwrap();
    let repeated = ChannelBatch::from_samples(vec![batch.samples()[0].clone(); 5], 2, 0).unwrap();
    let m = estimate_moments(&policy, &repeated).unwrap();
    let v = policy.evaluate(&batch.samples()[0]).unwrap();
    for k in 0..4 {
        let a = batch.samples()[0].column(k).dotc(&v.column(k));
        assert!((m.mean[k] - a).norm() < 1e-12 * a.norm());
        let erg = ergodic_rate(&policy, &repeated, &p, k).unwrap();
        assert!((erg - uatf_rate(&m, &p, k)).abs() < 1e-12);
    }
}

#[test]
fn zero_power_user_has_zero_moments_and_rate() {
    let (beta, csi, batch) = setup(CsiCase::Distributed, 2, 3);
    let p = vec![1.0, 0.0, 0.5, 1.0];
    let policy = BeamformerPolicy::new(Strategy::LocalMmse, csi, beta, 2, p.clone()).unwrap();
    let m = estimate_moments(&policy, &batch).unwrap();
    assert_eq!(m.mean[1], C64::new(0.0, 0.0));
    assert_eq!(m.norm[1], 0.0);
    assert!((0..4).all(|j| m.cross[(j, 1)] == 0.0));
    assert_eq!(mse(&m, &p, 1), 1.0);
    let rates = ergodic_rates(&policy, &batch, &p).unwrap();
    assert_eq!(rates.mean[1], 0.0);
}

#[test]
fn full_cluster_mmse_minimizes_batch_mse() {
    // per-sample oracle: v_k = (H P H^H + I)^{-1} h_k sqrt(p_k) via a dense inverse
    let (beta, _, batch) = setup(CsiCase::Centralized, 3, 4);
    let csi =
        Arc::new(build_csi_structure(CsiCase::Centralized, vec![vec![0, 1, 2]; 4], 3).unwrap());
    let p = vec![1.5, 0.5, 2.0, 1.0];
    let policy =
        BeamformerPolicy::new(Strategy::CentralizedClusteredMmse, csi, beta, 2, p.clone()).unwrap();
    let m = estimate_moments(&policy, &batch).unwrap();
    let pm = DMatrix::from_diagonal(&DVector::from_iterator(
        4,
        p.iter().map(|&x| C64::new(x, 0.0)),
    ));
    let mut oracle = vec![0.0; 4];
    for h in batch.samples() {
        let inv = (h * &pm * h.adjoint() + DMatrix::identity(6, 6))
            .try_inverse()
            .unwrap();
        for k in 0..4 {
            let v = &inv * h.column(k) * C64::new(p[k].sqrt(), 0.0);
            let mut e = v.norm_squared() + 1.0 - 2.0 * p[k].sqrt() * h.column(k).dotc(&v).re;
            for j in 0..4 {
                e += p[j] * h.column(j).dotc(&v).norm_sqr();
            }
            oracle[k] += e / batch.len() as f64;
        }
    }
    for k in 0..4 {
        assert!((mse(&m, &p, k) - oracle[k]).abs() < 1e-10);
        // the MMSE output is already optimally scaled
        assert!((mse(&m, &p, k) - optimal_scaling_mse(&m, &p, k)).abs() < 1e-12);
    }
}

#[test]
fn moments_do_not_depend_on_worker_count() {
    let (beta, csi, batch) = setup(CsiCase::Centralized, 2, 5);
    let policy = BeamformerPolicy::new(
        Strategy::CentralizedClusteredMmse,
        csi,
        beta,
        2,
        vec![1.0; 4],
    )
    .unwrap();
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let four = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap();
    let a = one.install(|| estimate_moments(&policy, &batch).unwrap());
    let b = four.install(|| estimate_moments(&policy, &batch).unwrap());
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn jensen_holds_for_sample_moments(seed in 0u64..10_000, case_idx in 0usize..3) {
        let case = CsiCase::ALL[case_idx];
        let q = if case == CsiCase::SmallCells { 1 } else { 2 };
        let (beta, csi, batch) = setup(case, q, seed);
        let strategy = match case {
            CsiCase::Centralized => Strategy::CentralizedClusteredMmse,
            _ => Strategy::LocalMmse,
        };
        let policy = BeamformerPolicy::new(strategy, csi, beta, 2, vec![1.0, 0.3, 2.0, 0.7]).unwrap();
        let m = estimate_moments(&policy, &batch).unwrap();
        for k in 0..4 {
            prop_assert!(m.cross[(k, k)] >= m.mean[k].norm_sqr() * (1.0 - 1e-12));
            prop_assert!(m.norm[k] >= 0.0);
        }
    }
}
