//! Acceptance suite. Runs every criterion at its stated tolerance, prints one
//! PASS/FAIL line per criterion and exits nonzero if any fails.

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wsr_core::beamforming::{BeamformerPolicy, Strategy};
use wsr_core::channel::{sample_channels, ChannelBatch};
use wsr_core::experiment::{median, run_experiment, Algorithm, ExperimentConfig};
use wsr_core::metrics::{
    ergodic_rates, estimate_moments, mse, optimal_gain, optimal_scaling_mse, uatf_rate, uatf_sinr,
    wmmse_objective, wsr_uatf, UatfMoments,
};
use wsr_core::optimizer::{d_update, longterm_wmmse, p_update, OptimizerOptions};
use wsr_core::scenario::{
    assign_clusters, build_csi_structure, compute_large_scale, generate_drop, CsiCase,
    LargeScaleCoefficients, ScenarioConfig,
};
use wsr_core::{rng, C64};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    check(elapsed.as_secs_f64() < limit_s, || {
        format!("took {:.2} s, limit {limit_s} s", elapsed.as_secs_f64())
    })
}

fn random_beta(rng: &mut ChaCha8Rng, l: usize, k: usize) -> LargeScaleCoefficients {
    LargeScaleCoefficients::new(DMatrix::from_fn(l, k, |_, _| {
        0.1 + 2.0 * rng.random::<f64>()
    }))
    .unwrap()
}

fn desk_scenario(num_users: usize, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        num_aps: 4,
        antennas_per_ap: 2,
        num_users,
        cluster_size: 2,
        seed,
        ..Default::default()
    }
}

/// Large-scale gains and a channel batch of one desk-scale drop.
fn desk_drop(
    scenario: &ScenarioConfig,
    samples: usize,
) -> (Arc<LargeScaleCoefficients>, ChannelBatch) {
    let geometry = generate_drop(scenario, 0).unwrap();
    let beta = compute_large_scale(&geometry, scenario).unwrap();
    let seed = rng::derive_seed(geometry.drop_seed, 0xacce);
    let batch = sample_channels(&beta, scenario.antennas_per_ap, samples, seed).unwrap();
    (Arc::new(beta), batch)
}

fn duality_gap(m: &UatfMoments, p: &[f64]) -> f64 {
    (0..p.len())
        .map(|k| ((1.0 + uatf_sinr(m, p, k)) * mse(m, p, k) - 1.0).abs())
        .fold(0.0, f64::max)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let instances = 60;
    for i in 0..instances {
        let l = rng.random_range(2..=4);
        let n = rng.random_range(1..=2);
        let k = rng.random_range(2..=4);
        let beta = Arc::new(random_beta(&mut rng, l, k));
        let p: Vec<f64> = (0..k).map(|_| 0.1 + 5.0 * rng.random::<f64>()).collect();
        let batch = sample_channels(&beta, n, 100, i).unwrap();

        // Full clusters: the raw MMSE output is the exact per-sample minimizer.
        let full = Arc::new(
            build_csi_structure(CsiCase::Centralized, vec![(0..l).collect(); k], l).unwrap(),
        );
        let policy = BeamformerPolicy::new(
            Strategy::CentralizedClusteredMmse,
            full,
            beta.clone(),
            n,
            p.clone(),
        )
        .unwrap();
        worst = worst.max(duality_gap(&estimate_moments(&policy, &batch).unwrap(), &p));

        // User-centric clusters: conditional MMSE plus the fitted receive gain.
        let q = rng.random_range(1..l);
        let csi = Arc::new(
            build_csi_structure(CsiCase::Centralized, assign_clusters(&beta, q).unwrap(), l)
                .unwrap(),
        );
        let mut policy =
            BeamformerPolicy::new(Strategy::CentralizedClusteredMmse, csi, beta, n, p.clone())
                .unwrap();
        let base = estimate_moments(&policy, &batch).unwrap();
        policy
            .set_receive_gains((0..k).map(|u| optimal_gain(&base, &p, u)).collect())
            .unwrap();
        worst = worst.max(duality_gap(&estimate_moments(&policy, &batch).unwrap(), &p));
    }
    check(worst <= 1e-9, || {
        format!("max |(1+SINR) MSE - 1| = {worst:.3e}")
    })?;
    within(start.elapsed(), 10.0)?;
    Ok(format!(
        "{instances} instances, max gap {worst:.2e}, {:.2} s",
        start.elapsed().as_secs_f64()
    ))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let k = rng.random_range(1..=6);
        let mean: Vec<C64> = (0..k)
            .map(|_| {
                C64::new(
                    rng.random::<f64>() * 4.0 - 2.0,
                    rng.random::<f64>() * 4.0 - 2.0,
                )
            })
            .collect();
        let mut cross = DMatrix::from_fn(k, k, |_, _| rng.random::<f64>() * 3.0);
        for u in 0..k {
            cross[(u, u)] += mean[u].norm_sqr();
        }
        let m = UatfMoments {
            mean,
            cross,
            norm: (0..k).map(|_| 1e-3 + rng.random::<f64>()).collect(),
            sample_count: 1,
        };
        let p: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 10.0).collect();
        for u in 0..k {
            let v = optimal_scaling_mse(&m, &p, u) * (1.0 + uatf_sinr(&m, &p, u));
            worst = worst.max((v - 1.0).abs());
        }
    }
    check(worst <= 1e-12, || format!("max deviation {worst:.3e}"))?;
    within(start.elapsed(), 1.0)?;
    Ok(format!("1000 instances, max deviation {worst:.2e}"))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut worst_drop: f64 = 0.0;
    let mut runs = 0;
    for seed in 0..20 {
        let scenario = desk_scenario(8, 100 + seed);
        let (beta, batch) = desk_drop(&scenario, 500);
        let budget = scenario.power_budget_mw();
        for case in CsiCase::ALL {
            let q = if case == CsiCase::SmallCells { 1 } else { 2 };
            let csi =
                Arc::new(build_csi_structure(case, assign_clusters(&beta, q).unwrap(), 4).unwrap());
            let r = longterm_wmmse(
                beta.clone(),
                csi,
                &batch,
                &[1.0; 8],
                budget,
                &OptimizerOptions::default(),
            )
            .map_err(|e| e.to_string())?;
            for w in r.objective_trace.windows(2) {
                worst_drop = worst_drop.max(w[0] - w[1]);
            }
            runs += 1;
        }
    }
    check(worst_drop <= 1e-9, || {
        format!("objective dropped by {worst_drop:.3e}")
    })?;
    within(start.elapsed(), 120.0)?;
    Ok(format!(
        "{runs} traces, largest decrease {:.2e}, {:.1} s",
        worst_drop.max(0.0),
        start.elapsed().as_secs_f64()
    ))
}

/// Minimizer of a unimodal function on `[lo, hi]`.
fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > 1e-13 * hi.max(1.0) {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    let mid = 0.5 * (lo + hi);
    // the minimum may sit on a boundary
    [0.0, mid]
        .into_iter()
        .chain([hi])
        .min_by(|a, b| f(*a).total_cmp(&f(*b)))
        .unwrap()
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut clipped = 0;
    for i in 0..100 {
        let k = rng.random_range(1..=3);
        let l = 2;
        let n = rng.random_range(1..=2);
        let beta = Arc::new(random_beta(&mut rng, l, k));
        let budget = 0.5 + 20.0 * rng.random::<f64>();
        let p: Vec<f64> = (0..k).map(|_| budget * rng.random::<f64>()).collect();
        let omega: Vec<f64> = (0..k).map(|_| 0.2 + rng.random::<f64>()).collect();
        let batch = sample_channels(&beta, n, 40, 1000 + i).unwrap();
        let csi = Arc::new(
            build_csi_structure(CsiCase::Centralized, assign_clusters(&beta, 1).unwrap(), l)
                .unwrap(),
        );
        // beamformer step, as in the optimizer: MMSE at p, then the receive gain
        let policy =
            BeamformerPolicy::new(Strategy::CentralizedClusteredMmse, csi, beta, n, p.clone())
                .unwrap();
        let base = estimate_moments(&policy, &batch).unwrap();
        let gains: Vec<C64> = (0..k).map(|u| optimal_gain(&base, &p, u)).collect();
        let m = base.scaled(&gains);
        let d = d_update(&m, &p);
        let closed = p_update(&m, &d, &omega, budget);
        for u in 0..k {
            let objective = |x: f64| {
                let mut q = p.clone();
                q[u] = x;
                (0..k)
                    .map(|j| omega[j] * d[j] * mse(&m, &q, j))
                    .sum::<f64>()
            };
            let searched = golden_section(objective, 0.0, budget);
            if closed[u] == budget {
                clipped += 1;
            }
            worst = worst.max((searched - closed[u]).abs() / closed[u].abs().max(1e-12));
        }
    }
    check(worst <= 1e-4, || format!("max relative error {worst:.3e}"))?;
    within(start.elapsed(), 30.0)?;
    Ok(format!(
        "100 instances ({clipped} coordinates at the budget), max relative error {worst:.2e}"
    ))
}

fn criterion_5() -> Outcome {
    let mut worst_d: f64 = 0.0;
    let mut worst_offset: f64 = 0.0;
    for seed in 0..5 {
        let scenario = desk_scenario(8, 500 + seed);
        let (beta, batch) = desk_drop(&scenario, 200);
        let omega: Vec<f64> = (0..8).map(|k| 0.5 + 0.25 * k as f64).collect();
        for case in CsiCase::ALL {
            let q = if case == CsiCase::SmallCells { 1 } else { 2 };
            let csi =
                Arc::new(build_csi_structure(case, assign_clusters(&beta, q).unwrap(), 4).unwrap());
            // max_iters = t stops right after the t-th beamformer step; d_final
            // is the d-update that the next iteration would apply.
            for t in 1..=6 {
                let opts = OptimizerOptions {
                    max_iters: t,
                    rel_tol: 1e-300,
                    ..Default::default()
                };
                let r = longterm_wmmse(
                    beta.clone(),
                    csi.clone(),
                    &batch,
                    &omega,
                    scenario.power_budget_mw(),
                    &opts,
                )
                .map_err(|e| e.to_string())?;
                let p = r.p_opt.as_slice();
                for k in 0..8 {
                    worst_d = worst_d.max((r.d_final[k] * mse(&r.moments, p, k) - 1.0).abs());
                }
                let lhs = wmmse_objective(&r.moments, p, &r.d_final, &omega);
                let rhs = wsr_uatf(&r.moments, p, &omega) - omega.iter().sum::<f64>();
                worst_offset = worst_offset.max((lhs - rhs).abs());
            }
        }
    }
    check(worst_d <= 1e-12, || {
        format!("max |d MSE - 1| = {worst_d:.3e}")
    })?;
    check(worst_offset <= 1e-12, || {
        format!("max offset error {worst_offset:.3e}")
    })?;
    Ok(format!(
        "max |d MSE - 1| {worst_d:.2e}, max offset error {worst_offset:.2e}"
    ))
}

fn criterion_6() -> Outcome {
    let mut worst_margin = f64::INFINITY;
    let mut users = 0;
    for seed in 0..20 {
        let scenario = desk_scenario(16, 600 + seed);
        let (beta, batch) = desk_drop(&scenario, 400);
        let (fit, eval) = wsr_core::channel::split_batch(&batch, 0.5).unwrap();
        let case = CsiCase::ALL[seed as usize % 3];
        let q = if case == CsiCase::SmallCells { 1 } else { 2 };
        let csi =
            Arc::new(build_csi_structure(case, assign_clusters(&beta, q).unwrap(), 4).unwrap());
        let r = longterm_wmmse(
            beta,
            csi,
            &fit,
            &[1.0; 16],
            scenario.power_budget_mw(),
            &OptimizerOptions::default(),
        )
        .map_err(|e| e.to_string())?;
        let p = r.p_opt.as_slice();
        let ergodic = ergodic_rates(&r.policy, &eval, p).map_err(|e| e.to_string())?;
        let m = estimate_moments(&r.policy, &eval).map_err(|e| e.to_string())?;
        for k in 0..16 {
            let margin = ergodic.mean[k] + 3.0 * ergodic.std_err[k] - uatf_rate(&m, p, k);
            worst_margin = worst_margin.min(margin);
            users += 1;
        }
    }
    check(worst_margin >= 0.0, || {
        format!("UatF exceeds ergodic + 3 SE by {:.3e}", -worst_margin)
    })?;
    Ok(format!(
        "{users} users on held-out batches, smallest margin {worst_margin:.3e} nats"
    ))
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let config = ExperimentConfig {
        scenario: desk_scenario(16, 7),
        num_drops: 50,
        samples_per_drop: 200,
        ..Default::default()
    };
    let result = run_experiment(&config).map_err(|e| e.to_string())?;
    let med = |alg: Algorithm, case: CsiCase| {
        let v: Vec<f64> = result
            .rows
            .iter()
            .filter(|r| r.algorithm == alg && r.case == case)
            .map(|r| r.ergodic_sum_rate_bits)
            .collect();
        median(&v).unwrap()
    };
    use Algorithm::*;
    use CsiCase::*;
    let short = med(ShortTermWmmse, Centralized);
    let long = [
        med(LongTermWmmse, Centralized),
        med(LongTermWmmse, Distributed),
        med(LongTermWmmse, SmallCells),
    ];
    check(short >= long[0], || {
        format!("(a) short-term {short:.3} < long-term {:.3}", long[0])
    })?;
    for (i, case) in [Centralized, Distributed].into_iter().enumerate() {
        for alg in [PowerOnly, Lsfd] {
            let other = med(alg, case);
            check(long[i] >= other, || {
                format!(
                    "(b) {}: long-term {:.3} < {} {other:.3}",
                    case.name(),
                    long[i],
                    alg.name()
                )
            })?;
        }
    }
    let se: Vec<f64> = result
        .rows
        .iter()
        .filter(|r| r.algorithm == LongTermWmmse && r.case == SmallCells)
        .map(|r| r.ergodic_sum_rate_std_err_bits)
        .collect();
    let se = median(&se).unwrap();
    check(long[0] >= long[1] && long[1] >= long[2] - se, || {
        format!(
            "(c) medians {:.3} / {:.3} / {:.3} (SE {se:.3})",
            long[0], long[1], long[2]
        )
    })?;
    within(start.elapsed(), 600.0)?;
    Ok(format!(
        "medians [bit/s/Hz]: short-term (i) {short:.2}; long-term (i) {:.2} (ii) {:.2} (iii) {:.2}; \
         power-only (i) {:.2} (ii) {:.2}; LSFD (i) {:.2} (ii) {:.2}; {:.1} s",
        long[0],
        long[1],
        long[2],
        med(PowerOnly, Centralized),
        med(PowerOnly, Distributed),
        med(Lsfd, Centralized),
        med(Lsfd, Distributed),
        start.elapsed().as_secs_f64()
    ))
}

fn criterion_8() -> Outcome {
    let beta = Arc::new(LargeScaleCoefficients::new(DMatrix::from_element(1, 1, 1.0)).unwrap());
    let csi = Arc::new(build_csi_structure(CsiCase::Centralized, vec![vec![0]], 1).unwrap());
    let policy =
        BeamformerPolicy::new(Strategy::CentralizedClusteredMmse, csi, beta, 1, vec![1.0]).unwrap();
    let h = DMatrix::from_element(1, 1, C64::new(1.0, 0.0));
    let v = policy.evaluate(&h).map_err(|e| e.to_string())?;
    let m = UatfMoments::from_sample(&h, &v);
    let p = [1.0];
    let errors = [
        ("v", (v[(0, 0)] - C64::new(0.5, 0.0)).norm()),
        ("MSE", (mse(&m, &p, 0) - 0.5).abs()),
        ("SINR", (uatf_sinr(&m, &p, 0) - 1.0).abs()),
        (
            "rate",
            (uatf_rate(&m, &p, 0) - std::f64::consts::LN_2).abs(),
        ),
    ];
    for (name, err) in errors {
        check(err <= 1e-12, || format!("{name} off by {err:.3e}"))?;
    }
    Ok("v = 0.5, MSE = 0.5, SINR = 1, rate = ln 2".into())
}

fn criterion_9() -> Outcome {
    let config = ExperimentConfig {
        scenario: desk_scenario(6, 9),
        num_drops: 6,
        samples_per_drop: 60,
        ..Default::default()
    };
    let many = std::thread::available_parallelism()
        .map_or(4, |n| n.get())
        .max(4);
    let run = |threads: usize| -> Result<String, String> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let result = pool
            .install(|| run_experiment(&config))
            .map_err(|e| e.to_string())?;
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        wsr_core::experiment::write_outputs(&result, dir.path()).map_err(|e| e.to_string())?;
        std::fs::read_to_string(dir.path().join("results.json")).map_err(|e| e.to_string())
    };
    let one = run(1)?;
    let again = run(1)?;
    let par = run(many)?;
    check(one == again, || "two single-thread runs differ".into())?;
    check(one == par, || {
        format!("1-thread and {many}-thread results differ")
    })?;
    Ok(format!(
        "results.json identical ({} bytes) with 1 and {many} threads",
        one.len()
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("duality identity", criterion_1),
        ("scaling identity", criterion_2),
        ("monotone objective", criterion_3),
        ("closed-form power update", criterion_4),
        ("d-update and objective offset", criterion_5),
        ("UatF below ergodic rate", criterion_6),
        ("method ordering at desk scale", criterion_7),
        ("single-user closed form", criterion_8),
        ("determinism across thread counts", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS [{}] {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{}] {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
