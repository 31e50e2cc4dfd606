mod common;

use common::{max_rel_entry_err, random_model, CovAccumulator};
use etlqg::analysis::{
    conditional_error_cov, cumulative_cov, nontrigger_probability, transition_chain, transition_chain_conditional,
    MarkovAnalysis,
};
use etlqg::estimation::kf_steady_state;
use etlqg::linalg::{max_eigenvalue, min_eigenvalue};
use etlqg::simulation::{ClosedLoop, ControlLaw, GaussianSampler, SimConfig};
use etlqg::{analyze, Gains, SchedulerParams, SystemModel};
use nalgebra::{DVector, RowDVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

#[test]
fn stacked_covariance_matches_sampled_cumulative_errors() {
    let m = SystemModel::unstable_benchmark();
    let ss = kf_steady_state(&m).unwrap();
    let cov = cumulative_cov(&ss, &m.a, 2, 50).unwrap();
    let eta = GaussianSampler::new(DVector::zeros(2), &ss.pi_eta).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(77);
    let mut acc = CovAccumulator::new(6);
    for _ in 0..1_000_000 {
        let (e0, e1, e2) = (eta.sample(&mut rng), eta.sample(&mut rng), eta.sample(&mut rng));
        let eps0 = e0.clone();
        let eps1 = &e1 + &m.a * &e0;
        let eps2 = &e2 + &m.a * &e1 + &m.a * &m.a * &e0;
        acc.push(&DVector::from_iterator(6, eps0.iter().chain(eps1.iter()).chain(eps2.iter()).copied()));
    }
    let err = max_rel_entry_err(&acc.second_moment(), cov.matrix());
    assert!(err < 0.02, "max relative entry error {err}");
}

/// `det(I + 2Σ_ε(n−1))^{-1/2}` for the benchmark at λ = 1, evaluated in
/// 60-digit arithmetic.
const HIGH_PRECISION_SURVIVAL: [(usize, f64); 6] = [
    (10, 3.3474155723870187e-06),
    (20, 9.336615399761697e-12),
    (27, 1.207884255054378e-15),
    (36, 1.2104786345679058e-20),
    (46, 3.3762680206099126e-26),
    (50, 2.025950499586207e-28),
];

#[test]
fn long_silences_match_high_precision_determinants() {
    let m = SystemModel::unstable_benchmark();
    let ss = kf_steady_state(&m).unwrap();
    let survival = transition_chain(&ss, &m.a, &SchedulerParams::new(1.0, 50).unwrap()).unwrap().survival();
    for (n, want) in HIGH_PRECISION_SURVIVAL {
        let err = ((survival[n] - want) / want).abs();
        assert!(err <= 1e-10, "n={n}: {} vs {want} (rel {err:e})", survival[n]);
    }
}

#[test]
fn communication_becomes_periodic_as_lambda_vanishes() {
    let m = SystemModel::unstable_benchmark();
    let rate = |l: f64| analyze(&m, &SchedulerParams::new(l, 50).unwrap()).unwrap().rate();
    let gap = |l: f64| (rate(l) * 51.0 - 1.0).abs();
    assert!(gap(1e-16) < 1e-6, "{}", gap(1e-16));
    // The gap shrinks linearly in λ once the chain is nearly periodic.
    assert!((gap(1e-16) / gap(1e-18) - 100.0).abs() < 1.0);
}

/// Counts of `τ_k = i` and of `τ_{k+1} = 0` given `τ_k = i`, plus per-run
/// occupancy fractions.
struct TauCounts {
    visits: Vec<u64>,
    resets: Vec<u64>,
    occupancy: Vec<Vec<f64>>,
}

fn tau_counts(model: &SystemModel, lambda: f64, t: usize, runs: usize, steps: usize, seed: u64) -> TauCounts {
    let cfg = SimConfig::new(model.clone(), SchedulerParams::new(lambda, t).unwrap(), steps, runs, seed).unwrap();
    let gains = Gains::new(model).unwrap();
    let lp = ClosedLoop::new(&cfg, &gains).unwrap();
    let mut out = TauCounts { visits: vec![0; t + 1], resets: vec![0; t + 1], occupancy: Vec::new() };
    for r in 0..runs as u64 {
        let mut occ = vec![0u64; t + 1];
        let mut prev: Option<usize> = None;
        lp.run_observed(r, ControlLaw::CertaintyEquivalent, |s| {
            if s.k < cfg.burn_in {
                prev = Some(s.tau);
                return;
            }
            occ[s.tau] += 1;
            if let Some(i) = prev {
                out.visits[i] += 1;
                out.resets[i] += u64::from(s.tau == 0);
            }
            prev = Some(s.tau);
        })
        .unwrap();
        let total = occ.iter().sum::<u64>() as f64;
        out.occupancy.push(occ.iter().map(|c| *c as f64 / total).collect());
    }
    out
}

#[test]
fn reset_probabilities_match_conditional_frequencies() {
    let m = SystemModel::unstable_benchmark();
    let a = analyze(&m, &SchedulerParams::new(1.0, 50).unwrap()).unwrap();
    let c = tau_counts(&m, 1.0, 50, 1, 1_000_200, 5);
    let mut tested = 0;
    for (i, p) in a.markov.chain.p_i0.iter().enumerate() {
        let n = c.visits[i];
        if n < 50 {
            continue;
        }
        let freq = c.resets[i] as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((freq - p).abs() <= 3.0 * se, "i={i}: {freq} vs {p} (n={n}, se={se})");
        tested += 1;
    }
    assert!(tested >= 6, "only {tested} states visited often enough");
}

#[test]
fn tau_occupancy_matches_stationary_distribution() {
    let m = SystemModel::unstable_benchmark();
    let a = analyze(&m, &SchedulerParams::new(0.3, 50).unwrap()).unwrap();
    let runs = 200;
    let c = tau_counts(&m, 0.3, 50, runs, 5_200, 9);
    for (i, pi) in a.markov.pi.iter().enumerate().filter(|(_, p)| **p > 1e-3) {
        let xs: Vec<f64> = c.occupancy.iter().map(|o| o[i]).collect();
        let mean = xs.iter().sum::<f64>() / runs as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
        let se = (var / runs as f64).sqrt();
        assert!((mean - pi).abs() <= 3.0 * se, "state {i}: {mean} vs {pi} (se {se})");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn chain_invariants_on_random_models(
        seed in 0u64..100_000,
        log_lambda in -2.0f64..2.0,
        t in 1usize..=10,
    ) {
        let m = random_model(seed, 4);
        let lambda = 10f64.powf(log_lambda);
        let params = SchedulerParams::new(lambda, t).unwrap();
        let ss = kf_steady_state(&m).unwrap();
        let chain = transition_chain(&ss, &m.a, &params).unwrap();
        prop_assert!(chain.p_i0.iter().all(|p| (0.0..=1.0).contains(p)));
        prop_assert_eq!(chain.p_i0[t], 1.0);

        let ma = MarkovAnalysis::from_chain(chain.clone()).unwrap();
        for i in 0..=t {
            prop_assert!((ma.p_lambda.row(i).sum() - 1.0).abs() <= 1e-12);
            for j in 0..=t {
                if j != 0 && j != i + 1 {
                    prop_assert_eq!(ma.p_lambda[(i, j)], 0.0);
                }
            }
        }
        let pi = RowDVector::from_row_slice(&ma.pi);
        prop_assert!((&pi * &ma.p_lambda - &pi).amax() <= 1e-10);
        prop_assert!((ma.pi.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(ma.pi.iter().all(|p| *p > 0.0));
        prop_assert!((ma.rate - ma.pi[0]).abs() <= 1e-10);

        let cond = transition_chain_conditional(&ss, &m.a, &params).unwrap();
        for (x, y) in chain.p_i0.iter().zip(&cond.p_i0) {
            prop_assert!((x - y).abs() <= 1e-8, "{} vs {}", x, y);
        }

        let survival = chain.survival();
        for n in 1..=t {
            let direct = nontrigger_probability(&cumulative_cov(&ss, &m.a, n - 1, t).unwrap(), lambda).unwrap();
            prop_assert!((survival[n] - direct).abs() <= 1e-10 * direct, "n={}: {} vs {}", n, survival[n], direct);
        }

        let cec = conditional_error_cov(&ss, &m.a, &params).unwrap();
        prop_assert_eq!(cec.sigmas[0].amax(), 0.0);
        for s in &cec.sigmas[1..] {
            prop_assert!(min_eigenvalue(s) >= -1e-12);
            prop_assert!(max_eigenvalue(s) < 0.5 / lambda);
        }
    }

    #[test]
    fn rate_is_nondecreasing_in_lambda(seed in 0u64..100_000, t in 1usize..=10) {
        let m = random_model(seed, 3);
        let ss = kf_steady_state(&m).unwrap();
        let mut last = 0.0;
        for k in -4..=4 {
            let lambda = 10f64.powf(k as f64 / 2.0);
            let chain = transition_chain(&ss, &m.a, &SchedulerParams::new(lambda, t).unwrap()).unwrap();
            let ma = MarkovAnalysis::from_chain(chain).unwrap();
            prop_assert!(ma.rate >= last - 1e-12);
            last = ma.rate;
        }
    }
}
