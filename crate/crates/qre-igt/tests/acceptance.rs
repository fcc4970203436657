//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! with its runtime. Statistical criteria use fixed seeds, so every run is
//! reproducible; tolerance bands are wide enough to absorb re-seeding.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use qre_igt::error::Error;
use qre_igt::estimator::{
    confidence_contains, confidence_threshold, nls_estimate, ConfidenceConfig,
};
use qre_igt::experiments::{
    run_comparison_table, run_convergence_markov, run_convergence_matrix,
    run_feature_misspecification, run_misspecified_c, run_unknown_dynamics, ExperimentConfig,
    ExperimentKind,
};
use qre_igt::game::{generate_markov_game, generate_matrix_game};
use qre_igt::rng;
use qre_igt::sampling::{default_floor, empirical_policies, sample_matrix_play};
use qre_igt::solver::{forward_solve_markov, solve_matrix_qre, JointPolicy, SolverConfig};
use qre_igt::system::{build_system, check_identifiability};

struct Criterion {
    index: usize,
    name: &'static str,
    limit_secs: f64,
    started: Instant,
}

impl Criterion {
    fn start(index: usize, name: &'static str, limit_secs: f64) -> Self {
        Criterion {
            index,
            name,
            limit_secs,
            started: Instant::now(),
        }
    }

    fn finish(self) {
        let elapsed = self.started.elapsed().as_secs_f64();
        if elapsed >= self.limit_secs {
            println!(
                "criterion {} ({}): FAIL [over the {} s budget: {elapsed:.1} s]",
                self.index, self.name, self.limit_secs
            );
            panic!("criterion {} exceeded its runtime budget", self.index);
        }
        println!(
            "criterion {} ({}): PASS [{elapsed:.1} s]",
            self.index, self.name
        );
    }
}

#[test]
fn criterion_01_noiseless_exact_recovery() {
    let criterion = Criterion::start(1, "noiseless exact recovery", 10.0);
    for (game_index, seed) in (0..8).enumerate() {
        for tau in [0.5, 2.0, 5.0] {
            let spec = generate_matrix_game(10, 10, 5, tau, 1.0, 9_000 + seed).unwrap();
            let solution = solve_matrix_qre(&spec.payoff(), tau, &SolverConfig::exact()).unwrap();
            assert!(
                solution.converged,
                "game {game_index} tau {tau} did not converge"
            );
            let system = build_system(&spec.features, &solution.policy).unwrap();
            let estimate = nls_estimate(&system, 1.0).unwrap();
            let theta_gap = (&estimate.theta_hat - &spec.theta_star).norm();
            let tau_gap = (estimate.tau_hat - tau).abs();
            assert!(
                theta_gap < 1e-8 && tau_gap < 1e-8,
                "game {game_index} tau {tau}: theta gap {theta_gap:.3e}, tau gap {tau_gap:.3e}"
            );
        }
    }
    criterion.finish();
}

#[test]
fn criterion_02_matrix_convergence_slopes() {
    let criterion = Criterion::start(2, "matrix-game convergence", 300.0);
    let config = ExperimentConfig {
        seed: 1,
        trials: 50,
        ..ExperimentConfig::default()
    };
    let report = run_convergence_matrix(&config).unwrap();
    assert_eq!(report.failures.iter().sum::<u64>(), 0);
    for name in ["theta_error", "tau_error"] {
        let slope = report.slope(name);
        assert!(
            (-0.6..=-0.4).contains(&slope),
            "{name} slope {slope:.3} outside [-0.6, -0.4]"
        );
    }
    criterion.finish();
}

#[test]
fn criterion_03_comparison_table_replication() {
    let criterion = Criterion::start(3, "comparison-table replication", 120.0);
    let config = ExperimentConfig {
        seed: 2,
        trials: 50,
        ..ExperimentConfig::default()
    };
    let report = run_comparison_table(&config).unwrap();
    assert_eq!(report.failures, 0);
    let joint = report.row("nls", None).mean_error;
    let oracle = report.row("fixed_tau", Some(2.0)).mean_error;
    let low = report.row("fixed_tau", Some(1.0)).mean_error;
    let high = report.row("fixed_tau", Some(4.0)).mean_error;
    assert!(
        (0.08..=0.20).contains(&joint),
        "joint estimator mean error {joint:.4} outside [0.08, 0.20]"
    );
    assert!(
        high > low && low > oracle,
        "ordering violated: high {high:.4}, low {low:.4}, oracle {oracle:.4}"
    );
    assert!(
        joint <= 1.5 * oracle,
        "joint {joint:.4} exceeds 1.5x oracle {oracle:.4}"
    );
    // Reference-table relation: overestimating the temperature by 2x costs
    // more than twice the underestimation error.
    assert!(
        high > 2.0 * low,
        "expected high {high:.4} > 2x low {low:.4}"
    );
    criterion.finish();
}

#[test]
fn criterion_04_misspecified_normalization_law() {
    let criterion = Criterion::start(4, "misspecified normalization", 180.0);
    let config = ExperimentConfig {
        seed: 3,
        trials: 20,
        ..ExperimentKind::MisspecifiedC.default_config()
    };
    assert_eq!(config.matrix.m, 20);
    assert_eq!(config.matrix.normalization, 5.0);
    assert_eq!(config.c_ratios, vec![0.1, 0.3, 1.0, 3.0, 10.0]);
    assert!(config.misspec_samples >= 100_000);

    let report = run_misspecified_c(&config).unwrap();
    assert_eq!(report.failures, 0);
    let normalized = report.metric("tau_ratio_normalized");
    for (ratio, value) in normalized.grid.iter().zip(&normalized.mean) {
        assert!(
            (0.95..=1.05).contains(value),
            "tau ratio at misspecification {ratio}: {value:.4} outside [0.95, 1.05]"
        );
    }
    let directional = report.metric("directional_error");
    let max = directional.mean.iter().copied().fold(f64::MIN, f64::max);
    let min = directional.mean.iter().copied().fold(f64::MAX, f64::min);
    assert!(
        max / min < 1.5,
        "directional error varies across ratios: {min:.3e} to {max:.3e}"
    );
    criterion.finish();
}

#[test]
fn criterion_05_markov_convergence_slopes() {
    let criterion = Criterion::start(5, "Markov-game convergence", 600.0);
    let config = ExperimentConfig {
        seed: 4,
        trials: 50,
        ..ExperimentConfig::default()
    };
    let report = run_convergence_markov(&config).unwrap();
    assert_eq!(report.failures.iter().sum::<u64>(), 0);
    for name in ["theta_error", "tau_error", "reward_error"] {
        let slope = report.slope(name);
        assert!(
            (-0.65..=-0.4).contains(&slope),
            "{name} slope {slope:.3} outside [-0.65, -0.4]"
        );
    }
    criterion.finish();
}

#[test]
fn criterion_06_unknown_dynamics_robustness() {
    let criterion = Criterion::start(6, "unknown-dynamics robustness", 600.0);
    let config = ExperimentConfig {
        seed: 5,
        trials: 50,
        ..ExperimentConfig::default()
    };
    let report = run_unknown_dynamics(&config).unwrap();
    assert_eq!(report.failures.iter().sum::<u64>(), 0);
    let estimated_slope = report.slope("reward_error_estimated_p");
    assert!(
        (-0.65..=-0.4).contains(&estimated_slope),
        "estimated-P slope {estimated_slope:.3} outside [-0.65, -0.4]"
    );
    let known = report
        .metric("reward_error_known_p")
        .mean
        .last()
        .copied()
        .unwrap();
    let estimated = report
        .metric("reward_error_estimated_p")
        .mean
        .last()
        .copied()
        .unwrap();
    assert!(
        estimated <= 1.2 * known,
        "estimated-P error {estimated:.4} exceeds 1.2x known-P {known:.4} at the largest K"
    );
    criterion.finish();
}

#[test]
fn criterion_07_confidence_set_coverage() {
    let criterion = Criterion::start(7, "confidence-set coverage", 120.0);
    let trials = 200;
    let n = 10_000;
    let mut contained = 0;
    for trial in 0..trials {
        let game_seed = rng::subseed(6, "coverage-game", &[trial]);
        let spec = generate_matrix_game(10, 10, 5, 2.0, 1.0, game_seed).unwrap();
        let solution = solve_matrix_qre(&spec.payoff(), 2.0, &SolverConfig::exact()).unwrap();
        // Population quantities taken from the ground truth.
        let xi = solution
            .policy
            .mu
            .iter()
            .chain(solution.policy.nu.iter())
            .copied()
            .fold(f64::INFINITY, f64::min);
        let config = ConfidenceConfig {
            delta: 0.05,
            xi,
            feature_bound: spec.features.bound(),
            normalization: 1.0,
            tau_max: 2.0,
            m: 10,
            n: 10,
            num_samples: n,
        };
        let kappa = confidence_threshold(&config).unwrap();

        let sample_seed = rng::subseed(6, "coverage-play", &[trial]);
        let sample = sample_matrix_play(&solution.policy, n, sample_seed).unwrap();
        let empirical = empirical_policies(&sample, default_floor(n)).unwrap();
        let system = build_system(&spec.features, &empirical.policy).unwrap();
        if confidence_contains(&system, &spec.theta_star, 2.0, kappa, 1.0) {
            contained += 1;
        }
    }
    let frequency = contained as f64 / trials as f64;
    assert!(
        frequency >= 0.95,
        "containment frequency {frequency:.3} below 0.95 ({contained}/{trials})"
    );
    criterion.finish();
}

#[test]
fn criterion_08_bilinear_consistency_and_ambiguity() {
    let criterion = Criterion::start(8, "bilinear consistency and ambiguity", 60.0);
    for seed in 0..5 {
        let spec = generate_matrix_game(10, 10, 5, 2.0, 1.0, 7_000 + seed).unwrap();
        let solution = solve_matrix_qre(&spec.payoff(), 2.0, &SolverConfig::exact()).unwrap();
        let system = build_system(&spec.features, &solution.policy).unwrap();

        let base = system.residual(&spec.theta_star, spec.tau_star);
        assert!(base < 1e-8, "seed {seed}: exact residual {base:.3e}");
        // The scaled pair leaves the (rescaled) residual untouched: both sit
        // at numerical zero and obey exact positive homogeneity.
        for k in [0.1, 10.0] {
            let scaled = system.residual(&(&spec.theta_star * k), spec.tau_star * k);
            assert!(
                (scaled - k * base).abs() <= 1e-10 * (1.0 + k * base),
                "seed {seed} k {k}: residual {scaled:.3e} vs scaled base {:.3e}",
                k * base
            );
            assert!(
                scaled < 1e-7,
                "seed {seed} k {k}: scaled residual {scaled:.3e}"
            );
        }

        // Uniform play: y = 0 and joint estimation must refuse.
        let uniform_system = build_system(&spec.features, &JointPolicy::uniform(10, 10)).unwrap();
        assert_eq!(uniform_system.y.amax(), 0.0);
        assert!(!check_identifiability(&uniform_system, 5).identifiable);
        assert!(matches!(
            nls_estimate(&uniform_system, 1.0),
            Err(Error::NonUniformity)
        ));
    }
    criterion.finish();
}

#[test]
fn criterion_09_solver_certificates_and_roundtrip() {
    let criterion = Criterion::start(9, "solver certificates", 120.0);

    // Test-local softmax as the independent oracle for the substitution check.
    let oracle_response = |q: &DMatrix<f64>, policy: &JointPolicy, tau: f64| -> JointPolicy {
        let softmax = |scores: Vec<f64>| -> DVector<f64> {
            let max = scores.iter().copied().fold(f64::MIN, f64::max);
            let weights: Vec<f64> = scores.iter().map(|z| ((z - max) / 1.0).exp()).collect();
            let total: f64 = weights.iter().sum();
            DVector::from_vec(weights.into_iter().map(|w| w / total).collect())
        };
        let mu_scores: Vec<f64> = (0..q.nrows())
            .map(|a| {
                (0..q.ncols())
                    .map(|b| q[(a, b)] * policy.nu[b])
                    .sum::<f64>()
                    / tau
            })
            .collect();
        let nu_scores: Vec<f64> = (0..q.ncols())
            .map(|b| {
                -(0..q.nrows())
                    .map(|a| q[(a, b)] * policy.mu[a])
                    .sum::<f64>()
                    / tau
            })
            .collect();
        JointPolicy::new(softmax(mu_scores), softmax(nu_scores))
    };

    let mut stream = rng::stream(8, "certificate-batch", &[]);
    for trial in 0..30 {
        let m = 2 + trial % 9;
        let n = 2 + (trial * 3) % 9;
        let scale = [0.5, 1.0, 3.0][trial % 3];
        let q = DMatrix::from_fn(m, n, |_, _| scale * rng::standard_normal(&mut stream));
        let tau = [0.5, 1.0, 2.0, 5.0][trial % 4];
        let solution = solve_matrix_qre(&q, tau, &SolverConfig::default()).unwrap();
        assert!(solution.converged, "trial {trial} did not converge");
        let response = oracle_response(&q, &solution.policy, tau);
        let gap = (&solution.policy.mu - &response.mu)
            .amax()
            .max((&solution.policy.nu - &response.nu).amax());
        assert!(gap < 1e-9, "trial {trial}: substitution residual {gap:.3e}");
    }

    // Forward solve round-trips the generated Markov games.
    for seed in 0..3 {
        let spec = generate_markov_game(8, 5, 5, 6, 1.5, 1.0, 0.9, 8_500 + seed).unwrap();
        let equilibrium = spec.solve_equilibrium(&SolverConfig::exact()).unwrap();
        let solved = forward_solve_markov(
            &spec.rewards,
            &spec.transitions,
            spec.gamma,
            spec.tau_star,
            &SolverConfig::exact(),
        )
        .unwrap();
        assert!(solved.converged);
        assert!(
            (&solved.v - &equilibrium.v).amax() < 1e-6,
            "seed {seed}: V gap"
        );
        for s in 0..8 {
            assert!(
                (&solved.q[s] - &equilibrium.q[s]).amax() < 1e-6,
                "seed {seed}: Q gap"
            );
            assert!(
                (&solved.policies[s].mu - &equilibrium.policies[s].mu).amax() < 1e-6
                    && (&solved.policies[s].nu - &equilibrium.policies[s].nu).amax() < 1e-6,
                "seed {seed}: policy gap at state {s}"
            );
        }
    }
    criterion.finish();
}

#[test]
fn criterion_10_feature_misspecification_decay() {
    let criterion = Criterion::start(10, "feature misspecification", 300.0);
    let config = ExperimentConfig {
        seed: 9,
        trials: 20,
        grid: Some(vec![1_000, 4_642, 21_544, 100_000]),
        d_est: 4,
        ..ExperimentConfig::default()
    };
    let report = run_feature_misspecification(&config).unwrap();
    assert_eq!(report.failures.iter().sum::<u64>(), 0);
    for name in ["directional_error", "behavioral_error"] {
        let metric = report.metric(name);
        let first = *metric.mean.first().unwrap();
        let last = *metric.mean.last().unwrap();
        assert!(
            last < first,
            "{name} did not decay: {first:.4} at N=1e3 vs {last:.4} at N=1e5"
        );
    }
    criterion.finish();
}
