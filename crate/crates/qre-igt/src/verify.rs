//! Built-in self-test battery behind the `verify` CLI subcommand.
//!
//! Each check re-derives an expected value through an independent route (hand
//! arithmetic, brute-force loops, substitution into the defining equations)
//! and compares the library against it. The long-running statistical sweeps
//! live in the acceptance test suite, not here; this battery is meant to
//! finish in seconds.

use nalgebra::{DMatrix, DVector};

use crate::estimator::{
    confidence_contains, confidence_threshold, nls_estimate, recover_markov_rewards,
    standard_igt_estimate, ConfidenceConfig, DynamicsMode,
};
use crate::experiments::fit_loglog_slope;
use crate::game::{
    build_payoff_matrix, generate_markov_game, generate_matrix_game, FeatureMap, RewardTable,
    TransitionTensor,
};
use crate::rng;
use crate::sampling::{
    empirical_policies, estimate_transitions, sample_markov_dataset, sample_matrix_play,
    MatrixSample,
};
use crate::solver::{
    entropy, forward_solve_markov, logit_response, policies_from_q_tables, regularized_value,
    solve_matrix_qre, JointPolicy, SolverConfig,
};
use crate::system::{build_markov_system, build_system, check_identifiability};

/// Outcome of one self-check.
pub struct Check {
    pub name: &'static str,
    pub outcome: Result<(), String>,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.outcome.is_ok()
    }
}

type CheckResult = Result<(), String>;

fn ensure(condition: bool, detail: impl FnOnce() -> String) -> CheckResult {
    if condition {
        Ok(())
    } else {
        Err(detail())
    }
}

fn close(actual: f64, expected: f64, tol: f64, label: &str) -> CheckResult {
    ensure((actual - expected).abs() <= tol, || {
        format!("{label}: got {actual}, expected {expected} (tol {tol})")
    })
}

fn run(name: &'static str, body: impl FnOnce() -> CheckResult + std::panic::UnwindSafe) -> Check {
    let outcome = match std::panic::catch_unwind(body) {
        Ok(result) => result,
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panicked".to_string());
            Err(format!("panicked: {message}"))
        }
    };
    Check { name, outcome }
}

/// Runs the whole battery.
pub fn run_all() -> Vec<Check> {
    let mut checks = Vec::new();
    checks.extend(solver_checks());
    checks.extend(game_checks());
    checks.extend(sampling_checks());
    checks.extend(system_checks());
    checks.extend(estimator_checks());
    checks.extend(slope_checks());
    checks
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(Check::passed)
}

fn solver_checks() -> Vec<Check> {
    vec![
        run(
            "entropy: uniform, point mass, and hand-computed sum",
            || {
                close(
                    entropy(&DVector::from_element(4, 0.25)).map_err(|e| e.to_string())?,
                    4.0_f64.ln(),
                    1e-15,
                    "uniform entropy",
                )?;
                close(
                    entropy(&DVector::from_vec(vec![0.0, 1.0])).map_err(|e| e.to_string())?,
                    0.0,
                    0.0,
                    "point-mass entropy",
                )?;
                let two_term = -(0.3_f64 * 0.3_f64.ln()) - (0.7_f64 * 0.7_f64.ln());
                close(
                    entropy(&DVector::from_vec(vec![0.3, 0.7])).map_err(|e| e.to_string())?,
                    two_term,
                    1e-15,
                    "two-term entropy",
                )?;
                ensure(
                    entropy(&DVector::from_vec(vec![-0.1, 1.1])).is_err(),
                    || "negative entries must be rejected".to_string(),
                )
            },
        ),
        run(
            "regularized value: cancellation, tau=0, and loop oracle",
            || {
                let uniform = JointPolicy::uniform(3, 3);
                close(
                    regularized_value(&DMatrix::zeros(3, 3), &uniform, 7.0)
                        .map_err(|e| e.to_string())?,
                    0.0,
                    1e-15,
                    "zero game, symmetric uniform",
                )?;
                let q = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]);
                let policy = JointPolicy::new(
                    DVector::from_vec(vec![0.3, 0.7]),
                    DVector::from_vec(vec![0.6, 0.4]),
                );
                let mut bilinear = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        bilinear += policy.mu[a] * q[(a, b)] * policy.nu[b];
                    }
                }
                close(
                    regularized_value(&q, &policy, 0.0).map_err(|e| e.to_string())?,
                    bilinear,
                    1e-15,
                    "tau=0 bilinear payoff",
                )?;
                let tau = 1.3;
                let h = |p: &DVector<f64>| -p.iter().map(|x| x * x.ln()).sum::<f64>();
                close(
                    regularized_value(&q, &policy, tau).map_err(|e| e.to_string())?,
                    bilinear + tau * h(&policy.mu) - tau * h(&policy.nu),
                    1e-14,
                    "loop-evaluated regularized value",
                )
            },
        ),
        run(
            "logit response: zero game, huge tau, matching pennies",
            || {
                let any = JointPolicy::new(
                    DVector::from_vec(vec![0.8, 0.1, 0.1]),
                    DVector::from_vec(vec![0.2, 0.3, 0.5]),
                );
                let response =
                    logit_response(&DMatrix::zeros(3, 3), &any, 1.0).map_err(|e| e.to_string())?;
                for p in response.mu.iter().chain(response.nu.iter()) {
                    close(*p, 1.0 / 3.0, 1e-15, "zero-game response")?;
                }
                let mut stream = rng::stream(100, "verify/logit", &[]);
                let q = DMatrix::from_fn(4, 4, |_, _| rng::standard_normal(&mut stream));
                let response = logit_response(&q, &JointPolicy::uniform(4, 4), 1e9)
                    .map_err(|e| e.to_string())?;
                for p in response.mu.iter().chain(response.nu.iter()) {
                    close(*p, 0.25, 1e-6, "huge-tau response")?;
                }
                let pennies = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
                let response = logit_response(&pennies, &JointPolicy::uniform(2, 2), 1.0)
                    .map_err(|e| e.to_string())?;
                for p in response.mu.iter().chain(response.nu.iter()) {
                    close(*p, 0.5, 1e-15, "matching-pennies response")?;
                }
                Ok(())
            },
        ),
        run(
            "matrix solve: zero game, matching pennies, certificate",
            || {
                let config = SolverConfig::default();
                let solution = solve_matrix_qre(&DMatrix::zeros(5, 4), 2.0, &config)
                    .map_err(|e| e.to_string())?;
                ensure(
                    solution.converged && solution.iterations == 1 && solution.residual == 0.0,
                    || {
                        format!(
                            "zero game: iter {}, residual {}",
                            solution.iterations, solution.residual
                        )
                    },
                )?;

                let pennies = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
                let solution =
                    solve_matrix_qre(&pennies, 1.0, &config).map_err(|e| e.to_string())?;
                ensure(solution.converged && solution.residual < 1e-9, || {
                    format!("pennies residual {}", solution.residual)
                })?;
                for p in solution.policy.mu.iter() {
                    close(*p, 0.5, 1e-9, "pennies policy")?;
                }

                let mut stream = rng::stream(101, "verify/certificate", &[]);
                let q = DMatrix::from_fn(7, 6, |_, _| 2.0 * rng::standard_normal(&mut stream));
                let solution = solve_matrix_qre(&q, 0.8, &config).map_err(|e| e.to_string())?;
                ensure(solution.converged, || {
                    "random solve did not converge".to_string()
                })?;
                let response =
                    logit_response(&q, &solution.policy, 0.8).map_err(|e| e.to_string())?;
                let gap = (&solution.policy.mu - &response.mu)
                    .amax()
                    .max((&solution.policy.nu - &response.nu).amax());
                ensure(gap < 1e-9, || format!("certificate gap {gap}"))
            },
        ),
        run(
            "per-state solve: zero tables and single-state reduction",
            || {
                let zeros: Vec<DMatrix<f64>> = (0..3).map(|_| DMatrix::zeros(3, 3)).collect();
                let solutions = policies_from_q_tables(&zeros, 1.0, &SolverConfig::default())
                    .map_err(|e| e.to_string())?;
                for s in &solutions {
                    for p in s.policy.mu.iter() {
                        close(*p, 1.0 / 3.0, 1e-12, "zero-table policy")?;
                    }
                }
                let mut stream = rng::stream(102, "verify/per-state", &[]);
                let q = DMatrix::from_fn(3, 4, |_, _| rng::standard_normal(&mut stream));
                let single =
                    policies_from_q_tables(std::slice::from_ref(&q), 1.5, &SolverConfig::default())
                        .map_err(|e| e.to_string())?;
                let direct = solve_matrix_qre(&q, 1.5, &SolverConfig::default())
                    .map_err(|e| e.to_string())?;
                ensure(single[0].policy == direct.policy, || {
                    "single-state solve differs from the matrix solve".to_string()
                })
            },
        ),
        run(
            "markov solve: myopic discount, zero rewards, roundtrip",
            || {
                let mut stream = rng::stream(103, "verify/markov", &[]);
                let rewards = RewardTable::new(
                    2,
                    3,
                    3,
                    (0..18).map(|_| rng::standard_normal(&mut stream)).collect(),
                )
                .map_err(|e| e.to_string())?;
                let transitions = TransitionTensor::uniform(2, 3, 3);
                let myopic = forward_solve_markov(
                    &rewards,
                    &transitions,
                    0.0,
                    1.0,
                    &SolverConfig::default(),
                )
                .map_err(|e| e.to_string())?;
                ensure(myopic.converged && myopic.iterations == 1, || {
                    format!("myopic iterations {}", myopic.iterations)
                })?;
                for s in 0..2 {
                    for a in 0..3 {
                        for b in 0..3 {
                            ensure(myopic.q[s][(a, b)] == rewards.get(s, a, b), || {
                                "gamma=0 must return Q = r exactly".to_string()
                            })?;
                        }
                    }
                }

                let zero = forward_solve_markov(
                    &RewardTable::zeros(3, 2, 2),
                    &TransitionTensor::uniform(3, 2, 2),
                    0.9,
                    1.0,
                    &SolverConfig::default(),
                )
                .map_err(|e| e.to_string())?;
                for s in 0..3 {
                    close(zero.v[s], 0.0, 1e-9, "zero-reward value")?;
                    close(zero.policies[s].mu[0], 0.5, 1e-9, "zero-reward policy")?;
                }

                let spec = generate_markov_game(4, 3, 3, 4, 1.5, 1.0, 0.9, 1040)
                    .map_err(|e| e.to_string())?;
                let equilibrium = spec
                    .solve_equilibrium(&SolverConfig::exact())
                    .map_err(|e| e.to_string())?;
                let solved = forward_solve_markov(
                    &spec.rewards,
                    &spec.transitions,
                    spec.gamma,
                    spec.tau_star,
                    &SolverConfig::exact(),
                )
                .map_err(|e| e.to_string())?;
                let v_gap = (&solved.v - &equilibrium.v).amax();
                let q_gap: f64 = (0..4)
                    .map(|s| (&solved.q[s] - &equilibrium.q[s]).amax())
                    .fold(0.0, f64::max);
                ensure(v_gap < 1e-6 && q_gap < 1e-6, || {
                    format!("roundtrip gaps: v {v_gap}, q {q_gap}")
                })
            },
        ),
    ]
}

fn game_checks() -> Vec<Check> {
    vec![
        run(
            "payoff build: zero theta, constant feature, loop oracle",
            || {
                let mut stream = rng::stream(104, "verify/payoff", &[]);
                let values: Vec<f64> = (0..3 * 3 * 2)
                    .map(|_| rng::standard_normal(&mut stream))
                    .collect();
                let features =
                    FeatureMap::matrix(3, 3, 2, values.clone()).map_err(|e| e.to_string())?;
                let zero = build_payoff_matrix(&features, &DVector::zeros(2))
                    .map_err(|e| e.to_string())?;
                ensure(zero.iter().all(|v| *v == 0.0), || {
                    "zero theta must give the zero matrix".to_string()
                })?;

                let ones = FeatureMap::matrix(2, 2, 1, vec![1.0; 4]).map_err(|e| e.to_string())?;
                let threes = build_payoff_matrix(&ones, &DVector::from_vec(vec![3.0]))
                    .map_err(|e| e.to_string())?;
                ensure(threes.iter().all(|v| *v == 3.0), || {
                    "constant feature must give all threes".to_string()
                })?;

                let theta = DVector::from_vec(vec![1.3, -0.4]);
                let q = build_payoff_matrix(&features, &theta).map_err(|e| e.to_string())?;
                for a in 0..3 {
                    for b in 0..3 {
                        let start = (a * 3 + b) * 2;
                        let expected = values[start] * 1.3 + values[start + 1] * -0.4;
                        close(q[(a, b)], expected, 1e-14, "brute-force dot product")?;
                    }
                }
                Ok(())
            },
        ),
        run(
            "matrix generator: determinism, normalization, bound",
            || {
                let a = generate_matrix_game(10, 10, 5, 2.0, 1.0, 7).map_err(|e| e.to_string())?;
                let b = generate_matrix_game(10, 10, 5, 2.0, 1.0, 7).map_err(|e| e.to_string())?;
                ensure(a == b, || "same seed must give identical specs".to_string())?;
                close(a.theta_star.norm(), 1.0, 1e-12, "theta norm")?;
                ensure(a.features.bound() == a.features.max_feature_norm(), || {
                    "stored feature bound must equal the recomputed maximum".to_string()
                })?;
                for aa in 0..10 {
                    for bb in 0..10 {
                        let norm: f64 = a
                            .features
                            .phi(0, aa, bb)
                            .iter()
                            .map(|v| v * v)
                            .sum::<f64>()
                            .sqrt();
                        ensure(norm <= a.features.bound() + 1e-15, || {
                            "bound must dominate".to_string()
                        })?;
                    }
                }
                Ok(())
            },
        ),
        run(
            "markov generator: rows, determinism, Bellman inversion",
            || {
                let spec = generate_markov_game(4, 3, 3, 4, 1.5, 1.0, 0.9, 8)
                    .map_err(|e| e.to_string())?;
                let again = generate_markov_game(4, 3, 3, 4, 1.5, 1.0, 0.9, 8)
                    .map_err(|e| e.to_string())?;
                ensure(spec == again, || {
                    "same seed must give identical specs".to_string()
                })?;
                for s in 0..4 {
                    for a in 0..3 {
                        for b in 0..3 {
                            let total: f64 = spec.transitions.row(s, a, b).iter().sum();
                            close(total, 1.0, 1e-12, "transition row sum")?;
                        }
                    }
                }
                let equilibrium = spec
                    .solve_equilibrium(&SolverConfig::exact())
                    .map_err(|e| e.to_string())?;
                for s in 0..4 {
                    for a in 0..3 {
                        for b in 0..3 {
                            let mut future = 0.0;
                            for (s2, p) in spec.transitions.row(s, a, b).iter().enumerate() {
                                future += p * equilibrium.v[s2];
                            }
                            let expected = equilibrium.q[s][(a, b)] - 0.9 * future;
                            close(
                                spec.rewards.get(s, a, b),
                                expected,
                                1e-9,
                                "Bellman inversion",
                            )?;
                        }
                    }
                }
                Ok(())
            },
        ),
    ]
}

fn sampling_checks() -> Vec<Check> {
    vec![
        run(
            "play sampling: point mass, determinism, concentration",
            || {
                let point = JointPolicy::new(
                    DVector::from_vec(vec![0.0, 1.0]),
                    DVector::from_vec(vec![1.0, 0.0]),
                );
                let sample = sample_matrix_play(&point, 100, 1).map_err(|e| e.to_string())?;
                ensure(sample.counts_a == vec![0, 100], || {
                    "point mass must concentrate".to_string()
                })?;

                let uniform = JointPolicy::uniform(10, 10);
                let first = sample_matrix_play(&uniform, 1_000, 2).map_err(|e| e.to_string())?;
                let second = sample_matrix_play(&uniform, 1_000, 2).map_err(|e| e.to_string())?;
                ensure(first == second, || {
                    "same seed must give identical counts".to_string()
                })?;

                let big = sample_matrix_play(&uniform, 1_000_000, 3).map_err(|e| e.to_string())?;
                for c in big.counts_a.iter().chain(big.counts_b.iter()) {
                    close(*c as f64 / 1e6, 0.1, 0.005, "empirical frequency at N=1e6")?;
                }
                Ok(())
            },
        ),
        run("frequency estimator: plain and floored arithmetic", || {
            let sample =
                MatrixSample::new(vec![5, 5], vec![3, 7], 10).map_err(|e| e.to_string())?;
            let plain = empirical_policies(&sample, 0.0).map_err(|e| e.to_string())?;
            ensure(plain.policy.mu == DVector::from_vec(vec![0.5, 0.5]), || {
                "counts [5,5] must give [0.5, 0.5]".to_string()
            })?;

            let sample =
                MatrixSample::new(vec![10, 0], vec![5, 5], 10).map_err(|e| e.to_string())?;
            let floored = empirical_policies(&sample, 1.0 / 20.0).map_err(|e| e.to_string())?;
            ensure(floored.floored, || "flooring must be flagged".to_string())?;
            close(floored.policy.mu[0], 20.0 / 21.0, 1e-15, "floored entry 0")?;
            close(floored.policy.mu[1], 1.0 / 21.0, 1e-15, "floored entry 1")
        }),
        run(
            "frequency estimator: concentration bound holds on >= 95% of trials",
            || {
                // Monte Carlo check of the L1 policy-error bound at delta = 0.05.
                let spec =
                    generate_matrix_game(10, 10, 5, 2.0, 1.0, 9).map_err(|e| e.to_string())?;
                let solution = solve_matrix_qre(&spec.payoff(), 2.0, &SolverConfig::default())
                    .map_err(|e| e.to_string())?;
                let n = 10_000u64;
                let epsilon = (2.0 * (2.0 * 1024.0_f64 / 0.05).ln() / n as f64).sqrt();
                let mut hits = 0;
                let trials = 40;
                for t in 0..trials {
                    let sample = sample_matrix_play(&solution.policy, n, 500 + t)
                        .map_err(|e| e.to_string())?;
                    let empirical = empirical_policies(&sample, 0.0).map_err(|e| e.to_string())?;
                    let l1 = (&empirical.policy.mu - &solution.policy.mu).abs().sum();
                    if l1 <= epsilon {
                        hits += 1;
                    }
                }
                ensure(hits as f64 >= 0.95 * trials as f64, || {
                    format!("bound held on only {hits}/{trials} trials")
                })
            },
        ),
        run(
            "markov sampling: bookkeeping identities and total count",
            || {
                let spec = generate_markov_game(3, 3, 3, 4, 1.5, 1.0, 0.9, 10)
                    .map_err(|e| e.to_string())?;
                let equilibrium = spec
                    .solve_equilibrium(&SolverConfig::default())
                    .map_err(|e| e.to_string())?;
                let data = sample_markov_dataset(&spec, &equilibrium.policies, 150, 4)
                    .map_err(|e| e.to_string())?;
                ensure(data.total() == 3 * 150, || {
                    "K must equal S * N_per_state".to_string()
                })?;
                for s in 0..3 {
                    for a in 0..3 {
                        for b in 0..3 {
                            let row_sum: u64 = data.transition_counts(s, a, b).iter().sum();
                            ensure(row_sum == data.pair_count(s, a, b), || {
                                "transition counts must sum to the pair count".to_string()
                            })?;
                        }
                    }
                }
                Ok(())
            },
        ),
        run("transition estimation: smoothing prior and raw MLE", || {
            let spec =
                generate_markov_game(3, 2, 2, 3, 1.0, 1.0, 0.5, 11).map_err(|e| e.to_string())?;
            let point = JointPolicy::new(
                DVector::from_vec(vec![1.0, 0.0]),
                DVector::from_vec(vec![1.0, 0.0]),
            );
            let data = sample_markov_dataset(&spec, &[point.clone(), point.clone(), point], 40, 5)
                .map_err(|e| e.to_string())?;
            let smoothed = estimate_transitions(&data, 1.0).map_err(|e| e.to_string())?;
            for p in smoothed.row(0, 1, 1) {
                close(*p, 1.0 / 3.0, 1e-15, "unvisited pair smoothing")?;
            }
            smoothed.validate().map_err(|e| e.to_string())?;
            ensure(estimate_transitions(&data, 0.0).is_err(), || {
                "alpha = 0 with unvisited pairs must error".to_string()
            })?;

            let spec =
                generate_markov_game(2, 2, 2, 3, 1.0, 1.0, 0.5, 12).map_err(|e| e.to_string())?;
            let equilibrium = spec
                .solve_equilibrium(&SolverConfig::default())
                .map_err(|e| e.to_string())?;
            let data = sample_markov_dataset(&spec, &equilibrium.policies, 3_000, 6)
                .map_err(|e| e.to_string())?;
            let raw = estimate_transitions(&data, 0.0).map_err(|e| e.to_string())?;
            for s in 0..2 {
                for a in 0..2 {
                    for b in 0..2 {
                        let counts = data.transition_counts(s, a, b);
                        let total: u64 = counts.iter().sum();
                        for (p, c) in raw.row(s, a, b).iter().zip(counts) {
                            close(*p, *c as f64 / total as f64, 1e-15, "raw MLE")?;
                        }
                    }
                }
            }
            Ok(())
        }),
    ]
}

fn system_checks() -> Vec<Check> {
    vec![
        run(
            "system build: uniform play, exact identity, loop oracle",
            || {
                let spec =
                    generate_matrix_game(10, 10, 5, 2.0, 1.0, 13).map_err(|e| e.to_string())?;
                let uniform = build_system(&spec.features, &JointPolicy::uniform(10, 10))
                    .map_err(|e| e.to_string())?;
                ensure(uniform.y.amax() == 0.0, || {
                    "uniform play must zero the log-ratios".to_string()
                })?;
                ensure(uniform.x.nrows() == 18, || "m + n - 2 rows".to_string())?;

                let solution = solve_matrix_qre(&spec.payoff(), 2.0, &SolverConfig::exact())
                    .map_err(|e| e.to_string())?;
                let system =
                    build_system(&spec.features, &solution.policy).map_err(|e| e.to_string())?;
                let residual = system.residual(&spec.theta_star, spec.tau_star);
                ensure(residual < 1e-8, || {
                    format!("exact-policy residual {residual}")
                })?;

                // Row oracle on a small instance.
                let mut stream = rng::stream(105, "verify/system", &[]);
                let values: Vec<f64> = (0..3 * 3 * 2)
                    .map(|_| rng::standard_normal(&mut stream))
                    .collect();
                let features =
                    FeatureMap::matrix(3, 3, 2, values.clone()).map_err(|e| e.to_string())?;
                let policy = JointPolicy::new(
                    DVector::from_vec(vec![0.5, 0.3, 0.2]),
                    DVector::from_vec(vec![0.25, 0.5, 0.25]),
                );
                let system = build_system(&features, &policy).map_err(|e| e.to_string())?;
                let phi = |a: usize, b: usize, j: usize| values[(a * 3 + b) * 2 + j];
                for a in 1..3 {
                    for j in 0..2 {
                        let mut expected = 0.0;
                        for b in 0..3 {
                            expected += policy.nu[b] * (phi(a, b, j) - phi(0, b, j));
                        }
                        close(system.x[(a - 1, j)], expected, 1e-14, "A-row oracle")?;
                    }
                }
                Ok(())
            },
        ),
        run(
            "markov system: single-state reduction and stacked identity",
            || {
                let mut stream = rng::stream(106, "verify/markov-system", &[]);
                let values: Vec<f64> = (0..3 * 3 * 2)
                    .map(|_| rng::standard_normal(&mut stream))
                    .collect();
                let matrix_features =
                    FeatureMap::matrix(3, 3, 2, values.clone()).map_err(|e| e.to_string())?;
                let markov_features =
                    FeatureMap::markov(1, 3, 3, 2, values).map_err(|e| e.to_string())?;
                let policy = JointPolicy::new(
                    DVector::from_vec(vec![0.5, 0.25, 0.25]),
                    DVector::from_vec(vec![0.4, 0.3, 0.3]),
                );
                let single = build_system(&matrix_features, &policy).map_err(|e| e.to_string())?;
                let stacked =
                    build_markov_system(&markov_features, &[policy]).map_err(|e| e.to_string())?;
                ensure(single.x == stacked.x && single.y == stacked.y, || {
                    "single-state stack must equal the matrix build".to_string()
                })?;

                let spec = generate_markov_game(8, 5, 5, 6, 1.5, 1.0, 0.9, 14)
                    .map_err(|e| e.to_string())?;
                let equilibrium = spec
                    .solve_equilibrium(&SolverConfig::exact())
                    .map_err(|e| e.to_string())?;
                let system = build_markov_system(&spec.features, &equilibrium.policies)
                    .map_err(|e| e.to_string())?;
                ensure(system.x.nrows() == 8 * 8, || {
                    "S * (m + n - 2) rows".to_string()
                })?;
                let residual = system.residual(&spec.theta_star, spec.tau_star);
                ensure(residual < 1e-7, || {
                    format!("stacked exact residual {residual}")
                })
            },
        ),
        run(
            "identifiability: non-uniformity, rank deficiency, generic case",
            || {
                let spec =
                    generate_matrix_game(5, 5, 3, 1.0, 1.0, 15).map_err(|e| e.to_string())?;
                let uniform = build_system(&spec.features, &JointPolicy::uniform(5, 5))
                    .map_err(|e| e.to_string())?;
                let report = check_identifiability(&uniform, 3);
                ensure(!report.identifiable && report.y_norm == 0.0, || {
                    "uniform play must fail the non-uniformity condition".to_string()
                })?;

                let mut values = Vec::new();
                for a in 0..5 {
                    for b in 0..5 {
                        let phi = spec.features.phi(0, a, b);
                        values.extend_from_slice(phi);
                        values.push(phi[1]);
                    }
                }
                let dup = FeatureMap::matrix(5, 5, 4, values).map_err(|e| e.to_string())?;
                let solution = solve_matrix_qre(&spec.payoff(), 1.0, &SolverConfig::default())
                    .map_err(|e| e.to_string())?;
                let system = build_system(&dup, &solution.policy).map_err(|e| e.to_string())?;
                let report = check_identifiability(&system, 4);
                ensure(report.rank < 4 && !report.identifiable, || {
                    format!("duplicated column must drop rank, got {}", report.rank)
                })?;

                for seed in 200..205 {
                    let spec = generate_matrix_game(10, 10, 5, 2.0, 1.0, seed)
                        .map_err(|e| e.to_string())?;
                    let solution = solve_matrix_qre(&spec.payoff(), 2.0, &SolverConfig::default())
                        .map_err(|e| e.to_string())?;
                    let system = build_system(&spec.features, &solution.policy)
                        .map_err(|e| e.to_string())?;
                    ensure(check_identifiability(&system, 5).identifiable, || {
                        format!("generic game {seed} should be identifiable")
                    })?;
                }
                Ok(())
            },
        ),
    ]
}

fn estimator_checks() -> Vec<Check> {
    vec![
        run("joint estimation: noiseless exact recovery", || {
            let spec = generate_matrix_game(10, 10, 5, 2.0, 1.0, 16).map_err(|e| e.to_string())?;
            let solution = solve_matrix_qre(&spec.payoff(), 2.0, &SolverConfig::exact())
                .map_err(|e| e.to_string())?;
            let system =
                build_system(&spec.features, &solution.policy).map_err(|e| e.to_string())?;
            let estimate = nls_estimate(&system, 1.0).map_err(|e| e.to_string())?;
            let theta_gap = (&estimate.theta_hat - &spec.theta_star).norm();
            let tau_gap = (estimate.tau_hat - 2.0).abs();
            ensure(theta_gap < 1e-8 && tau_gap < 1e-8, || {
                format!("noiseless recovery gaps: theta {theta_gap}, tau {tau_gap}")
            })
        }),
        run(
            "joint estimation: uniform play raises non-uniformity",
            || {
                let spec =
                    generate_matrix_game(4, 4, 3, 1.0, 1.0, 17).map_err(|e| e.to_string())?;
                let system = build_system(&spec.features, &JointPolicy::uniform(4, 4))
                    .map_err(|e| e.to_string())?;
                ensure(
                    matches!(
                        nls_estimate(&system, 1.0),
                        Err(crate::error::Error::NonUniformity)
                    ),
                    || "uniform play must raise the non-uniformity error".to_string(),
                )
            },
        ),
        run(
            "fixed-tau baseline: oracle exactness and scale bias",
            || {
                let spec =
                    generate_matrix_game(8, 8, 4, 2.0, 1.0, 18).map_err(|e| e.to_string())?;
                let solution = solve_matrix_qre(&spec.payoff(), 2.0, &SolverConfig::exact())
                    .map_err(|e| e.to_string())?;
                let system =
                    build_system(&spec.features, &solution.policy).map_err(|e| e.to_string())?;
                let oracle = standard_igt_estimate(&system, 2.0).map_err(|e| e.to_string())?;
                let gap = (&oracle - &spec.theta_star).norm();
                ensure(gap < 1e-8, || format!("oracle gap {gap}"))?;
                let doubled = standard_igt_estimate(&system, 4.0).map_err(|e| e.to_string())?;
                let bias_gap = (&doubled - &oracle * 2.0).amax();
                ensure(bias_gap < 1e-12, || format!("scale bias gap {bias_gap}"))
            },
        ),
        run(
            "markov recovery: noiseless rewards and zero-discount identity",
            || {
                let spec = generate_markov_game(4, 3, 3, 4, 1.5, 1.0, 0.9, 19)
                    .map_err(|e| e.to_string())?;
                let equilibrium = spec
                    .solve_equilibrium(&SolverConfig::exact())
                    .map_err(|e| e.to_string())?;
                let system = build_markov_system(&spec.features, &equilibrium.policies)
                    .map_err(|e| e.to_string())?;
                let recovery = recover_markov_rewards(
                    &system,
                    1.0,
                    &spec.features,
                    &equilibrium.policies,
                    &spec.transitions,
                    spec.gamma,
                    DynamicsMode::KnownP,
                )
                .map_err(|e| e.to_string())?;
                let reward_gap = recovery.r_hat.max_abs_diff(&spec.rewards);
                ensure(reward_gap < 1e-7, || {
                    format!("noiseless reward gap {reward_gap}")
                })?;

                let myopic = generate_markov_game(3, 3, 3, 4, 1.0, 1.0, 0.0, 20)
                    .map_err(|e| e.to_string())?;
                let equilibrium = myopic
                    .solve_equilibrium(&SolverConfig::exact())
                    .map_err(|e| e.to_string())?;
                let system = build_markov_system(&myopic.features, &equilibrium.policies)
                    .map_err(|e| e.to_string())?;
                let recovery = recover_markov_rewards(
                    &system,
                    1.0,
                    &myopic.features,
                    &equilibrium.policies,
                    &myopic.transitions,
                    0.0,
                    DynamicsMode::KnownP,
                )
                .map_err(|e| e.to_string())?;
                for s in 0..3 {
                    for a in 0..3 {
                        for b in 0..3 {
                            ensure(
                                recovery.r_hat.get(s, a, b) == recovery.q_hat[s][(a, b)],
                                || "gamma = 0 must return r = Q exactly".to_string(),
                            )?;
                        }
                    }
                }
                Ok(())
            },
        ),
        run(
            "confidence threshold: hand calculation, halving, monotonicity",
            || {
                let config = ConfidenceConfig {
                    delta: 0.05,
                    xi: 0.01,
                    feature_bound: 1.0,
                    normalization: 1.0,
                    tau_max: 5.0,
                    m: 10,
                    n: 10,
                    num_samples: 10_000,
                };
                let kappa = confidence_threshold(&config).map_err(|e| e.to_string())?;
                let eps = (2.0 * (2.0 * 1024.0_f64 / 0.05).ln() / 1e4).sqrt();
                let expected = (2.0 * 20.0_f64.sqrt() + 5.0 * 160.0_f64.sqrt() / 0.01).powi(2)
                    * (2.0 * eps).powi(2);
                close(kappa, expected, 1e-9 * expected, "threshold closed form")?;

                let doubled = ConfidenceConfig {
                    num_samples: 20_000,
                    ..config.clone()
                };
                let kappa_doubled = confidence_threshold(&doubled).map_err(|e| e.to_string())?;
                close(
                    kappa_doubled,
                    kappa / 2.0,
                    1e-12 * kappa,
                    "doubling N halves kappa",
                )?;

                let hotter = ConfidenceConfig {
                    tau_max: 6.0,
                    ..config.clone()
                };
                ensure(
                    confidence_threshold(&hotter).map_err(|e| e.to_string())? > kappa,
                    || "kappa must grow with tau_max".to_string(),
                )?;
                let wider = ConfidenceConfig { xi: 0.02, ..config };
                ensure(
                    confidence_threshold(&wider).map_err(|e| e.to_string())? < kappa,
                    || "kappa must shrink as the gap widens".to_string(),
                )
            },
        ),
        run(
            "confidence membership: truth accepted, sphere enforced",
            || {
                let spec =
                    generate_matrix_game(10, 10, 5, 2.0, 1.0, 21).map_err(|e| e.to_string())?;
                let solution = solve_matrix_qre(&spec.payoff(), 2.0, &SolverConfig::exact())
                    .map_err(|e| e.to_string())?;
                let system =
                    build_system(&spec.features, &solution.policy).map_err(|e| e.to_string())?;
                ensure(
                    confidence_contains(&system, &spec.theta_star, 2.0, 1e-12, 1.0),
                    || "the true pair must be contained at any positive threshold".to_string(),
                )?;
                ensure(
                    !confidence_contains(&system, &(&spec.theta_star * 1.5), 2.0, f64::MAX, 1.0),
                    || "off-sphere candidates must be rejected".to_string(),
                )
            },
        ),
        run("least squares: normal-equations orthogonality", || {
            let spec = generate_matrix_game(10, 10, 5, 1.0, 1.0, 22).map_err(|e| e.to_string())?;
            let solution = solve_matrix_qre(&spec.payoff(), 1.0, &SolverConfig::exact())
                .map_err(|e| e.to_string())?;
            let system =
                build_system(&spec.features, &solution.policy).map_err(|e| e.to_string())?;
            let estimate = nls_estimate(&system, 1.0).map_err(|e| e.to_string())?;
            let gradient = system.x.transpose() * (&system.x * &estimate.theta_ls - &system.y);
            ensure(gradient.amax() < 1e-8, || {
                format!("gradient {}", gradient.amax())
            })
        }),
    ]
}

fn slope_checks() -> Vec<Check> {
    vec![run(
        "slope fit: exact power law, constant, noisy synthetic",
        || {
            let sizes: Vec<f64> = vec![1e2, 1e3, 1e4, 1e5];
            let exact: Vec<f64> = sizes.iter().map(|n| 4.0 / n.sqrt()).collect();
            close(
                fit_loglog_slope(&sizes, &exact).map_err(|e| e.to_string())?,
                -0.5,
                1e-12,
                "exact power law",
            )?;
            close(
                fit_loglog_slope(&sizes, &[2.0; 4]).map_err(|e| e.to_string())?,
                0.0,
                1e-12,
                "constant errors",
            )?;
            let mut stream = rng::stream(107, "verify/slope", &[]);
            let noisy: Vec<f64> = sizes
                .iter()
                .map(|n| 4.0 * n.powf(-0.7) * (1.0 + 0.01 * rng::standard_normal(&mut stream)))
                .collect();
            close(
                fit_loglog_slope(&sizes, &noisy).map_err(|e| e.to_string())?,
                -0.7,
                0.05,
                "noisy synthetic power law",
            )
        },
    )]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn the_battery_passes_on_a_correct_build() {
        let checks = run_all();
        let failures: Vec<String> = checks
            .iter()
            .filter(|c| !c.passed())
            .map(|c| format!("{}: {:?}", c.name, c.outcome))
            .collect();
        assert!(
            failures.is_empty(),
            "failed checks:\n{}",
            failures.join("\n")
        );
        assert!(all_passed(&checks));
        assert!(checks.len() >= 20);
    }
}
