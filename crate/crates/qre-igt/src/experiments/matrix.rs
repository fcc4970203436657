//! Matrix-game experiments: estimator convergence, the fixed-temperature
//! comparison table, and the two misspecification studies.

use nalgebra::{DMatrix, DVector};

use super::output::{summarize_grid, Cell, MetricSummary, RawTable};
use super::{attach_slopes, run_trials, ConvergenceReport, ExperimentConfig, MatrixParams};
use crate::error::Result;
use crate::estimator::{nls_estimate, standard_igt_estimate};
use crate::game::{build_payoff_matrix, generate_matrix_game, FeatureMap, MatrixGameSpec};
use crate::rng::subseed;
use crate::sampling::{default_floor, empirical_policies, sample_matrix_play};
use crate::solver::{solve_matrix_qre, JointPolicy, SolverConfig};
use crate::system::{build_system, LinearSystem};

/// A generated game with its exactly solved equilibrium.
struct MatrixTrial {
    spec: MatrixGameSpec,
    policy: JointPolicy,
}

fn matrix_trial(
    params: &MatrixParams,
    seed: u64,
    trial: usize,
    fixed_game: bool,
) -> Result<MatrixTrial> {
    let index = if fixed_game { 0 } else { trial as u64 };
    let game_seed = subseed(seed, "matrix-game", &[index]);
    let spec = generate_matrix_game(
        params.m,
        params.n,
        params.d,
        params.tau_star,
        params.normalization,
        game_seed,
    )?;
    let solution = solve_matrix_qre(&spec.payoff(), params.tau_star, &SolverConfig::exact())?;
    if !solution.converged {
        return Err(crate::error::Error::NotConverged {
            residual: solution.residual,
            iterations: solution.iterations,
        });
    }
    Ok(MatrixTrial {
        spec,
        policy: solution.policy,
    })
}

/// Samples play, forms floored frequencies, and assembles the system on
/// `features` (which may be a restricted copy of the game's own map).
fn sampled_system(
    trial: &MatrixTrial,
    features: &FeatureMap,
    n: u64,
    floor: Option<f64>,
    sample_seed: u64,
) -> Result<LinearSystem> {
    let sample = sample_matrix_play(&trial.policy, n, sample_seed)?;
    let empirical = empirical_policies(&sample, floor.unwrap_or_else(|| default_floor(n)))?;
    build_system(features, &empirical.policy)
}

/// Parameter-recovery error versus sample size: for each trial a fresh game is
/// solved exactly, then estimated from samples at every grid size.
pub fn run_convergence_matrix(config: &ExperimentConfig) -> Result<ConvergenceReport> {
    config.validate()?;
    let grid = config.matrix_grid();
    let params = config.matrix.clone();

    let outcomes = run_trials(config.trials, |trial| -> Vec<Result<(f64, f64)>> {
        let setup = match matrix_trial(&params, config.seed, trial, config.fixed_game) {
            Ok(setup) => setup,
            Err(e) => {
                let message = e.to_string();
                return grid
                    .iter()
                    .map(|_| {
                        Err(crate::error::Error::invalid_parameter(
                            "trial",
                            message.clone(),
                        ))
                    })
                    .collect();
            }
        };
        grid.iter()
            .enumerate()
            .map(|(gi, n)| {
                let sample_seed = subseed(config.seed, "matrix-play", &[trial as u64, gi as u64]);
                let system =
                    sampled_system(&setup, &setup.spec.features, *n, config.floor, sample_seed)?;
                let estimate = nls_estimate(&system, params.normalization)?;
                Ok((
                    (&estimate.theta_hat - &setup.spec.theta_star).norm(),
                    (estimate.tau_hat - params.tau_star).abs(),
                ))
            })
            .collect()
    });

    let mut raw = RawTable::new(vec!["trial", "n", "theta_error", "tau_error"]);
    let mut failures = vec![0u64; grid.len()];
    for (trial, cells) in outcomes.into_iter().enumerate() {
        for (gi, cell) in cells.into_iter().enumerate() {
            match cell {
                Ok((theta_error, tau_error)) => raw.push(vec![
                    Cell::Int(trial as u64),
                    Cell::Int(grid[gi]),
                    Cell::Float(theta_error),
                    Cell::Float(tau_error),
                ]),
                Err(_) => failures[gi] += 1,
            }
        }
    }

    let mut metrics = summarize_grid(&raw, "n", &["theta_error", "tau_error"]);
    attach_slopes(&mut metrics, &grid)?;
    Ok(ConvergenceReport {
        grid,
        trials: config.trials,
        metrics,
        failures,
        raw,
    })
}

/// One row of the estimator comparison: the jointly-estimating method or a
/// fixed-temperature baseline.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ComparisonRow {
    pub method: String,
    pub tau_assumed: Option<f64>,
    pub mean_error: f64,
    pub std_error: f64,
    pub stderr: f64,
}

/// Comparison of joint estimation against fixed-temperature baselines at one
/// sample size.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub n: u64,
    pub trials: usize,
    pub failures: u64,
    pub rows: Vec<ComparisonRow>,
    pub metrics: Vec<MetricSummary>,
    pub raw: RawTable,
}

impl ComparisonReport {
    pub fn row(&self, method: &str, tau_assumed: Option<f64>) -> &ComparisonRow {
        self.rows
            .iter()
            .find(|r| r.method == method && r.tau_assumed == tau_assumed)
            .unwrap_or_else(|| panic!("no comparison row for {method} {tau_assumed:?}"))
    }
}

/// Estimation error of the joint estimator versus fixed-temperature baselines
/// on shared data at `comparison_samples` draws per trial.
pub fn run_comparison_table(config: &ExperimentConfig) -> Result<ComparisonReport> {
    config.validate()?;
    let params = config.matrix.clone();
    let n = config.comparison_samples;

    let outcomes = run_trials(
        config.trials,
        |trial| -> Result<Vec<(String, Option<f64>, f64)>> {
            let setup = matrix_trial(&params, config.seed, trial, config.fixed_game)?;
            let sample_seed = subseed(config.seed, "comparison-play", &[trial as u64]);
            let system =
                sampled_system(&setup, &setup.spec.features, n, config.floor, sample_seed)?;

            let mut entries = Vec::with_capacity(1 + config.tau_assumed.len());
            let estimate = nls_estimate(&system, params.normalization)?;
            entries.push((
                "nls".to_string(),
                None,
                (&estimate.theta_hat - &setup.spec.theta_star).norm(),
            ));
            for tau in &config.tau_assumed {
                let theta = standard_igt_estimate(&system, *tau)?;
                entries.push((
                    "fixed_tau".to_string(),
                    Some(*tau),
                    (&theta - &setup.spec.theta_star).norm(),
                ));
            }
            Ok(entries)
        },
    );

    let mut raw = RawTable::new(vec!["trial", "method", "tau_assumed", "error"]);
    let mut failures = 0;
    for (trial, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(entries) => {
                for (method, tau, error) in entries {
                    raw.push(vec![
                        Cell::Int(trial as u64),
                        Cell::Text(method),
                        match tau {
                            Some(t) => Cell::Float(t),
                            None => Cell::Text(String::new()),
                        },
                        Cell::Float(error),
                    ]);
                }
            }
            Err(_) => failures += 1,
        }
    }

    // Aggregate per method/tau in declaration order.
    let mut keys: Vec<(String, Option<f64>)> = vec![("nls".to_string(), None)];
    keys.extend(
        config
            .tau_assumed
            .iter()
            .map(|t| ("fixed_tau".to_string(), Some(*t))),
    );

    let method_index = raw.column_index("method").unwrap();
    let tau_index = raw.column_index("tau_assumed").unwrap();
    let error_index = raw.column_index("error").unwrap();
    let mut rows = Vec::new();
    let mut metrics = Vec::new();
    for (method, tau) in keys {
        let values: Vec<f64> = raw
            .rows
            .iter()
            .filter(|row| {
                let method_ok = matches!(&row[method_index], Cell::Text(m) if *m == method);
                let tau_ok = match tau {
                    Some(t) => row[tau_index].as_f64() == Some(t),
                    None => matches!(&row[tau_index], Cell::Text(t) if t.is_empty()),
                };
                method_ok && tau_ok
            })
            .filter_map(|row| row[error_index].as_f64())
            .collect();
        let (mean, std, stderr) = super::output::mean_std(&values);
        rows.push(ComparisonRow {
            method: method.clone(),
            tau_assumed: tau,
            mean_error: mean,
            std_error: std,
            stderr,
        });
        let name = match tau {
            Some(t) => format!("error[fixed_tau={t}]"),
            None => "error[nls]".to_string(),
        };
        metrics.push(MetricSummary {
            name,
            grid: vec![n as f64],
            mean: vec![mean],
            std: vec![std],
            stderr: vec![stderr],
            slope: None,
        });
    }

    Ok(ComparisonReport {
        n,
        trials: config.trials,
        failures,
        rows,
        metrics,
        raw,
    })
}

/// Misspecified-normalization sweep over `C_assumed = ratio * C_true`.
#[derive(Debug, Clone)]
pub struct MisspecReport {
    pub ratios: Vec<f64>,
    pub trials: usize,
    /// Trials that failed before producing any ratio rows.
    pub failures: u64,
    pub metrics: Vec<MetricSummary>,
    pub raw: RawTable,
}

impl MisspecReport {
    pub fn metric(&self, name: &str) -> &MetricSummary {
        self.metrics
            .iter()
            .find(|m| m.name == name)
            .unwrap_or_else(|| panic!("no metric named {name}"))
    }
}

/// Direction and temperature behaviour when the assumed normalization is off
/// by each ratio: the direction error `1 - cos(theta_hat, theta*)` should be
/// flat in the ratio and `tau_hat / tau*` should track the ratio itself.
pub fn run_misspecified_c(config: &ExperimentConfig) -> Result<MisspecReport> {
    config.validate()?;
    let params = config.matrix.clone();
    let n = config.misspec_samples;
    let ratios = config.c_ratios.clone();

    let outcomes = run_trials(
        config.trials,
        |trial| -> Result<Vec<(f64, f64, f64, f64)>> {
            let setup = matrix_trial(&params, config.seed, trial, config.fixed_game)?;
            let sample_seed = subseed(config.seed, "misspec-play", &[trial as u64]);
            let system =
                sampled_system(&setup, &setup.spec.features, n, config.floor, sample_seed)?;
            ratios
                .iter()
                .map(|ratio| {
                    let c_assumed = ratio * params.normalization;
                    let estimate = nls_estimate(&system, c_assumed)?;
                    let dir_error = 1.0 - cosine(&estimate.theta_hat, &setup.spec.theta_star);
                    let tau_ratio = estimate.tau_hat / params.tau_star;
                    Ok((c_assumed, dir_error, tau_ratio, tau_ratio / ratio))
                })
                .collect()
        },
    );

    let mut raw = RawTable::new(vec![
        "trial",
        "ratio",
        "c_assumed",
        "directional_error",
        "tau_ratio",
        "tau_ratio_normalized",
    ]);
    let mut failures = 0;
    for (trial, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(entries) => {
                for (ratio, entry) in ratios.iter().zip(entries) {
                    raw.push(vec![
                        Cell::Int(trial as u64),
                        Cell::Float(*ratio),
                        Cell::Float(entry.0),
                        Cell::Float(entry.1),
                        Cell::Float(entry.2),
                        Cell::Float(entry.3),
                    ]);
                }
            }
            Err(_) => failures += 1,
        }
    }

    let metrics = summarize_grid(
        &raw,
        "ratio",
        &["directional_error", "tau_ratio", "tau_ratio_normalized"],
    );
    Ok(MisspecReport {
        ratios,
        trials: config.trials,
        failures,
        metrics,
        raw,
    })
}

/// Estimation with an incomplete feature model: the estimator sees only the
/// first `d_est` feature components. The directional error is measured against
/// the least-squares projection of the true payoffs onto the restricted
/// feature span; the behavioral error is the larger of the two players' total
/// variation distances between the equilibrium induced by the estimate and the
/// true equilibrium.
pub fn run_feature_misspecification(config: &ExperimentConfig) -> Result<ConvergenceReport> {
    config.validate()?;
    if config.d_est < 1 || config.d_est > config.matrix.d {
        return Err(crate::error::Error::invalid_document(
            "experiment config",
            format!("d_est must lie in 1..={}", config.matrix.d),
        ));
    }
    let grid = config.matrix_grid();
    let params = config.matrix.clone();
    let d_est = config.d_est;

    let outcomes = run_trials(config.trials, |trial| -> Vec<Result<(f64, f64)>> {
        let prepared = (|| -> Result<(MatrixTrial, FeatureMap, DVector<f64>)> {
            let setup = matrix_trial(&params, config.seed, trial, config.fixed_game)?;
            let features_est = setup.spec.features.restrict(d_est)?;
            let target = payoff_projection(&features_est, &setup.spec.payoff());
            Ok((setup, features_est, target))
        })();
        let (setup, features_est, target) = match prepared {
            Ok(v) => v,
            Err(e) => {
                let message = e.to_string();
                return grid
                    .iter()
                    .map(|_| {
                        Err(crate::error::Error::invalid_parameter(
                            "trial",
                            message.clone(),
                        ))
                    })
                    .collect();
            }
        };
        grid.iter()
            .enumerate()
            .map(|(gi, n)| {
                let sample_seed = subseed(
                    config.seed,
                    "feature-misspec-play",
                    &[trial as u64, gi as u64],
                );
                let system = sampled_system(&setup, &features_est, *n, config.floor, sample_seed)?;
                let estimate = nls_estimate(&system, params.normalization)?;
                let dir_error = 1.0 - cosine(&estimate.theta_hat, &target);

                let induced_payoff = build_payoff_matrix(&features_est, &estimate.theta_hat)?;
                let induced =
                    solve_matrix_qre(&induced_payoff, estimate.tau_hat, &SolverConfig::default())?;
                let tv_mu = 0.5 * (&induced.policy.mu - &setup.policy.mu).abs().sum();
                let tv_nu = 0.5 * (&induced.policy.nu - &setup.policy.nu).abs().sum();
                Ok((dir_error, tv_mu.max(tv_nu)))
            })
            .collect()
    });

    let mut raw = RawTable::new(vec!["trial", "n", "directional_error", "behavioral_error"]);
    let mut failures = vec![0u64; grid.len()];
    for (trial, cells) in outcomes.into_iter().enumerate() {
        for (gi, cell) in cells.into_iter().enumerate() {
            match cell {
                Ok((dir_error, behavioral)) => raw.push(vec![
                    Cell::Int(trial as u64),
                    Cell::Int(grid[gi]),
                    Cell::Float(dir_error),
                    Cell::Float(behavioral),
                ]),
                Err(_) => failures[gi] += 1,
            }
        }
    }

    let mut metrics = summarize_grid(&raw, "n", &["directional_error", "behavioral_error"]);
    attach_slopes(&mut metrics, &grid)?;
    Ok(ConvergenceReport {
        grid,
        trials: config.trials,
        metrics,
        failures,
        raw,
    })
}

/// `argmin_theta || Phi_est theta - vec(Q) ||_2`: the best approximation of
/// the payoffs within the restricted feature span.
pub fn payoff_projection(features_est: &FeatureMap, payoff: &DMatrix<f64>) -> DVector<f64> {
    let m = features_est.rows();
    let n = features_est.cols();
    let d = features_est.dim();
    let mut design = DMatrix::zeros(m * n, d);
    let mut target = DVector::zeros(m * n);
    for a in 0..m {
        for b in 0..n {
            let row = a * n + b;
            for (j, value) in features_est.phi(0, a, b).iter().enumerate() {
                design[(row, j)] = *value;
            }
            target[row] = payoff[(a, b)];
        }
    }
    let svd = design.svd(true, true);
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let eps = if sigma_max > 0.0 {
        crate::system::RANK_TOL * sigma_max
    } else {
        f64::EPSILON
    };
    let solution = svd
        .solve(&target, eps)
        .expect("SVD solve cannot fail with computed factors");
    DVector::from_column_slice(solution.as_slice())
}

fn cosine(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.dot(b) / (a.norm() * b.norm())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            seed: 7,
            trials: 3,
            grid: Some(vec![500, 1_000, 2_000, 4_000]),
            comparison_samples: 2_000,
            misspec_samples: 5_000,
            c_ratios: vec![0.5, 1.0, 2.0],
            ..Default::default()
        }
    }

    #[test]
    fn convergence_runner_is_deterministic_and_error_decays() {
        let config = small_config();
        let report = run_convergence_matrix(&config).unwrap();
        let again = run_convergence_matrix(&config).unwrap();
        assert_eq!(report.raw, again.raw);
        assert_eq!(report.failures, vec![0; 4]);
        assert_eq!(report.raw.rows.len(), 3 * 4);
        let theta = report.metric("theta_error");
        assert!(theta.mean.last().unwrap() < theta.mean.first().unwrap());
        assert!(report.slope("theta_error") < 0.0);
    }

    #[test]
    fn comparison_runner_produces_all_rows() {
        let config = small_config();
        let report = run_comparison_table(&config).unwrap();
        assert_eq!(report.rows.len(), 4);
        assert_eq!(report.failures, 0);
        let oracle = report.row("fixed_tau", Some(2.0));
        let low = report.row("fixed_tau", Some(1.0));
        assert!(low.mean_error > oracle.mean_error);
        // The metric encoding matches the rows.
        assert_eq!(report.metrics[0].name, "error[nls]");
        assert_eq!(
            report.metrics[0].mean[0],
            report.row("nls", None).mean_error
        );
    }

    #[test]
    fn misspec_runner_tracks_the_ratio_exactly_in_direction() {
        let config = ExperimentConfig {
            matrix: MatrixParams {
                m: 8,
                n: 8,
                d: 4,
                tau_star: 2.0,
                normalization: 5.0,
            },
            ..small_config()
        };
        let report = run_misspecified_c(&config).unwrap();
        let dir = report.metric("directional_error");
        // The direction is invariant to the assumed constant, so the metric is
        // flat across ratios up to float noise.
        let max = dir.mean.iter().copied().fold(f64::MIN, f64::max);
        let min = dir.mean.iter().copied().fold(f64::MAX, f64::min);
        assert!(max - min < 1e-12, "direction error varied: {min} vs {max}");
        let normalized = report.metric("tau_ratio_normalized");
        for value in &normalized.mean {
            assert!((value - 1.0).abs() < 0.2, "tau ratio {value}");
        }
    }

    #[test]
    fn projection_target_matches_normal_equations() {
        let spec = generate_matrix_game(6, 6, 5, 1.0, 1.0, 19).unwrap();
        let features_est = spec.features.restrict(4).unwrap();
        let payoff = spec.payoff();
        let target = payoff_projection(&features_est, &payoff);

        // Brute-force normal equations (Phi' Phi)^-1 Phi' q.
        let mut phi = DMatrix::zeros(36, 4);
        let mut q = DVector::zeros(36);
        for a in 0..6 {
            for b in 0..6 {
                for j in 0..4 {
                    phi[(a * 6 + b, j)] = features_est.phi(0, a, b)[j];
                }
                q[a * 6 + b] = payoff[(a, b)];
            }
        }
        let gram = phi.transpose() * &phi;
        let rhs = phi.transpose() * q;
        let expected = gram.lu().solve(&rhs).unwrap();
        assert!((target - expected).amax() < 1e-10);

        // Full feature set: the projection is theta* itself.
        let full_target = payoff_projection(&spec.features, &payoff);
        assert!((full_target - &spec.theta_star).amax() < 1e-10);
    }

    #[test]
    fn fixed_game_mode_shares_one_game_across_trials() {
        let params = MatrixParams::default();
        let a = matrix_trial(&params, 3, 0, true).unwrap();
        let b = matrix_trial(&params, 3, 5, true).unwrap();
        assert_eq!(a.spec, b.spec);
        let fresh = matrix_trial(&params, 3, 5, false).unwrap();
        assert_ne!(a.spec, fresh.spec);
    }

    #[test]
    fn slopes_need_at_least_four_grid_points() {
        let config = ExperimentConfig {
            trials: 2,
            grid: Some(vec![200, 400, 800]),
            ..Default::default()
        };
        assert!(run_convergence_matrix(&config).is_err());
    }

    #[test]
    fn feature_misspec_runner_reports_decreasing_errors() {
        let config = ExperimentConfig {
            trials: 4,
            grid: Some(vec![500, 2_000, 8_000, 32_000]),
            ..small_config()
        };
        let report = run_feature_misspecification(&config).unwrap();
        let dir = report.metric("directional_error");
        let behavioral = report.metric("behavioral_error");
        assert!(dir.mean.last().unwrap() < dir.mean.first().unwrap());
        assert!(behavioral.mean.last().unwrap() < behavioral.mean.first().unwrap());
    }
}
