//! Assembly of the linearized equilibrium constraint system.
//!
//! Taking log-ratios of the logit fixed-point equations against reference
//! action 1 turns the equilibrium conditions into `m + n - 2` constraints that
//! are linear in the payoff parameters and the temperature jointly:
//! `X(mu, nu) theta = tau * y(mu, nu)`. The row blocks are
//!
//! - `A(nu)`, row `a-1`: `sum_b' nu(b') (phi(a, b') - phi(1, b'))`, `a = 2..m`,
//! - `B(mu)`, row `b-1`: `sum_a' mu(a') (phi(a', 1) - phi(a', b))`, `b = 2..n`,
//!
//! with right-hand sides `c(mu)_{a-1} = log(mu(a)/mu(1))` and
//! `d(nu)_{b-1} = log(nu(b)/nu(1))`. Markov games stack the per-state blocks
//! vertically in state order, unweighted.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::game::{FeatureMap, GameKind};
use crate::solver::JointPolicy;

/// Singular values below `RANK_TOL * sigma_max` count as zero when computing
/// numerical rank.
pub const RANK_TOL: f64 = 1e-10;

/// `||y|| <= Y_ZERO_TOL` is treated as uniform play (the non-uniformity
/// condition fails).
pub const Y_ZERO_TOL: f64 = 1e-10;

/// Row ranges of one state's constraint block inside the stacked system.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    pub state: usize,
    pub rows_mu: Range<usize>,
    pub rows_nu: Range<usize>,
}

/// The assembled `(X, y)` pair, `m + n - 2` rows per state.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub blocks: Vec<BlockLayout>,
}

impl LinearSystem {
    /// Feature dimension (column count of `X`).
    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// `||X theta - tau y||_2`, the bilinear residual at a candidate pair.
    pub fn residual(&self, theta: &DVector<f64>, tau: f64) -> f64 {
        (&self.x * theta - &self.y * tau).norm()
    }
}

/// Rank and non-uniformity diagnostics for an assembled system.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IdentifiabilityReport {
    pub rank: usize,
    pub sigma_min: f64,
    pub y_norm: f64,
    /// `rank == d` and `||y|| > Y_ZERO_TOL`.
    pub identifiable: bool,
}

/// Builds the constraint system for a matrix game from strictly positive
/// policies.
pub fn build_system(features: &FeatureMap, policy: &JointPolicy) -> Result<LinearSystem> {
    if features.kind() != GameKind::Matrix {
        return Err(Error::invalid_parameter(
            "features",
            "build_system requires a matrix-kind feature map; use build_markov_system".to_string(),
        ));
    }
    let rows = block_rows(features);
    let mut x = DMatrix::zeros(rows, features.dim());
    let mut y = DVector::zeros(rows);
    let block = fill_state_block(features, 0, policy, &mut x, &mut y, 0)?;
    Ok(LinearSystem {
        x,
        y,
        blocks: vec![block],
    })
}

/// Builds, then stacks, the per-state constraint blocks of a Markov game in
/// state order.
pub fn build_markov_system(
    features: &FeatureMap,
    policies: &[JointPolicy],
) -> Result<LinearSystem> {
    if policies.len() != features.states() {
        return Err(Error::DimensionMismatch {
            what: "per-state policies",
            expected: features.states(),
            actual: policies.len(),
        });
    }
    let rows_per_state = block_rows(features);
    let rows = rows_per_state * features.states();
    let mut x = DMatrix::zeros(rows, features.dim());
    let mut y = DVector::zeros(rows);
    let mut blocks = Vec::with_capacity(features.states());
    for (s, policy) in policies.iter().enumerate() {
        let block = fill_state_block(features, s, policy, &mut x, &mut y, s * rows_per_state)
            .map_err(|e| match e {
                Error::ZeroProbability { player, index } => Error::invalid_parameter(
                    "policies",
                    format!("state {s}: {player} policy entry {index} is zero; apply a floor"),
                ),
                other => other,
            })?;
        blocks.push(block);
    }
    Ok(LinearSystem { x, y, blocks })
}

fn block_rows(features: &FeatureMap) -> usize {
    features.rows() + features.cols() - 2
}

fn fill_state_block(
    features: &FeatureMap,
    s: usize,
    policy: &JointPolicy,
    x: &mut DMatrix<f64>,
    y: &mut DVector<f64>,
    offset: usize,
) -> Result<BlockLayout> {
    let m = features.rows();
    let n = features.cols();
    let d = features.dim();
    if policy.mu.len() != m || policy.nu.len() != n {
        return Err(Error::DimensionMismatch {
            what: "policy lengths vs feature dims",
            expected: m + n,
            actual: policy.mu.len() + policy.nu.len(),
        });
    }
    for (i, p) in policy.mu.iter().enumerate() {
        if p.is_nan() || *p <= 0.0 {
            return Err(Error::ZeroProbability {
                player: "mu",
                index: i,
            });
        }
    }
    for (i, p) in policy.nu.iter().enumerate() {
        if p.is_nan() || *p <= 0.0 {
            return Err(Error::ZeroProbability {
                player: "nu",
                index: i,
            });
        }
    }

    // A(nu) rows and c(mu) entries, a = 2..m against reference action 1.
    for a in 1..m {
        let row = offset + a - 1;
        for b_prime in 0..n {
            let weight = policy.nu[b_prime];
            let phi_a = features.phi(s, a, b_prime);
            let phi_ref = features.phi(s, 0, b_prime);
            for j in 0..d {
                x[(row, j)] += weight * (phi_a[j] - phi_ref[j]);
            }
        }
        y[row] = (policy.mu[a] / policy.mu[0]).ln();
    }
    // B(mu) rows and d(nu) entries, b = 2..n.
    for b in 1..n {
        let row = offset + m - 1 + b - 1;
        for a_prime in 0..m {
            let weight = policy.mu[a_prime];
            let phi_ref = features.phi(s, a_prime, 0);
            let phi_b = features.phi(s, a_prime, b);
            for j in 0..d {
                x[(row, j)] += weight * (phi_ref[j] - phi_b[j]);
            }
        }
        y[row] = (policy.nu[b] / policy.nu[0]).ln();
    }

    Ok(BlockLayout {
        state: s,
        rows_mu: offset..offset + m - 1,
        rows_nu: offset + m - 1..offset + m + n - 2,
    })
}

/// Numerical rank, minimum singular value, and non-uniformity check.
pub fn check_identifiability(system: &LinearSystem, d: usize) -> IdentifiabilityReport {
    let svd = system.x.clone().svd(false, false);
    let singular = &svd.singular_values;
    let sigma_max = singular.iter().copied().fold(0.0, f64::max);
    let threshold = RANK_TOL * sigma_max;
    let rank = singular.iter().filter(|s| **s > threshold).count();
    let sigma_min = singular.iter().copied().fold(f64::INFINITY, f64::min);
    let y_norm = system.y.norm();
    IdentifiabilityReport {
        rank,
        sigma_min,
        y_norm,
        identifiable: rank == d && y_norm > Y_ZERO_TOL,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{generate_markov_game, generate_matrix_game, FeatureMap};
    use crate::rng;
    use crate::solver::{solve_matrix_qre, SolverConfig};
    use approx::assert_abs_diff_eq;

    #[test]
    fn uniform_policies_give_zero_log_ratios() {
        let spec = generate_matrix_game(4, 5, 3, 1.0, 1.0, 1).unwrap();
        let system = build_system(&spec.features, &JointPolicy::uniform(4, 5)).unwrap();
        assert_eq!(system.x.nrows(), 4 + 5 - 2);
        assert_eq!(system.y.amax(), 0.0);
        let report = check_identifiability(&system, 3);
        assert!(!report.identifiable);
        assert_eq!(report.y_norm, 0.0);
    }

    #[test]
    fn exact_equilibrium_satisfies_the_bilinear_identity() {
        let spec = generate_matrix_game(10, 10, 5, 2.0, 1.0, 2).unwrap();
        let solution = solve_matrix_qre(&spec.payoff(), 2.0, &SolverConfig::exact()).unwrap();
        assert!(solution.converged);
        let system = build_system(&spec.features, &solution.policy).unwrap();
        let residual = system.residual(&spec.theta_star, spec.tau_star);
        assert!(residual < 1e-8, "residual {residual}");
    }

    #[test]
    fn rows_match_a_brute_force_double_loop() {
        let mut stream = rng::stream(3, "system-oracle", &[]);
        let m = 4;
        let n = 3;
        let d = 2;
        let values: Vec<f64> = (0..m * n * d)
            .map(|_| rng::standard_normal(&mut stream))
            .collect();
        let features = FeatureMap::matrix(m, n, d, values.clone()).unwrap();
        let mu = DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]);
        let nu = DVector::from_vec(vec![0.5, 0.25, 0.25]);
        let policy = JointPolicy::new(mu.clone(), nu.clone());
        let system = build_system(&features, &policy).unwrap();

        let phi = |a: usize, b: usize, j: usize| values[(a * n + b) * d + j];
        for a in 1..m {
            for j in 0..d {
                let mut expected = 0.0;
                for b_prime in 0..n {
                    expected += nu[b_prime] * (phi(a, b_prime, j) - phi(0, b_prime, j));
                }
                assert_abs_diff_eq!(system.x[(a - 1, j)], expected, epsilon = 1e-14);
            }
            assert_abs_diff_eq!(system.y[a - 1], (mu[a] / mu[0]).ln(), epsilon = 1e-15);
        }
        for b in 1..n {
            for j in 0..d {
                let mut expected = 0.0;
                for a_prime in 0..m {
                    expected += mu[a_prime] * (phi(a_prime, 0, j) - phi(a_prime, b, j));
                }
                assert_abs_diff_eq!(system.x[(m - 1 + b - 1, j)], expected, epsilon = 1e-14);
            }
            assert_abs_diff_eq!(
                system.y[m - 1 + b - 1],
                (nu[b] / nu[0]).ln(),
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn zero_probability_is_rejected_with_floor_advice() {
        let spec = generate_matrix_game(3, 3, 2, 1.0, 1.0, 4).unwrap();
        let policy = JointPolicy::new(
            DVector::from_vec(vec![1.0, 0.0, 0.0]),
            DVector::from_element(3, 1.0 / 3.0),
        );
        match build_system(&spec.features, &policy) {
            Err(Error::ZeroProbability {
                player: "mu",
                index: 1,
            }) => {}
            other => panic!("expected ZeroProbability, got {other:?}"),
        }
    }

    #[test]
    fn single_state_markov_system_equals_the_matrix_build() {
        let mut stream = rng::stream(5, "single-state", &[]);
        let values: Vec<f64> = (0..3 * 3 * 2)
            .map(|_| rng::standard_normal(&mut stream))
            .collect();
        let matrix_features = FeatureMap::matrix(3, 3, 2, values.clone()).unwrap();
        let markov_features = FeatureMap::markov(1, 3, 3, 2, values).unwrap();
        let policy = JointPolicy::new(
            DVector::from_vec(vec![0.2, 0.3, 0.5]),
            DVector::from_vec(vec![0.3, 0.3, 0.4]),
        );
        let matrix_system = build_system(&matrix_features, &policy).unwrap();
        let markov_system = build_markov_system(&markov_features, &[policy]).unwrap();
        assert_eq!(matrix_system.x, markov_system.x);
        assert_eq!(matrix_system.y, markov_system.y);
    }

    #[test]
    fn stacked_system_has_per_state_rows_and_satisfies_the_identity() {
        let spec = generate_markov_game(8, 5, 5, 6, 1.5, 1.0, 0.9, 7).unwrap();
        let equilibrium = spec.solve_equilibrium(&SolverConfig::exact()).unwrap();
        let system = build_markov_system(&spec.features, &equilibrium.policies).unwrap();
        assert_eq!(system.x.nrows(), 8 * (5 + 5 - 2));
        assert_eq!(system.blocks.len(), 8);
        assert_eq!(system.blocks[3].rows_mu, 24..28);
        assert_eq!(system.blocks[3].rows_nu, 28..32);
        let residual = system.residual(&spec.theta_star, spec.tau_star);
        assert!(residual < 1e-7, "residual {residual}");
    }

    #[test]
    fn identifiability_detects_rank_deficiency_and_generic_success() {
        // Duplicate feature column: rank < d.
        let spec = generate_matrix_game(5, 5, 3, 1.0, 1.0, 11).unwrap();
        let mut values = Vec::new();
        for a in 0..5 {
            for b in 0..5 {
                let phi = spec.features.phi(0, a, b);
                values.extend_from_slice(phi);
                values.push(phi[0]); // copy of the first component
            }
        }
        let dup = FeatureMap::matrix(5, 5, 4, values).unwrap();
        let solution = solve_matrix_qre(&spec.payoff(), 1.0, &SolverConfig::default()).unwrap();
        let system = build_system(&dup, &solution.policy).unwrap();
        let report = check_identifiability(&system, 4);
        assert!(report.rank < 4);
        assert!(!report.identifiable);

        // Generic random games at equilibrium are identifiable.
        for seed in 0..50 {
            let spec = generate_matrix_game(10, 10, 5, 2.0, 1.0, 1000 + seed).unwrap();
            let solution = solve_matrix_qre(&spec.payoff(), 2.0, &SolverConfig::default()).unwrap();
            let system = build_system(&spec.features, &solution.policy).unwrap();
            let report = check_identifiability(&system, 5);
            assert!(report.identifiable, "seed {seed}");
            assert!(report.sigma_min > 0.0);
        }
    }

    #[test]
    fn common_feature_shift_leaves_the_system_unchanged() {
        let mut stream = rng::stream(13, "shift-oracle", &[]);
        let m = 4;
        let n = 4;
        let d = 3;
        let values: Vec<f64> = (0..m * n * d)
            .map(|_| rng::standard_normal(&mut stream))
            .collect();
        let shift: Vec<f64> = (0..d).map(|_| rng::standard_normal(&mut stream)).collect();
        let shifted: Vec<f64> = values
            .chunks_exact(d)
            .flat_map(|chunk| {
                chunk
                    .iter()
                    .zip(&shift)
                    .map(|(v, s)| v + s)
                    .collect::<Vec<_>>()
            })
            .collect();
        let base = FeatureMap::matrix(m, n, d, values).unwrap();
        let moved = FeatureMap::matrix(m, n, d, shifted).unwrap();
        let policy = JointPolicy::new(
            DVector::from_vec(vec![0.1, 0.4, 0.3, 0.2]),
            DVector::from_vec(vec![0.25, 0.3, 0.25, 0.2]),
        );
        let a = build_system(&base, &policy).unwrap();
        let b = build_system(&moved, &policy).unwrap();
        assert!((a.x - b.x).amax() < 1e-13);
        assert_eq!(a.y, b.y);
    }

    #[test]
    fn residual_is_homogeneous_in_the_scaled_pair() {
        let spec = generate_matrix_game(6, 6, 4, 1.5, 1.0, 17).unwrap();
        let solution = solve_matrix_qre(&spec.payoff(), 1.5, &SolverConfig::exact()).unwrap();
        let system = build_system(&spec.features, &solution.policy).unwrap();
        let base = system.residual(&spec.theta_star, spec.tau_star);
        for k in [0.1, 10.0] {
            let scaled = system.residual(&(&spec.theta_star * k), spec.tau_star * k);
            assert!((scaled - k * base).abs() <= 1e-10 * (1.0 + k * base));
        }
    }
}
