//! Joint recovery of payoff parameters and the temperature from an assembled
//! constraint system, plus confidence-set partial identification.
//!
//! The bilinear system `X theta = tau y` only pins `(theta, tau)` up to a
//! common positive scale; the known norm `||theta*|| = C` breaks the tie. The
//! normalized least-squares estimator solves for the ratio `theta / tau`
//! first, then rescales:
//!
//! 1. `theta_ls = argmin ||X theta - y||` (minimum-norm, via SVD),
//! 2. `tau_hat = C / ||theta_ls||`,
//! 3. `theta_hat = tau_hat * theta_ls`.
//!
//! The fixed-temperature baseline skips the rescaling and returns
//! `tau_assumed * theta_ls`, which is the known-`tau` least-squares solution.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{state_payoff, FeatureMap, RewardTable, TransitionTensor};
use crate::rng;
use crate::solver::{entropy, JointPolicy};
use crate::system::RANK_TOL;
use crate::system::{check_identifiability, IdentifiabilityReport, LinearSystem, Y_ZERO_TOL};

/// Output of the normalized least-squares estimator.
#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub theta_hat: DVector<f64>,
    pub tau_hat: f64,
    /// The intermediate least-squares solution, an estimate of `theta*/tau*`.
    pub theta_ls: DVector<f64>,
    /// `||X theta_hat - tau_hat y||_2`.
    pub residual: f64,
    pub identifiability: IdentifiabilityReport,
}

/// Which transition model was used for reward recovery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsMode {
    KnownP,
    EstimatedP,
}

/// Recovered Markov-game quantities: parameters, per-state tables, and the
/// reward table implied by Bellman inversion under the supplied dynamics.
#[derive(Debug, Clone)]
pub struct MarkovRecovery {
    pub theta_hat: DVector<f64>,
    pub tau_hat: f64,
    pub theta_ls: DVector<f64>,
    pub residual: f64,
    pub identifiability: IdentifiabilityReport,
    pub q_hat: Vec<DMatrix<f64>>,
    pub v_hat: DVector<f64>,
    pub r_hat: RewardTable,
    pub dynamics_mode: DynamicsMode,
}

/// Inputs to the confidence-set threshold formula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceConfig {
    /// Failure probability in (0, 1).
    pub delta: f64,
    /// Lower bound on all equilibrium probabilities (the soft-min gap).
    pub xi: f64,
    /// Max feature norm `L`.
    pub feature_bound: f64,
    /// Normalization constant `C`.
    pub normalization: f64,
    /// Known upper bound on the true temperature.
    pub tau_max: f64,
    pub m: usize,
    pub n: usize,
    pub num_samples: u64,
}

/// One probe of the confidence-set membership predicate.
#[derive(Debug, Clone, Serialize)]
pub struct ScanPoint {
    pub theta: Vec<f64>,
    pub tau: f64,
    pub residual_sq: f64,
    pub contained: bool,
}

/// Minimum-norm least squares via SVD, with singular values below
/// `RANK_TOL * sigma_max` treated as zero.
fn least_squares(system: &LinearSystem) -> Result<DVector<f64>> {
    let svd = system.x.clone().svd(true, true);
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let eps = if sigma_max > 0.0 {
        RANK_TOL * sigma_max
    } else {
        f64::EPSILON
    };
    let solution = svd
        .solve(&system.y, eps)
        .map_err(|message| Error::invalid_parameter("least squares", message.to_string()))?;
    Ok(DVector::from_column_slice(solution.as_slice()))
}

/// Normalized least squares: recovers `(theta_hat, tau_hat)` given the known
/// norm `c`.
///
/// A rank-deficient system still returns (the minimum-norm solution) but is
/// flagged non-identifiable in the attached report; uniform play (`||theta_ls||`
/// numerically zero) is an error because no scale information survives.
pub fn nls_estimate(system: &LinearSystem, c: f64) -> Result<EstimationResult> {
    if c.is_nan() || c <= 0.0 || c.is_infinite() {
        return Err(Error::invalid_parameter(
            "normalization",
            format!("must be positive and finite, got {c}"),
        ));
    }
    let theta_ls = least_squares(system)?;
    let ls_norm = theta_ls.norm();
    if ls_norm <= Y_ZERO_TOL {
        return Err(Error::NonUniformity);
    }
    let tau_hat = c / ls_norm;
    let theta_hat = &theta_ls * tau_hat;
    let residual = system.residual(&theta_hat, tau_hat);
    let identifiability = check_identifiability(system, system.dim());
    Ok(EstimationResult {
        theta_hat,
        tau_hat,
        theta_ls,
        residual,
        identifiability,
    })
}

/// The fixed-temperature baseline: `tau_assumed * theta_ls`, no normalization
/// step.
pub fn standard_igt_estimate(system: &LinearSystem, tau_assumed: f64) -> Result<DVector<f64>> {
    if tau_assumed.is_nan() || tau_assumed <= 0.0 {
        return Err(Error::invalid_parameter(
            "tau_assumed",
            format!("must be positive, got {tau_assumed}"),
        ));
    }
    let theta_ls = least_squares(system)?;
    if theta_ls.norm() <= Y_ZERO_TOL {
        return Err(Error::NonUniformity);
    }
    Ok(theta_ls * tau_assumed)
}

/// Full Markov-game recovery: parameter estimation on the stacked system, then
/// reward recovery by Bellman inversion under `transitions`:
/// `r_hat(s,a,b) = Q_hat(s,a,b) - gamma * E_{s' ~ P} V_hat(s')`, with
/// `V_hat(s)` the regularized value of `Q_hat(s)` under the supplied policies
/// at `tau_hat`.
pub fn recover_markov_rewards(
    system: &LinearSystem,
    normalization: f64,
    features: &FeatureMap,
    policies: &[JointPolicy],
    transitions: &TransitionTensor,
    gamma: f64,
    dynamics_mode: DynamicsMode,
) -> Result<MarkovRecovery> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid_parameter(
            "gamma",
            format!("{gamma} is outside [0, 1)"),
        ));
    }
    let states = features.states();
    if policies.len() != states {
        return Err(Error::DimensionMismatch {
            what: "per-state policies",
            expected: states,
            actual: policies.len(),
        });
    }
    if transitions.states() != states
        || transitions.rows() != features.rows()
        || transitions.cols() != features.cols()
    {
        return Err(Error::DimensionMismatch {
            what: "transition tensor shape",
            expected: states * features.rows() * features.cols(),
            actual: transitions.states() * transitions.rows() * transitions.cols(),
        });
    }
    transitions.validate()?;
    for policy in policies {
        if policy.mu.len() != features.rows() || policy.nu.len() != features.cols() {
            return Err(Error::DimensionMismatch {
                what: "policy lengths vs feature dims",
                expected: features.rows() + features.cols(),
                actual: policy.mu.len() + policy.nu.len(),
            });
        }
    }

    let estimate = nls_estimate(system, normalization)?;

    let q_hat: Vec<DMatrix<f64>> = (0..states)
        .map(|s| state_payoff(features, s, &estimate.theta_hat))
        .collect();
    let mut v_hat = DVector::zeros(states);
    for s in 0..states {
        let payoff = (policies[s].mu.transpose() * &q_hat[s] * &policies[s].nu)[(0, 0)];
        v_hat[s] = payoff + estimate.tau_hat * entropy(&policies[s].mu)?
            - estimate.tau_hat * entropy(&policies[s].nu)?;
    }
    let mut reward_values = Vec::with_capacity(states * features.rows() * features.cols());
    for (s, q) in q_hat.iter().enumerate() {
        for a in 0..features.rows() {
            for b in 0..features.cols() {
                reward_values.push(q[(a, b)] - gamma * transitions.expectation(s, a, b, &v_hat));
            }
        }
    }
    let r_hat = RewardTable::new(states, features.rows(), features.cols(), reward_values)?;

    Ok(MarkovRecovery {
        theta_hat: estimate.theta_hat,
        tau_hat: estimate.tau_hat,
        theta_ls: estimate.theta_ls,
        residual: estimate.residual,
        identifiability: estimate.identifiability,
        q_hat,
        v_hat,
        r_hat,
        dynamics_mode,
    })
}

/// The coverage threshold
/// `kappa_N = (C_X C + C_Y tau_max)^2 (eps_mu + eps_nu)^2` with
/// `eps_mu = sqrt(2 log(2 * 2^m / delta) / N)` (and `eps_nu` alike),
/// `C_X = 2 L sqrt(m + n)`, and `C_Y = sqrt(8 (m + n)) / xi`.
pub fn confidence_threshold(config: &ConfidenceConfig) -> Result<f64> {
    config.validate()?;
    let n_samples = config.num_samples as f64;
    let ln2 = std::f64::consts::LN_2;
    // log(2 * 2^m / delta) computed in log space so large m cannot overflow.
    let eps_mu = (2.0 * ((config.m as f64 + 1.0) * ln2 - config.delta.ln()) / n_samples).sqrt();
    let eps_nu = (2.0 * ((config.n as f64 + 1.0) * ln2 - config.delta.ln()) / n_samples).sqrt();
    let eps_n = eps_mu + eps_nu;
    let c_x = 2.0 * config.feature_bound * ((config.m + config.n) as f64).sqrt();
    let c_y = (8.0 * (config.m + config.n) as f64).sqrt() / config.xi;
    let amplitude = c_x * config.normalization + c_y * config.tau_max;
    Ok(amplitude * amplitude * eps_n * eps_n)
}

impl ConfidenceConfig {
    fn validate(&self) -> Result<()> {
        if self.delta.is_nan() || self.delta <= 0.0 || self.delta >= 1.0 {
            return Err(Error::invalid_parameter(
                "delta",
                "must lie in (0, 1)".to_string(),
            ));
        }
        for (name, value) in [
            ("xi", self.xi),
            ("feature_bound", self.feature_bound),
            ("normalization", self.normalization),
            ("tau_max", self.tau_max),
        ] {
            if value.is_nan() || value <= 0.0 || value.is_infinite() {
                return Err(Error::invalid_parameter(
                    "confidence config",
                    format!("{name} must be positive and finite, got {value}"),
                ));
            }
        }
        if self.m < 1 || self.n < 1 || self.num_samples < 1 {
            return Err(Error::invalid_parameter(
                "confidence config",
                "m, n, and num_samples must be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Membership predicate of the confidence set: the squared bilinear residual
/// is within `kappa` and `theta` sits on the normalization sphere
/// (`| ||theta|| - c | <= 1e-9 c`); `tau` must be positive.
pub fn confidence_contains(
    system: &LinearSystem,
    theta: &DVector<f64>,
    tau: f64,
    kappa: f64,
    c: f64,
) -> bool {
    if tau.is_nan() || tau <= 0.0 {
        return false;
    }
    if (theta.norm() - c).abs() > 1e-9 * c {
        return false;
    }
    let residual = system.residual(theta, tau);
    residual * residual <= kappa
}

/// Plug-in estimate of the soft-min gap: the smallest probability across the
/// supplied (floored) policies. Plug-in values overestimate the population
/// gap, which shrinks the threshold and weakens coverage; callers should
/// surface that caveat.
pub fn estimate_soft_min_gap(policies: &[JointPolicy]) -> f64 {
    policies
        .iter()
        .flat_map(|p| p.mu.iter().chain(p.nu.iter()))
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Probes the membership predicate over random directions on the `c`-sphere
/// crossed with a temperature grid, for visualization export. The NLS
/// direction (and its antipode) are included when the estimate exists.
pub fn scan_confidence_set(
    system: &LinearSystem,
    c: f64,
    kappa: f64,
    directions: usize,
    tau_grid: &[f64],
    seed: u64,
) -> Vec<ScanPoint> {
    let d = system.dim();
    let mut dirs: Vec<DVector<f64>> = Vec::with_capacity(directions + 2);
    if let Ok(estimate) = nls_estimate(system, c) {
        let unit = &estimate.theta_hat / estimate.theta_hat.norm();
        dirs.push(&unit * c);
        dirs.push(&unit * -c);
    }
    let mut stream = rng::stream(seed, "confset-directions", &[]);
    while dirs.len() < directions + 2 {
        let raw = DVector::from_fn(d, |_, _| rng::standard_normal(&mut stream));
        let norm = raw.norm();
        if norm > 0.0 {
            dirs.push(raw * (c / norm));
        }
    }
    let mut points = Vec::with_capacity(dirs.len() * tau_grid.len());
    for theta in &dirs {
        for &tau in tau_grid {
            let residual = system.residual(theta, tau);
            points.push(ScanPoint {
                theta: theta.iter().copied().collect(),
                tau,
                residual_sq: residual * residual,
                contained: confidence_contains(system, theta, tau, kappa, c),
            });
        }
    }
    points
}
