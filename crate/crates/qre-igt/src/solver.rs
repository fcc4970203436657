//! Quantal response equilibria of entropy-regularized zero-sum games.
//!
//! A matrix game `Q` at temperature `tau > 0` has a unique equilibrium
//! `(mu, nu)` at which each player's mixed strategy is the softmax best
//! response to the other's: `mu = softmax(Q nu / tau)` over rows and
//! `nu = softmax(-Q' mu / tau)` over columns. [`solve_matrix_qre`] finds it by
//! damped fixed-point iteration with an optional Newton fallback in logit
//! coordinates. [`forward_solve_markov`] wraps the per-state solves in a
//! discounted value-iteration outer loop.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::game::{RewardTable, TransitionTensor};

/// Probabilities are floored at this value inside the softmax so downstream
/// logarithms stay finite.
const PROB_FLOOR: f64 = 1e-300;

/// A mixed-strategy pair, one distribution per player.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPolicy {
    pub mu: DVector<f64>,
    pub nu: DVector<f64>,
}

impl JointPolicy {
    pub fn new(mu: DVector<f64>, nu: DVector<f64>) -> Self {
        JointPolicy { mu, nu }
    }

    /// Uniform play for both players.
    pub fn uniform(m: usize, n: usize) -> Self {
        JointPolicy {
            mu: DVector::from_element(m, 1.0 / m as f64),
            nu: DVector::from_element(n, 1.0 / n as f64),
        }
    }

    /// Checks both vectors are entrywise nonnegative and sum to 1 within 1e-12.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mu", &self.mu), ("nu", &self.nu)] {
            if v.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::invalid_parameter(
                    "policy",
                    format!("{name} has a negative or non-finite entry"),
                ));
            }
            let total: f64 = v.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::invalid_parameter(
                    "policy",
                    format!("{name} sums to {total}, not 1"),
                ));
            }
        }
        Ok(())
    }
}

/// Iteration controls for the fixed-point solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Fixed-point residual tolerance.
    pub tol: f64,
    /// Iteration cap for the damped fixed-point loop (and the value-iteration
    /// outer loop in the Markov case).
    pub max_iter: usize,
    /// Step mixing weight in (0, 1]; 1 is the undamped logit iteration.
    pub damping: f64,
    /// Switch to the Newton root-finder when the damped loop exhausts.
    pub fallback: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-9,
            max_iter: 10_000,
            damping: 0.5,
            fallback: true,
        }
    }
}

impl SolverConfig {
    /// Tight tolerances for noiseless pipelines (fixture generation, exact
    /// recovery checks) where the equilibrium feeds log-ratio systems that are
    /// expected to hold to ~1e-8.
    pub fn exact() -> Self {
        SolverConfig {
            tol: 1e-13,
            max_iter: 200_000,
            damping: 0.5,
            fallback: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::invalid_parameter(
                "tol",
                "must be positive".to_string(),
            ));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::invalid_parameter(
                "damping",
                format!("{} is outside (0, 1]", self.damping),
            ));
        }
        Ok(())
    }
}

/// A solved matrix-game equilibrium with its certificate data.
#[derive(Debug, Clone)]
pub struct QreSolution {
    pub policy: JointPolicy,
    /// The payoff matrix the equilibrium was solved on.
    pub q: DMatrix<f64>,
    /// Max fixed-point violation at the returned policy.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// A solved Markov-game equilibrium: per-state policies, Q tables, and values.
#[derive(Debug, Clone)]
pub struct MarkovQreSolution {
    pub policies: Vec<JointPolicy>,
    pub q: Vec<DMatrix<f64>>,
    pub v: DVector<f64>,
    /// Max per-state fixed-point violation at the returned policies.
    pub residual: f64,
    /// Outer (value-iteration) sweeps.
    pub iterations: usize,
    pub converged: bool,
}

/// Shannon entropy in nats; zero entries contribute zero.
pub fn entropy(pi: &DVector<f64>) -> Result<f64> {
    if pi.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::invalid_parameter(
            "distribution",
            "entropy requires nonnegative finite entries".to_string(),
        ));
    }
    Ok(pi.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum())
}

/// The entropy-regularized game value `mu' Q nu + tau H(mu) - tau H(nu)`.
pub fn regularized_value(q: &DMatrix<f64>, policy: &JointPolicy, tau: f64) -> Result<f64> {
    check_dims(q, policy)?;
    let bilinear = (policy.mu.transpose() * q * &policy.nu)[(0, 0)];
    Ok(bilinear + tau * entropy(&policy.mu)? - tau * entropy(&policy.nu)?)
}

/// One simultaneous logit-response step: row player responds to `nu`, column
/// player responds to `mu`.
pub fn logit_response(q: &DMatrix<f64>, policy: &JointPolicy, tau: f64) -> Result<JointPolicy> {
    check_tau(tau)?;
    check_dims(q, policy)?;
    Ok(logit_response_unchecked(q, policy, tau))
}

fn logit_response_unchecked(q: &DMatrix<f64>, policy: &JointPolicy, tau: f64) -> JointPolicy {
    let mu_scores = (q * &policy.nu) / tau;
    let nu_scores = -(q.transpose() * &policy.mu) / tau;
    JointPolicy::new(softmax(&mu_scores), softmax(&nu_scores))
}

/// Softmax with max-subtraction; output entries are floored at 1e-300 so logs
/// of the result stay finite.
fn softmax(scores: &DVector<f64>) -> DVector<f64> {
    let max = scores.max();
    let mut out = scores.map(|z| (z - max).exp().max(PROB_FLOOR));
    let total: f64 = out.iter().sum();
    out /= total;
    out
}

/// Max-norm violation of the fixed-point equations at `policy`.
fn fixed_point_residual(policy: &JointPolicy, response: &JointPolicy) -> f64 {
    let mu_gap = (&policy.mu - &response.mu).amax();
    let nu_gap = (&policy.nu - &response.nu).amax();
    mu_gap.max(nu_gap)
}

/// Solves the matrix-game QRE by damped fixed-point iteration, falling back to
/// a damped Newton root-finder in logit coordinates when enabled.
///
/// A non-convergent solve returns `Ok` with `converged = false`; it is the
/// caller's job to decide whether that is fatal.
pub fn solve_matrix_qre(q: &DMatrix<f64>, tau: f64, config: &SolverConfig) -> Result<QreSolution> {
    solve_matrix_qre_from(q, tau, config, JointPolicy::uniform(q.nrows(), q.ncols()))
}

/// As [`solve_matrix_qre`] but starting from `initial` (used to warm-start the
/// per-state solves inside value iteration).
pub fn solve_matrix_qre_from(
    q: &DMatrix<f64>,
    tau: f64,
    config: &SolverConfig,
    initial: JointPolicy,
) -> Result<QreSolution> {
    check_tau(tau)?;
    config.validate()?;
    if initial.mu.len() != q.nrows() || initial.nu.len() != q.ncols() {
        return Err(Error::DimensionMismatch {
            what: "initial policy",
            expected: q.nrows() + q.ncols(),
            actual: initial.mu.len() + initial.nu.len(),
        });
    }

    let mut policy = initial;
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < config.max_iter {
        iterations += 1;
        let response = logit_response_unchecked(q, &policy, tau);
        residual = fixed_point_residual(&policy, &response);
        if residual <= config.tol {
            return Ok(QreSolution {
                policy,
                q: q.clone(),
                residual,
                iterations,
                converged: true,
            });
        }
        policy.mu = &policy.mu * (1.0 - config.damping) + response.mu * config.damping;
        policy.nu = &policy.nu * (1.0 - config.damping) + response.nu * config.damping;
    }

    if config.fallback {
        let (refined, newton_iters) = newton_refine(q, tau, policy, config.tol);
        policy = refined;
        iterations += newton_iters;
        let response = logit_response_unchecked(q, &policy, tau);
        residual = fixed_point_residual(&policy, &response);
    }

    Ok(QreSolution {
        converged: residual <= config.tol,
        policy,
        q: q.clone(),
        residual,
        iterations,
    })
}

/// Damped Newton on the stacked logit-coordinate residual
/// `F(u, w) = (u - (D_m Q nu(w)) / tau,  w + (D_n Q' mu(u)) / tau)`,
/// where `u`/`w` are log-probabilities pinned at the reference action
/// (`u_1 = w_1 = 0`) and `D` takes differences against that reference row.
/// The iterate stays on the simplex by construction.
fn newton_refine(q: &DMatrix<f64>, tau: f64, start: JointPolicy, tol: f64) -> (JointPolicy, usize) {
    let m = q.nrows();
    let n = q.ncols();
    let dim = m + n - 2;
    if dim == 0 {
        return (start, 0);
    }

    let to_logits = |p: &DVector<f64>| -> Vec<f64> {
        let base = p[0].max(PROB_FLOOR).ln();
        (1..p.len())
            .map(|i| p[i].max(PROB_FLOOR).ln() - base)
            .collect()
    };
    let from_logits = |logits: &[f64]| -> DVector<f64> {
        let mut scores = DVector::zeros(logits.len() + 1);
        for (i, z) in logits.iter().enumerate() {
            scores[i + 1] = *z;
        }
        softmax(&scores)
    };

    let mut u = to_logits(&start.mu);
    let mut w = to_logits(&start.nu);

    let eval = |u: &[f64], w: &[f64]| -> (JointPolicy, DVector<f64>) {
        let policy = JointPolicy::new(from_logits(u), from_logits(w));
        let mu_scores = (q * &policy.nu) / tau;
        let nu_scores = -(q.transpose() * &policy.mu) / tau;
        let mut f = DVector::zeros(dim);
        for a in 1..m {
            f[a - 1] = u[a - 1] - (mu_scores[a] - mu_scores[0]);
        }
        for b in 1..n {
            f[m - 1 + b - 1] = w[b - 1] - (nu_scores[b] - nu_scores[0]);
        }
        (policy, f)
    };

    let max_newton = 200;
    let mut iterations = 0;
    let (mut policy, mut f) = eval(&u, &w);
    for _ in 0..max_newton {
        let response = logit_response_unchecked(q, &policy, tau);
        if fixed_point_residual(&policy, &response) <= tol {
            break;
        }
        iterations += 1;

        // Softmax Jacobians with the reference column dropped:
        // d mu_i / d u_j = mu_i (delta_ij - mu_j), j = 2..m.
        let s_mu = DMatrix::from_fn(m, m - 1, |i, j| {
            policy.mu[i] * (if i == j + 1 { 1.0 } else { 0.0 } - policy.mu[j + 1])
        });
        let s_nu = DMatrix::from_fn(n, n - 1, |i, j| {
            policy.nu[i] * (if i == j + 1 { 1.0 } else { 0.0 } - policy.nu[j + 1])
        });
        // Difference-against-reference maps.
        let d_m = DMatrix::from_fn(m - 1, m, |r, c| {
            if c == r + 1 {
                1.0
            } else if c == 0 {
                -1.0
            } else {
                0.0
            }
        });
        let d_n = DMatrix::from_fn(n - 1, n, |r, c| {
            if c == r + 1 {
                1.0
            } else if c == 0 {
                -1.0
            } else {
                0.0
            }
        });

        let mut jac = DMatrix::identity(dim, dim);
        let upper = -(&d_m * q * &s_nu) / tau;
        let lower = (&d_n * q.transpose() * &s_mu) / tau;
        jac.view_mut((0, m - 1), (m - 1, n - 1)).copy_from(&upper);
        jac.view_mut((m - 1, 0), (n - 1, m - 1)).copy_from(&lower);

        let Some(step) = jac.lu().solve(&(-&f)) else {
            break;
        };

        // Backtracking line search on ||F||.
        let f_norm = f.norm();
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let u_try: Vec<f64> = u
                .iter()
                .enumerate()
                .map(|(i, x)| x + scale * step[i])
                .collect();
            let w_try: Vec<f64> = w
                .iter()
                .enumerate()
                .map(|(i, x)| x + scale * step[m - 1 + i])
                .collect();
            let (policy_try, f_try) = eval(&u_try, &w_try);
            if f_try.norm() < f_norm {
                u = u_try;
                w = w_try;
                policy = policy_try;
                f = f_try;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (policy, iterations)
}

/// Solves a matrix QRE at every state's Q table; fails with the state index if
/// any per-state solve does not converge.
pub fn policies_from_q_tables(
    q_tables: &[DMatrix<f64>],
    tau: f64,
    config: &SolverConfig,
) -> Result<Vec<QreSolution>> {
    q_tables
        .iter()
        .enumerate()
        .map(|(state, q)| {
            let solution = solve_matrix_qre(q, tau, config)?;
            if !solution.converged {
                return Err(Error::StateSolveFailed {
                    state,
                    residual: solution.residual,
                    iterations: solution.iterations,
                });
            }
            Ok(solution)
        })
        .collect()
}

/// Solves the discounted Markov-game QRE from a reward table by value
/// iteration over the entropy-regularized Bellman operator.
///
/// Iteration stops when `||V_{t+1} - V_t||_inf <= tol * (1 - gamma)`, so the
/// returned values have absolute error at most `tol`. Returned `(q, v,
/// policies)` are mutually consistent: `v` is recomputed from the final `q`
/// and policies.
pub fn forward_solve_markov(
    rewards: &RewardTable,
    transitions: &TransitionTensor,
    gamma: f64,
    tau: f64,
    config: &SolverConfig,
) -> Result<MarkovQreSolution> {
    check_tau(tau)?;
    config.validate()?;
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid_parameter(
            "gamma",
            format!("{gamma} is outside [0, 1)"),
        ));
    }
    if rewards.states() != transitions.states()
        || rewards.rows() != transitions.rows()
        || rewards.cols() != transitions.cols()
    {
        return Err(Error::DimensionMismatch {
            what: "reward/transition tables",
            expected: rewards.states() * rewards.rows() * rewards.cols(),
            actual: transitions.states() * transitions.rows() * transitions.cols(),
        });
    }

    let states = rewards.states();
    let mut v = DVector::zeros(states);
    let mut policies: Vec<JointPolicy> = (0..states)
        .map(|_| JointPolicy::uniform(rewards.rows(), rewards.cols()))
        .collect();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iter {
        iterations += 1;
        let (v_next, policies_next) =
            bellman_sweep(rewards, transitions, gamma, tau, config, &v, &policies)?;
        let delta = (&v_next - &v).amax();
        v = v_next;
        policies = policies_next;
        // gamma = 0 makes the Q tables value-independent, so one sweep is exact.
        if delta <= config.tol * (1.0 - gamma) || gamma == 0.0 {
            converged = true;
            break;
        }
    }

    // Final consistency pass: rebuild Q from the converged values, re-solve,
    // and recompute V from the returned (Q, policy) pairs so the outputs
    // satisfy the value identity exactly.
    let q_tables = q_from_values(rewards, transitions, gamma, &v);
    let mut residual: f64 = 0.0;
    let mut v_out = DVector::zeros(states);
    for (state, q) in q_tables.iter().enumerate() {
        let solution = solve_matrix_qre_from(q, tau, config, policies[state].clone())?;
        if !solution.converged {
            return Err(Error::StateSolveFailed {
                state,
                residual: solution.residual,
                iterations: solution.iterations,
            });
        }
        residual = residual.max(solution.residual);
        v_out[state] = regularized_value(q, &solution.policy, tau)?;
        policies[state] = solution.policy;
    }

    Ok(MarkovQreSolution {
        policies,
        q: q_tables,
        v: v_out,
        residual,
        iterations,
        converged,
    })
}

/// One Bellman sweep: form per-state Q tables from `v`, solve each state's QRE
/// (warm-started), and return the updated values and policies.
fn bellman_sweep(
    rewards: &RewardTable,
    transitions: &TransitionTensor,
    gamma: f64,
    tau: f64,
    config: &SolverConfig,
    v: &DVector<f64>,
    warm: &[JointPolicy],
) -> Result<(DVector<f64>, Vec<JointPolicy>)> {
    let q_tables = q_from_values(rewards, transitions, gamma, v);
    let mut v_next = DVector::zeros(rewards.states());
    let mut policies = Vec::with_capacity(rewards.states());
    for (state, q) in q_tables.iter().enumerate() {
        let solution = solve_matrix_qre_from(q, tau, config, warm[state].clone())?;
        if !solution.converged {
            return Err(Error::StateSolveFailed {
                state,
                residual: solution.residual,
                iterations: solution.iterations,
            });
        }
        v_next[state] = regularized_value(q, &solution.policy, tau)?;
        policies.push(solution.policy);
    }
    Ok((v_next, policies))
}

/// `Q(s, a, b) = r(s, a, b) + gamma * E_{s' ~ P(.|s,a,b)} v(s')`.
pub fn q_from_values(
    rewards: &RewardTable,
    transitions: &TransitionTensor,
    gamma: f64,
    v: &DVector<f64>,
) -> Vec<DMatrix<f64>> {
    (0..rewards.states())
        .map(|s| {
            DMatrix::from_fn(rewards.rows(), rewards.cols(), |a, b| {
                rewards.get(s, a, b) + gamma * transitions.expectation(s, a, b, v)
            })
        })
        .collect()
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::invalid_parameter(
            "tau",
            format!("temperature must be positive, got {tau}"),
        ));
    }
    Ok(())
}

fn check_dims(q: &DMatrix<f64>, policy: &JointPolicy) -> Result<()> {
    if policy.mu.len() != q.nrows() {
        return Err(Error::DimensionMismatch {
            what: "mu length vs payoff rows",
            expected: q.nrows(),
            actual: policy.mu.len(),
        });
    }
    if policy.nu.len() != q.ncols() {
        return Err(Error::DimensionMismatch {
            what: "nu length vs payoff columns",
            expected: q.ncols(),
            actual: policy.nu.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn matching_pennies() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0])
    }

    #[test]
    fn entropy_uniform_point_mass_and_hand_sum() {
        let uniform = DVector::from_element(4, 0.25);
        assert_abs_diff_eq!(entropy(&uniform).unwrap(), 4.0_f64.ln(), epsilon = 1e-15);

        let point = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        assert_eq!(entropy(&point).unwrap(), 0.0);

        // Independent two-term evaluation of -sum p ln p.
        let pi = DVector::from_vec(vec![0.3, 0.7]);
        let expected = -(0.3_f64 * 0.3_f64.ln()) - (0.7_f64 * 0.7_f64.ln());
        assert_abs_diff_eq!(entropy(&pi).unwrap(), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, 0.6108643020548935, epsilon = 1e-15);

        let negative = DVector::from_vec(vec![-0.1, 1.1]);
        assert!(entropy(&negative).is_err());
    }

    #[test]
    fn regularized_value_cases() {
        // Zero payoffs, equal-size uniform play: entropies cancel.
        let q = DMatrix::zeros(3, 3);
        let uniform = JointPolicy::uniform(3, 3);
        assert_abs_diff_eq!(
            regularized_value(&q, &uniform, 5.0).unwrap(),
            0.0,
            epsilon = 1e-15
        );

        // tau = 0 reduces to the bilinear payoff.
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let policy = JointPolicy::new(
            DVector::from_vec(vec![0.25, 0.75]),
            DVector::from_vec(vec![0.6, 0.4]),
        );
        let bilinear = 0.25 * (0.6 * 1.0 + 0.4 * 2.0) + 0.75 * (0.6 * 3.0 + 0.4 * 4.0);
        assert_abs_diff_eq!(
            regularized_value(&q, &policy, 0.0).unwrap(),
            bilinear,
            epsilon = 1e-15
        );

        // Random 3x3 instance against a scalar triple loop.
        let mut rng = crate::rng::stream(11, "regval-test", &[]);
        let q = DMatrix::from_fn(3, 3, |_, _| crate::rng::standard_normal(&mut rng));
        let mu = DVector::from_vec(vec![0.2, 0.5, 0.3]);
        let nu = DVector::from_vec(vec![0.1, 0.6, 0.3]);
        let tau = 1.7;
        let mut expected = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                expected += mu[a] * q[(a, b)] * nu[b];
            }
        }
        for a in 0..3 {
            expected -= tau * mu[a] * mu[a].ln();
        }
        for b in 0..3 {
            expected += tau * nu[b] * nu[b].ln();
        }
        let policy = JointPolicy::new(mu, nu);
        assert_abs_diff_eq!(
            regularized_value(&q, &policy, tau).unwrap(),
            expected,
            epsilon = 1e-14
        );

        let wrong = JointPolicy::uniform(4, 3);
        assert!(regularized_value(&q, &wrong, tau).is_err());
    }

    #[test]
    fn logit_response_cases() {
        let q = DMatrix::zeros(3, 5);
        let any = JointPolicy::new(
            DVector::from_vec(vec![0.9, 0.05, 0.05]),
            DVector::from_element(5, 0.2),
        );
        let response = logit_response(&q, &any, 1.0).unwrap();
        for p in response.mu.iter() {
            assert_abs_diff_eq!(*p, 1.0 / 3.0, epsilon = 1e-15);
        }
        for p in response.nu.iter() {
            assert_abs_diff_eq!(*p, 0.2, epsilon = 1e-15);
        }

        // Huge temperature pushes any bounded game to uniform play.
        let mut rng = crate::rng::stream(3, "logit-test", &[]);
        let q = DMatrix::from_fn(4, 4, |_, _| crate::rng::standard_normal(&mut rng));
        let response = logit_response(&q, &JointPolicy::uniform(4, 4), 1e9).unwrap();
        for p in response.mu.iter().chain(response.nu.iter()) {
            assert!((p - 0.25).abs() < 1e-6);
        }

        // Matching pennies at uniform input stays uniform (direct evaluation:
        // Q nu = 0 and Q' mu = 0).
        let response =
            logit_response(&matching_pennies(), &JointPolicy::uniform(2, 2), 1.0).unwrap();
        for p in response.mu.iter().chain(response.nu.iter()) {
            assert_abs_diff_eq!(*p, 0.5, epsilon = 1e-15);
        }

        assert!(logit_response(&q, &JointPolicy::uniform(4, 4), 0.0).is_err());
        assert!(logit_response(&q, &JointPolicy::uniform(4, 4), -1.0).is_err());
    }

    #[test]
    fn solve_zero_game_is_exactly_uniform_in_one_iteration() {
        let q = DMatrix::zeros(6, 4);
        let solution = solve_matrix_qre(&q, 2.0, &SolverConfig::default()).unwrap();
        assert!(solution.converged);
        assert_eq!(solution.iterations, 1);
        assert_eq!(solution.residual, 0.0);
        for p in solution.policy.mu.iter() {
            assert_eq!(*p, 1.0 / 6.0);
        }
    }

    #[test]
    fn solve_matching_pennies_is_uniform() {
        let solution =
            solve_matrix_qre(&matching_pennies(), 1.0, &SolverConfig::default()).unwrap();
        assert!(solution.converged);
        assert!(solution.residual < 1e-9);
        for p in solution.policy.mu.iter().chain(solution.policy.nu.iter()) {
            assert!((p - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn converged_solutions_satisfy_the_substitution_certificate() {
        let mut rng = crate::rng::stream(17, "certificate-test", &[]);
        for trial in 0..20 {
            let m = 2 + (trial % 5);
            let n = 2 + (trial % 7);
            let q = DMatrix::from_fn(m, n, |_, _| 2.0 * crate::rng::standard_normal(&mut rng));
            let tau = [0.5, 1.0, 2.0, 5.0][trial % 4];
            let solution = solve_matrix_qre(&q, tau, &SolverConfig::default()).unwrap();
            assert!(solution.converged, "trial {trial} did not converge");
            let response = logit_response(&q, &solution.policy, tau).unwrap();
            let mu_gap = (&solution.policy.mu - &response.mu).amax();
            let nu_gap = (&solution.policy.nu - &response.nu).amax();
            assert!(
                mu_gap < 1e-9 && nu_gap < 1e-9,
                "trial {trial}: {mu_gap} {nu_gap}"
            );
        }
    }

    #[test]
    fn newton_fallback_rescues_an_exhausted_fixed_point_loop() {
        let mut rng = crate::rng::stream(23, "newton-test", &[]);
        let q = DMatrix::from_fn(8, 8, |_, _| crate::rng::standard_normal(&mut rng));
        // Starve the damped loop so only the fallback can reach the tolerance.
        let config = SolverConfig {
            tol: 1e-12,
            max_iter: 3,
            damping: 0.5,
            fallback: true,
        };
        let solution = solve_matrix_qre(&q, 1.0, &config).unwrap();
        assert!(solution.converged, "residual {}", solution.residual);

        let no_fallback = SolverConfig {
            fallback: false,
            ..config
        };
        let failed = solve_matrix_qre(&q, 1.0, &no_fallback).unwrap();
        assert!(!failed.converged);
        assert!(failed.residual > 1e-12);
    }

    #[test]
    fn scale_covariance_of_the_equilibrium() {
        let mut rng = crate::rng::stream(29, "scale-test", &[]);
        let q = DMatrix::from_fn(5, 6, |_, _| crate::rng::standard_normal(&mut rng));
        let config = SolverConfig::exact();
        let base = solve_matrix_qre(&q, 1.3, &config).unwrap();
        for k in [0.1, 10.0] {
            let scaled = solve_matrix_qre(&(&q * k), 1.3 * k, &config).unwrap();
            assert!((&base.policy.mu - &scaled.policy.mu).amax() < 1e-10);
            assert!((&base.policy.nu - &scaled.policy.nu).amax() < 1e-10);
        }
    }

    #[test]
    fn translation_invariance_and_column_shifts() {
        let mut rng = crate::rng::stream(31, "shift-test", &[]);
        let q = DMatrix::from_fn(4, 4, |_, _| crate::rng::standard_normal(&mut rng));
        let config = SolverConfig::exact();
        let base = solve_matrix_qre(&q, 2.0, &config).unwrap();
        let shifted = solve_matrix_qre(&q.add_scalar(3.7), 2.0, &config).unwrap();
        assert!((&base.policy.mu - &shifted.policy.mu).amax() < 1e-10);
        assert!((&base.policy.nu - &shifted.policy.nu).amax() < 1e-10);

        // Adding a constant to a single column shifts that column's logit score
        // for the column player; check the response map directly.
        let mut q_col = q.clone();
        for a in 0..4 {
            q_col[(a, 2)] += 1.5;
        }
        let policy = base.policy.clone();
        let response = logit_response(&q_col, &policy, 2.0).unwrap();
        let mut scores = DVector::zeros(4);
        for b in 0..4 {
            let mut s = 0.0;
            for a in 0..4 {
                s += q_col[(a, b)] * policy.mu[a];
            }
            scores[b] = -s / 2.0;
        }
        let max = scores.max();
        let weights: Vec<f64> = scores.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        for (b, weight) in weights.iter().enumerate() {
            assert_abs_diff_eq!(response.nu[b], weight / total, epsilon = 1e-14);
        }
    }

    #[test]
    fn policies_from_q_tables_cases() {
        let zeros: Vec<DMatrix<f64>> = (0..3).map(|_| DMatrix::zeros(4, 4)).collect();
        let solutions = policies_from_q_tables(&zeros, 1.0, &SolverConfig::default()).unwrap();
        for s in &solutions {
            for p in s.policy.mu.iter() {
                assert_eq!(*p, 0.25);
            }
        }

        // A single state degenerates to the plain matrix solve.
        let mut rng = crate::rng::stream(37, "per-state-test", &[]);
        let q = DMatrix::from_fn(3, 3, |_, _| crate::rng::standard_normal(&mut rng));
        let single =
            policies_from_q_tables(std::slice::from_ref(&q), 1.5, &SolverConfig::default())
                .unwrap();
        let direct = solve_matrix_qre(&q, 1.5, &SolverConfig::default()).unwrap();
        assert_eq!(single[0].policy, direct.policy);

        // Failures carry the state index.
        let config = SolverConfig {
            tol: 1e-12,
            max_iter: 1,
            damping: 0.5,
            fallback: false,
        };
        let tables = vec![DMatrix::zeros(3, 3), q.clone()];
        match policies_from_q_tables(&tables, 1.5, &config) {
            Err(Error::StateSolveFailed { state, .. }) => assert_eq!(state, 1),
            other => panic!("expected StateSolveFailed, got {other:?}"),
        }
    }

    #[test]
    fn markov_zero_rewards_give_zero_values_and_uniform_play() {
        let states = 3;
        let rewards = RewardTable::zeros(states, 2, 2);
        let transitions = TransitionTensor::uniform(states, 2, 2);
        let solution =
            forward_solve_markov(&rewards, &transitions, 0.9, 1.0, &SolverConfig::default())
                .unwrap();
        assert!(solution.converged);
        for s in 0..states {
            assert!(solution.v[s].abs() < 1e-9);
            for p in solution.policies[s].mu.iter() {
                assert!((p - 0.5).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn markov_gamma_zero_is_the_myopic_game_in_one_sweep() {
        let mut rng = crate::rng::stream(41, "myopic-test", &[]);
        let states = 2;
        let values: Vec<f64> = (0..states * 3 * 3)
            .map(|_| crate::rng::standard_normal(&mut rng))
            .collect();
        let rewards = RewardTable::new(states, 3, 3, values).unwrap();
        let transitions = TransitionTensor::uniform(states, 3, 3);
        let solution =
            forward_solve_markov(&rewards, &transitions, 0.0, 1.0, &SolverConfig::default())
                .unwrap();
        assert!(solution.converged);
        assert_eq!(solution.iterations, 1);
        for s in 0..states {
            for a in 0..3 {
                for b in 0..3 {
                    assert_eq!(solution.q[s][(a, b)], rewards.get(s, a, b));
                }
            }
        }
    }

    #[test]
    fn markov_value_identity_holds_exactly() {
        let mut rng = crate::rng::stream(43, "value-identity-test", &[]);
        let states = 4;
        let values: Vec<f64> = (0..states * 3 * 3)
            .map(|_| crate::rng::standard_normal(&mut rng))
            .collect();
        let rewards = RewardTable::new(states, 3, 3, values).unwrap();
        let transitions = TransitionTensor::random(states, 3, 3, &mut rng);
        let tau = 1.5;
        let solution =
            forward_solve_markov(&rewards, &transitions, 0.9, tau, &SolverConfig::default())
                .unwrap();
        assert!(solution.converged);
        for s in 0..states {
            let value = regularized_value(&solution.q[s], &solution.policies[s], tau).unwrap();
            assert_abs_diff_eq!(solution.v[s], value, epsilon = 1e-12);
        }
    }

    #[test]
    fn bellman_sweeps_contract_at_rate_gamma() {
        let mut rng = crate::rng::stream(47, "contraction-test", &[]);
        let states = 5;
        let gamma = 0.9;
        let tau = 1.5;
        let values: Vec<f64> = (0..states * 3 * 3)
            .map(|_| crate::rng::standard_normal(&mut rng))
            .collect();
        let rewards = RewardTable::new(states, 3, 3, values).unwrap();
        let transitions = TransitionTensor::random(states, 3, 3, &mut rng);
        let config = SolverConfig::exact();

        let mut v = DVector::zeros(states);
        let mut warm: Vec<JointPolicy> = (0..states).map(|_| JointPolicy::uniform(3, 3)).collect();
        let mut deltas = Vec::new();
        for _ in 0..25 {
            let (v_next, policies) =
                bellman_sweep(&rewards, &transitions, gamma, tau, &config, &v, &warm).unwrap();
            deltas.push((&v_next - &v).amax());
            v = v_next;
            warm = policies;
        }
        for pair in deltas.windows(2).skip(5) {
            if pair[0] > 1e-12 {
                assert!(
                    pair[1] / pair[0] <= gamma + 0.05,
                    "contraction ratio {} too large",
                    pair[1] / pair[0]
                );
            }
        }
    }
}
