//! Game instances, linear feature parameterizations, and seeded generators.
//!
//! Payoffs (matrix games) and Q-functions (Markov games) are linear in a known
//! feature map: `Q(a, b) = <phi(a, b), theta>`. A game spec bundles the feature
//! map with the ground-truth parameters `(theta*, tau*)`, the normalization
//! constant pinning `||theta*||`, and, for Markov games, the transition
//! tensor and the reward table implied by Bellman inversion.
//!
//! All types are immutable after construction; generators are pure functions
//! of their seed.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::solver::{self, SolverConfig};

/// Whether a feature map indexes `(a, b)` pairs or `(s, a, b)` triples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GameKind {
    Matrix,
    Markov,
}

/// A dense feature tensor with one `d`-vector per action pair (per state for
/// Markov games), plus the max feature norm `bound` used by confidence-set
/// constants.
///
/// Layout is row-major: entry `j` of the vector at `(s, a, b)` lives at
/// `((s * m + a) * n + b) * d + j`; matrix-kind maps have a single state.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    kind: GameKind,
    states: usize,
    m: usize,
    n: usize,
    d: usize,
    values: Vec<f64>,
    bound: f64,
}

impl FeatureMap {
    pub fn matrix(m: usize, n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        Self::build(GameKind::Matrix, 1, m, n, d, values)
    }

    pub fn markov(states: usize, m: usize, n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        Self::build(GameKind::Markov, states, m, n, d, values)
    }

    fn build(
        kind: GameKind,
        states: usize,
        m: usize,
        n: usize,
        d: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if states == 0 || m == 0 || n == 0 || d == 0 {
            return Err(Error::invalid_parameter(
                "feature map dims",
                format!("degenerate shape (states={states}, m={m}, n={n}, d={d})"),
            ));
        }
        let expected = checked_len(&[states, m, n, d])?;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "feature values",
                expected,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid_parameter(
                "feature values",
                "non-finite entry".to_string(),
            ));
        }
        let mut map = FeatureMap {
            kind,
            states,
            m,
            n,
            d,
            values,
            bound: 0.0,
        };
        map.bound = map.max_feature_norm();
        Ok(map)
    }

    pub fn kind(&self) -> GameKind {
        self.kind
    }
    pub fn states(&self) -> usize {
        self.states
    }
    pub fn rows(&self) -> usize {
        self.m
    }
    pub fn cols(&self) -> usize {
        self.n
    }
    pub fn dim(&self) -> usize {
        self.d
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Max Euclidean feature norm, as stored at construction.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Recomputes the max feature norm from the raw values.
    pub fn max_feature_norm(&self) -> f64 {
        let mut max = 0.0_f64;
        for chunk in self.values.chunks_exact(self.d) {
            let norm = chunk.iter().map(|v| v * v).sum::<f64>().sqrt();
            max = max.max(norm);
        }
        max
    }

    /// The feature vector at `(s, a, b)`; matrix maps use `s = 0`.
    pub fn phi(&self, s: usize, a: usize, b: usize) -> &[f64] {
        let start = ((s * self.m + a) * self.n + b) * self.d;
        &self.values[start..start + self.d]
    }

    /// A copy keeping only the first `d_est` feature components, for
    /// estimation under an incomplete feature model.
    pub fn restrict(&self, d_est: usize) -> Result<FeatureMap> {
        if d_est == 0 || d_est > self.d {
            return Err(Error::invalid_parameter(
                "d_est",
                format!("{d_est} is outside 1..={}", self.d),
            ));
        }
        let values: Vec<f64> = self
            .values
            .chunks_exact(self.d)
            .flat_map(|chunk| chunk[..d_est].iter().copied())
            .collect();
        Self::build(self.kind, self.states, self.m, self.n, d_est, values)
    }
}

/// A dense `(state, a, b) -> f64` table (rewards, recovered rewards).
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTable {
    states: usize,
    m: usize,
    n: usize,
    values: Vec<f64>,
}

impl RewardTable {
    pub fn new(states: usize, m: usize, n: usize, values: Vec<f64>) -> Result<Self> {
        let expected = checked_len(&[states, m, n])?;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "reward table values",
                expected,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid_parameter(
                "reward table values",
                "non-finite entry".to_string(),
            ));
        }
        Ok(RewardTable {
            states,
            m,
            n,
            values,
        })
    }

    pub fn zeros(states: usize, m: usize, n: usize) -> Self {
        RewardTable {
            states,
            m,
            n,
            values: vec![0.0; states * m * n],
        }
    }

    pub fn states(&self) -> usize {
        self.states
    }
    pub fn rows(&self) -> usize {
        self.m
    }
    pub fn cols(&self) -> usize {
        self.n
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, s: usize, a: usize, b: usize) -> f64 {
        self.values[(s * self.m + a) * self.n + b]
    }

    /// The `m x n` slice at state `s`.
    pub fn state_matrix(&self, s: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.m, self.n, |a, b| self.get(s, a, b))
    }

    /// Max absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &RewardTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Transition kernel `P(s' | s, a, b)`, stored row-major with the next-state
/// distribution contiguous: index `((s * m + a) * n + b) * states + s'`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTensor {
    states: usize,
    m: usize,
    n: usize,
    probs: Vec<f64>,
}

impl TransitionTensor {
    pub fn new(states: usize, m: usize, n: usize, probs: Vec<f64>) -> Result<Self> {
        let expected = checked_len(&[states, m, n, states])?;
        if probs.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "transition probabilities",
                expected,
                actual: probs.len(),
            });
        }
        let tensor = TransitionTensor {
            states,
            m,
            n,
            probs,
        };
        tensor.validate()?;
        Ok(tensor)
    }

    /// Uniform next-state distribution for every `(s, a, b)`.
    pub fn uniform(states: usize, m: usize, n: usize) -> Self {
        TransitionTensor {
            states,
            m,
            n,
            probs: vec![1.0 / states as f64; states * m * n * states],
        }
    }

    /// Independent Dirichlet(1, …, 1) rows.
    pub fn random<R: Rng + ?Sized>(states: usize, m: usize, n: usize, rng: &mut R) -> Self {
        let mut probs = Vec::with_capacity(states * m * n * states);
        for _ in 0..states * m * n {
            probs.extend(rng::dirichlet_ones(rng, states));
        }
        TransitionTensor {
            states,
            m,
            n,
            probs,
        }
    }

    /// Checks every row is a probability distribution within 1e-12.
    pub fn validate(&self) -> Result<()> {
        for (row_index, row) in self.probs.chunks_exact(self.states).enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::invalid_parameter(
                    "transition row",
                    format!("row {row_index} has a negative or non-finite entry"),
                ));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::invalid_parameter(
                    "transition row",
                    format!("row {row_index} sums to {total}, not 1"),
                ));
            }
        }
        Ok(())
    }

    pub fn states(&self) -> usize {
        self.states
    }
    pub fn rows(&self) -> usize {
        self.m
    }
    pub fn cols(&self) -> usize {
        self.n
    }
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// The next-state distribution for `(s, a, b)`.
    pub fn row(&self, s: usize, a: usize, b: usize) -> &[f64] {
        let start = ((s * self.m + a) * self.n + b) * self.states;
        &self.probs[start..start + self.states]
    }

    /// `E_{s' ~ P(.|s,a,b)} v(s')`.
    pub fn expectation(&self, s: usize, a: usize, b: usize, v: &DVector<f64>) -> f64 {
        self.row(s, a, b)
            .iter()
            .zip(v.iter())
            .map(|(p, value)| p * value)
            .sum()
    }
}

/// Ground truth for a matrix-game recovery problem.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixGameSpec {
    pub features: FeatureMap,
    pub theta_star: DVector<f64>,
    pub tau_star: f64,
    /// The known norm `||theta*||_2` that pins the scale.
    pub normalization: f64,
}

impl MatrixGameSpec {
    pub fn new(
        features: FeatureMap,
        theta_star: DVector<f64>,
        tau_star: f64,
        normalization: f64,
    ) -> Result<Self> {
        if features.kind() != GameKind::Matrix {
            return Err(Error::invalid_parameter(
                "features",
                "matrix game spec requires a matrix-kind feature map".to_string(),
            ));
        }
        check_theta(&features, &theta_star, normalization)?;
        check_positive_tau(tau_star)?;
        Ok(MatrixGameSpec {
            features,
            theta_star,
            tau_star,
            normalization,
        })
    }

    /// The payoff matrix `Q*(a, b) = <phi(a, b), theta*>`.
    pub fn payoff(&self) -> DMatrix<f64> {
        build_payoff_matrix(&self.features, &self.theta_star)
            .expect("spec invariants guarantee matching dimensions")
    }
}

/// Ground truth for a Markov-game recovery problem. The reward table satisfies
/// the Bellman inversion `r*(s,a,b) = Q*(s,a,b) - gamma E[V*(s')]` by
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovGameSpec {
    pub features: FeatureMap,
    pub theta_star: DVector<f64>,
    pub tau_star: f64,
    /// The known norm `||theta*||_2` pinning the scale.
    pub normalization: f64,
    pub gamma: f64,
    pub transitions: TransitionTensor,
    pub rewards: RewardTable,
}

impl MarkovGameSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        features: FeatureMap,
        theta_star: DVector<f64>,
        tau_star: f64,
        normalization: f64,
        gamma: f64,
        transitions: TransitionTensor,
        rewards: RewardTable,
    ) -> Result<Self> {
        if features.kind() != GameKind::Markov {
            return Err(Error::invalid_parameter(
                "features",
                "markov game spec requires a markov-kind feature map".to_string(),
            ));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid_parameter(
                "gamma",
                format!("{gamma} is outside [0, 1)"),
            ));
        }
        check_theta(&features, &theta_star, normalization)?;
        check_positive_tau(tau_star)?;
        transitions.validate()?;
        let shape_ok = transitions.states() == features.states()
            && transitions.rows() == features.rows()
            && transitions.cols() == features.cols()
            && rewards.states() == features.states()
            && rewards.rows() == features.rows()
            && rewards.cols() == features.cols();
        if !shape_ok {
            return Err(Error::invalid_parameter(
                "markov game spec",
                "feature, transition, and reward shapes disagree".to_string(),
            ));
        }
        Ok(MarkovGameSpec {
            features,
            theta_star,
            tau_star,
            normalization,
            gamma,
            transitions,
            rewards,
        })
    }

    pub fn states(&self) -> usize {
        self.features.states()
    }

    /// Per-state Q tables `Q*(s, a, b) = <phi(s, a, b), theta*>`.
    pub fn q_star_tables(&self) -> Vec<DMatrix<f64>> {
        (0..self.states())
            .map(|s| state_payoff(&self.features, s, &self.theta_star))
            .collect()
    }

    /// Solves the per-state QRE and values from the stored Q tables.
    pub fn solve_equilibrium(&self, config: &SolverConfig) -> Result<MarkovEquilibrium> {
        solve_markov_equilibrium(&self.features, &self.theta_star, self.tau_star, config)
    }
}

/// Per-state equilibrium data derived from a directly parameterized Q-function.
#[derive(Debug, Clone)]
pub struct MarkovEquilibrium {
    pub policies: Vec<solver::JointPolicy>,
    pub q: Vec<DMatrix<f64>>,
    pub v: DVector<f64>,
    /// Max per-state fixed-point residual.
    pub residual: f64,
}

fn solve_markov_equilibrium(
    features: &FeatureMap,
    theta: &DVector<f64>,
    tau: f64,
    config: &SolverConfig,
) -> Result<MarkovEquilibrium> {
    let q_tables: Vec<DMatrix<f64>> = (0..features.states())
        .map(|s| state_payoff(features, s, theta))
        .collect();
    let solutions = solver::policies_from_q_tables(&q_tables, tau, config)?;
    let mut v = DVector::zeros(features.states());
    let mut policies = Vec::with_capacity(features.states());
    let mut residual: f64 = 0.0;
    for (s, solution) in solutions.into_iter().enumerate() {
        v[s] = solver::regularized_value(&q_tables[s], &solution.policy, tau)?;
        residual = residual.max(solution.residual);
        policies.push(solution.policy);
    }
    Ok(MarkovEquilibrium {
        policies,
        q: q_tables,
        v,
        residual,
    })
}

/// `Q(a, b) = <phi(a, b), theta>` for a matrix-kind feature map.
pub fn build_payoff_matrix(features: &FeatureMap, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    if features.kind() != GameKind::Matrix {
        return Err(Error::invalid_parameter(
            "features",
            "build_payoff_matrix requires a matrix-kind feature map".to_string(),
        ));
    }
    if theta.len() != features.dim() {
        return Err(Error::DimensionMismatch {
            what: "theta length vs feature dimension",
            expected: features.dim(),
            actual: theta.len(),
        });
    }
    Ok(state_payoff(features, 0, theta))
}

/// The state-`s` payoff/Q table `<phi(s, a, b), theta>`; callers guarantee the
/// dimension match.
pub fn state_payoff(features: &FeatureMap, s: usize, theta: &DVector<f64>) -> DMatrix<f64> {
    debug_assert_eq!(theta.len(), features.dim());
    DMatrix::from_fn(features.rows(), features.cols(), |a, b| {
        features
            .phi(s, a, b)
            .iter()
            .zip(theta.iter())
            .map(|(f, t)| f * t)
            .sum()
    })
}

/// Samples a matrix game: features and raw `theta` i.i.d. standard normal,
/// `theta` rescaled so `||theta*||_2 = normalization`.
pub fn generate_matrix_game(
    m: usize,
    n: usize,
    d: usize,
    tau_star: f64,
    normalization: f64,
    seed: u64,
) -> Result<MatrixGameSpec> {
    if m < 2 || n < 2 {
        return Err(Error::invalid_parameter(
            "action counts",
            format!("need m, n >= 2, got ({m}, {n})"),
        ));
    }
    if d < 1 {
        return Err(Error::invalid_parameter("d", "need d >= 1".to_string()));
    }
    check_positive_tau(tau_star)?;
    check_positive_norm(normalization)?;

    let mut feature_rng = rng::stream(seed, "matrix-game/features", &[]);
    let values: Vec<f64> = (0..m * n * d)
        .map(|_| rng::standard_normal(&mut feature_rng))
        .collect();
    let features = FeatureMap::matrix(m, n, d, values)?;

    let mut theta_rng = rng::stream(seed, "matrix-game/theta", &[]);
    let theta = rescaled_normal_vector(d, normalization, &mut theta_rng);

    MatrixGameSpec::new(features, theta, tau_star, normalization)
}

/// Samples a Markov game: normal features and `theta*` (rescaled to the given
/// norm), Dirichlet(1) transition rows, Q-tables `<phi, theta*>`, per-state QRE
/// policies and values, and rewards set by Bellman inversion.
#[allow(clippy::too_many_arguments)]
pub fn generate_markov_game(
    states: usize,
    m: usize,
    n: usize,
    d: usize,
    tau_star: f64,
    normalization: f64,
    gamma: f64,
    seed: u64,
) -> Result<MarkovGameSpec> {
    if states < 1 {
        return Err(Error::invalid_parameter(
            "states",
            "need at least 1".to_string(),
        ));
    }
    if m < 2 || n < 2 {
        return Err(Error::invalid_parameter(
            "action counts",
            format!("need m, n >= 2, got ({m}, {n})"),
        ));
    }
    if d < 1 {
        return Err(Error::invalid_parameter("d", "need d >= 1".to_string()));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::invalid_parameter(
            "gamma",
            format!("{gamma} is outside [0, 1)"),
        ));
    }
    check_positive_tau(tau_star)?;
    check_positive_norm(normalization)?;

    let mut feature_rng = rng::stream(seed, "markov-game/features", &[]);
    let values: Vec<f64> = (0..states * m * n * d)
        .map(|_| rng::standard_normal(&mut feature_rng))
        .collect();
    let features = FeatureMap::markov(states, m, n, d, values)?;

    let mut theta_rng = rng::stream(seed, "markov-game/theta", &[]);
    let theta = rescaled_normal_vector(d, normalization, &mut theta_rng);

    let mut transition_rng = rng::stream(seed, "markov-game/transitions", &[]);
    let transitions = TransitionTensor::random(states, m, n, &mut transition_rng);

    // Rewards come from inverting the Bellman equation at the equilibrium of
    // the directly parameterized Q-function; solve tightly so the stored game
    // is consistent to well below test tolerances.
    let equilibrium =
        solve_markov_equilibrium(&features, &theta, tau_star, &SolverConfig::exact())?;
    let mut reward_values = Vec::with_capacity(states * m * n);
    for s in 0..states {
        for a in 0..m {
            for b in 0..n {
                let q = equilibrium.q[s][(a, b)];
                reward_values.push(q - gamma * transitions.expectation(s, a, b, &equilibrium.v));
            }
        }
    }
    let rewards = RewardTable::new(states, m, n, reward_values)?;

    MarkovGameSpec::new(
        features,
        theta,
        tau_star,
        normalization,
        gamma,
        transitions,
        rewards,
    )
}

fn rescaled_normal_vector<R: Rng + ?Sized>(d: usize, norm: f64, rng: &mut R) -> DVector<f64> {
    loop {
        let raw = DVector::from_fn(d, |_, _| rng::standard_normal(rng));
        let raw_norm = raw.norm();
        if raw_norm > 0.0 {
            return raw * (norm / raw_norm);
        }
    }
}

/// Overflow-safe dimension product, so hostile document headers cannot panic
/// the shape checks.
fn checked_len(parts: &[usize]) -> Result<usize> {
    parts
        .iter()
        .try_fold(1usize, |acc, p| acc.checked_mul(*p))
        .ok_or_else(|| {
            Error::invalid_parameter("dimensions", "dimension product overflows".to_string())
        })
}

fn check_theta(features: &FeatureMap, theta: &DVector<f64>, normalization: f64) -> Result<()> {
    if theta.len() != features.dim() {
        return Err(Error::DimensionMismatch {
            what: "theta length vs feature dimension",
            expected: features.dim(),
            actual: theta.len(),
        });
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid_parameter(
            "theta",
            "non-finite entry".to_string(),
        ));
    }
    check_positive_norm(normalization)?;
    let norm = theta.norm();
    if (norm - normalization).abs() > 1e-12 * normalization {
        return Err(Error::invalid_parameter(
            "theta norm",
            format!("||theta|| = {norm} but the normalization constant is {normalization}"),
        ));
    }
    Ok(())
}

fn check_positive_tau(tau: f64) -> Result<()> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::invalid_parameter(
            "tau_star",
            format!("temperature must be positive, got {tau}"),
        ));
    }
    Ok(())
}

fn check_positive_norm(normalization: f64) -> Result<()> {
    if normalization.is_nan() || normalization <= 0.0 || normalization.is_infinite() {
        return Err(Error::invalid_parameter(
            "normalization",
            format!("must be positive and finite, got {normalization}"),
        ));
    }
    Ok(())
}
