//! Observational data drawn from equilibrium play, and the empirical
//! estimators feeding the inverse pipeline.
//!
//! Matrix-game data are i.i.d. action pairs `(a, b)` with the players
//! randomizing independently; Markov-game data are drawn with generative-model
//! access (a fixed number of pairs per state, each followed by one next-state
//! draw), not trajectory rollouts.

use crate::error::{Error, Result};
use crate::game::{MarkovGameSpec, TransitionTensor};
use crate::rng;
use crate::solver::JointPolicy;
use nalgebra::DVector;

/// Action counts from `total` rounds of matrix-game play.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatrixSample {
    pub counts_a: Vec<u64>,
    pub counts_b: Vec<u64>,
    pub total: u64,
}

impl MatrixSample {
    pub fn new(counts_a: Vec<u64>, counts_b: Vec<u64>, total: u64) -> Result<Self> {
        let sample = MatrixSample {
            counts_a,
            counts_b,
            total,
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts_a.is_empty() || self.counts_b.is_empty() {
            return Err(Error::invalid_document(
                "matrix sample",
                "empty count vector",
            ));
        }
        for (player, counts) in [("a", &self.counts_a), ("b", &self.counts_b)] {
            let sum = checked_sum(counts)
                .ok_or_else(|| Error::invalid_document("matrix sample", "count sum overflows"))?;
            if sum != self.total {
                return Err(Error::invalid_document(
                    "matrix sample",
                    format!(
                        "player {player} counts sum to {sum}, expected {}",
                        self.total
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Per-state action-pair counts plus next-state transition counts drawn at a
/// fixed budget per state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkovDataset {
    states: usize,
    m: usize,
    n: usize,
    /// `pair_counts[s][a * n + b]`
    pair_counts: Vec<Vec<u64>>,
    /// `transition_counts[(s * m + a) * n + b][s']`
    transition_counts: Vec<Vec<u64>>,
    n_per_state: u64,
}

impl MarkovDataset {
    pub fn new(
        states: usize,
        m: usize,
        n: usize,
        pair_counts: Vec<Vec<u64>>,
        transition_counts: Vec<Vec<u64>>,
        n_per_state: u64,
    ) -> Result<Self> {
        let data = MarkovDataset {
            states,
            m,
            n,
            pair_counts,
            transition_counts,
            n_per_state,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        if self.states == 0 || self.m == 0 || self.n == 0 {
            return Err(Error::invalid_document(
                "markov dataset",
                "degenerate dimensions",
            ));
        }
        let cells = self
            .states
            .checked_mul(self.m)
            .and_then(|x| x.checked_mul(self.n))
            .ok_or_else(|| Error::invalid_document("markov dataset", "dimension overflow"))?;
        if self.pair_counts.len() != self.states || self.transition_counts.len() != cells {
            return Err(Error::invalid_document(
                "markov dataset",
                "table shape mismatch",
            ));
        }
        for (s, table) in self.pair_counts.iter().enumerate() {
            if table.len() != self.m * self.n {
                return Err(Error::invalid_document(
                    "markov dataset",
                    format!("state {s} pair table has wrong size"),
                ));
            }
            let sum = checked_sum(table).ok_or_else(|| {
                Error::invalid_document("markov dataset", "pair count sum overflows")
            })?;
            if sum != self.n_per_state {
                return Err(Error::invalid_document(
                    "markov dataset",
                    format!(
                        "state {s} pair counts sum to {sum}, expected {}",
                        self.n_per_state
                    ),
                ));
            }
        }
        // Transition counts must be consistent with the pair counts.
        for s in 0..self.states {
            for a in 0..self.m {
                for b in 0..self.n {
                    let row = &self.transition_counts[(s * self.m + a) * self.n + b];
                    if row.len() != self.states {
                        return Err(Error::invalid_document(
                            "markov dataset",
                            "transition row has wrong length",
                        ));
                    }
                    let row_sum = checked_sum(row).ok_or_else(|| {
                        Error::invalid_document("markov dataset", "transition count sum overflows")
                    })?;
                    if row_sum != self.pair_counts[s][a * self.n + b] {
                        return Err(Error::invalid_document(
                            "markov dataset",
                            format!("transition counts at (s={s}, a={a}, b={b}) disagree with pair counts"),
                        ));
                    }
                }
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
    pub fn n_per_state(&self) -> u64 {
        self.n_per_state
    }

    /// Total sample count `K = states * n_per_state`.
    pub fn total(&self) -> u64 {
        (self.states as u64).saturating_mul(self.n_per_state)
    }

    pub fn pair_count(&self, s: usize, a: usize, b: usize) -> u64 {
        self.pair_counts[s][a * self.n + b]
    }

    pub fn pair_counts(&self, s: usize) -> &[u64] {
        &self.pair_counts[s]
    }

    pub fn transition_counts(&self, s: usize, a: usize, b: usize) -> &[u64] {
        &self.transition_counts[(s * self.m + a) * self.n + b]
    }

    /// Marginal action counts for both players at state `s`.
    pub fn marginals(&self, s: usize) -> (Vec<u64>, Vec<u64>) {
        let mut counts_a = vec![0u64; self.m];
        let mut counts_b = vec![0u64; self.n];
        for (a, count_a) in counts_a.iter_mut().enumerate() {
            for (b, count_b) in counts_b.iter_mut().enumerate() {
                let c = self.pair_count(s, a, b);
                *count_a += c;
                *count_b += c;
            }
        }
        (counts_a, counts_b)
    }
}

/// Frequency-estimated policies plus a flag recording whether any zero count
/// had to be floored (log-ratios are undefined at exact zeros).
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalPolicy {
    pub policy: JointPolicy,
    pub floored: bool,
}

/// The default probability floor `1 / (2N)`: keeps small-sample systems
/// defined while vanishing faster than the estimation error itself.
pub fn default_floor(total: u64) -> f64 {
    1.0 / (2.0 * total as f64)
}

fn checked_sum(values: &[u64]) -> Option<u64> {
    values.iter().try_fold(0u64, |acc, v| acc.checked_add(*v))
}

/// Draws `total` rounds of play; each round samples `a ~ mu` and `b ~ nu`
/// independently. Deterministic given the seed.
pub fn sample_matrix_play(policy: &JointPolicy, total: u64, seed: u64) -> Result<MatrixSample> {
    if total == 0 {
        return Err(Error::invalid_parameter(
            "sample size",
            "need N >= 1".to_string(),
        ));
    }
    policy.validate()?;
    let mut rng = rng::stream(seed, "matrix-play", &[]);
    let mu: Vec<f64> = policy.mu.iter().copied().collect();
    let nu: Vec<f64> = policy.nu.iter().copied().collect();
    let mut counts_a = vec![0u64; mu.len()];
    let mut counts_b = vec![0u64; nu.len()];
    for _ in 0..total {
        counts_a[rng::categorical(&mut rng, &mu)] += 1;
        counts_b[rng::categorical(&mut rng, &nu)] += 1;
    }
    Ok(MatrixSample {
        counts_a,
        counts_b,
        total,
    })
}

/// Frequency estimators with zero-count flooring: zero entries are replaced by
/// `floor` and the vector renormalized.
pub fn empirical_policies(sample: &MatrixSample, floor: f64) -> Result<EmpiricalPolicy> {
    if sample.total == 0 {
        return Err(Error::invalid_parameter(
            "sample size",
            "cannot form frequencies from zero samples".to_string(),
        ));
    }
    if floor.is_nan() || floor < 0.0 {
        return Err(Error::invalid_parameter(
            "floor",
            "must be nonnegative".to_string(),
        ));
    }
    let (mu, floored_a) = frequencies(&sample.counts_a, sample.total, floor);
    let (nu, floored_b) = frequencies(&sample.counts_b, sample.total, floor);
    Ok(EmpiricalPolicy {
        policy: JointPolicy::new(mu, nu),
        floored: floored_a || floored_b,
    })
}

fn frequencies(counts: &[u64], total: u64, floor: f64) -> (DVector<f64>, bool) {
    let mut p = DVector::from_fn(counts.len(), |i, _| counts[i] as f64 / total as f64);
    let has_zero = counts.contains(&0);
    if has_zero && floor > 0.0 {
        for entry in p.iter_mut() {
            if *entry == 0.0 {
                *entry = floor;
            }
        }
        let sum: f64 = p.iter().sum();
        p /= sum;
    }
    (p, has_zero && floor > 0.0)
}

/// Draws a generative-model dataset: `n_per_state` action pairs from the
/// product policy at every state, each pair followed by one next-state draw.
pub fn sample_markov_dataset(
    game: &MarkovGameSpec,
    policies: &[JointPolicy],
    n_per_state: u64,
    seed: u64,
) -> Result<MarkovDataset> {
    if n_per_state == 0 {
        return Err(Error::invalid_parameter(
            "sample size",
            "need N_per_state >= 1".to_string(),
        ));
    }
    let states = game.states();
    if policies.len() != states {
        return Err(Error::DimensionMismatch {
            what: "per-state policies",
            expected: states,
            actual: policies.len(),
        });
    }
    let m = game.features.rows();
    let n = game.features.cols();
    let mut pair_counts = vec![vec![0u64; m * n]; states];
    let mut transition_counts = vec![vec![0u64; states]; states * m * n];
    for (s, policy) in policies.iter().enumerate() {
        policy.validate()?;
        let mu: Vec<f64> = policy.mu.iter().copied().collect();
        let nu: Vec<f64> = policy.nu.iter().copied().collect();
        let mut rng = rng::stream(seed, "markov-play", &[s as u64]);
        for _ in 0..n_per_state {
            let a = rng::categorical(&mut rng, &mu);
            let b = rng::categorical(&mut rng, &nu);
            pair_counts[s][a * n + b] += 1;
            let next = rng::categorical(&mut rng, game.transitions.row(s, a, b));
            transition_counts[(s * m + a) * n + b][next] += 1;
        }
    }
    Ok(MarkovDataset {
        states,
        m,
        n,
        pair_counts,
        transition_counts,
        n_per_state,
    })
}

/// Per-state frequency-estimated policies; `floor = None` uses the default
/// `1 / (2 N_per_state)`. The flag is set if any state needed flooring.
pub fn empirical_markov_policies(
    data: &MarkovDataset,
    floor: Option<f64>,
) -> Result<(Vec<JointPolicy>, bool)> {
    let floor = floor.unwrap_or_else(|| default_floor(data.n_per_state));
    if floor.is_nan() || floor < 0.0 {
        return Err(Error::invalid_parameter(
            "floor",
            "must be nonnegative".to_string(),
        ));
    }
    let mut policies = Vec::with_capacity(data.states);
    let mut any_floored = false;
    for s in 0..data.states {
        let (counts_a, counts_b) = data.marginals(s);
        let (mu, fa) = frequencies(&counts_a, data.n_per_state, floor);
        let (nu, fb) = frequencies(&counts_b, data.n_per_state, floor);
        any_floored |= fa || fb;
        policies.push(JointPolicy::new(mu, nu));
    }
    Ok((policies, any_floored))
}

/// Smoothed transition MLE:
/// `P(s'|s,a,b) = (count(s,a,b,s') + alpha) / (count(s,a,b,.) + alpha * S)`.
///
/// `alpha = 0` is the raw MLE and errors on any unvisited `(s, a, b)`.
pub fn estimate_transitions(data: &MarkovDataset, alpha: f64) -> Result<TransitionTensor> {
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::invalid_parameter(
            "alpha",
            "must be nonnegative".to_string(),
        ));
    }
    let states = data.states;
    let mut probs = Vec::with_capacity(states * data.m * data.n * states);
    for s in 0..states {
        for a in 0..data.m {
            for b in 0..data.n {
                let row = data.transition_counts(s, a, b);
                let total: u64 = row.iter().sum();
                let denom = total as f64 + alpha * states as f64;
                if denom == 0.0 {
                    return Err(Error::UnvisitedStateAction { state: s, a, b });
                }
                for count in row {
                    probs.push((*count as f64 + alpha) / denom);
                }
            }
        }
    }
    TransitionTensor::new(states, data.m, data.n, probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::generate_markov_game;
    use crate::solver::SolverConfig;
    use approx::assert_abs_diff_eq;

    #[test]
    fn point_mass_concentrates_and_seeds_are_deterministic() {
        let policy = JointPolicy::new(
            DVector::from_vec(vec![0.0, 1.0, 0.0]),
            DVector::from_vec(vec![1.0, 0.0]),
        );
        let sample = sample_matrix_play(&policy, 500, 4).unwrap();
        assert_eq!(sample.counts_a, vec![0, 500, 0]);
        assert_eq!(sample.counts_b, vec![500, 0]);

        let uniform = JointPolicy::uniform(4, 4);
        let first = sample_matrix_play(&uniform, 1000, 9).unwrap();
        let second = sample_matrix_play(&uniform, 1000, 9).unwrap();
        assert_eq!(first, second);
        assert_ne!(first, sample_matrix_play(&uniform, 1000, 10).unwrap());

        assert!(sample_matrix_play(&uniform, 0, 1).is_err());
    }

    #[test]
    fn large_uniform_sample_concentrates_to_a_half_percent() {
        let uniform = JointPolicy::uniform(10, 10);
        let total = 1_000_000;
        let sample = sample_matrix_play(&uniform, total, 12).unwrap();
        for counts in [&sample.counts_a, &sample.counts_b] {
            for c in counts {
                let freq = *c as f64 / total as f64;
                assert!((freq - 0.1).abs() < 0.005, "freq {freq}");
            }
        }
    }

    #[test]
    fn empirical_frequencies_and_floor_arithmetic() {
        let sample = MatrixSample::new(vec![5, 5], vec![4, 6], 10).unwrap();
        let est = empirical_policies(&sample, 0.0).unwrap();
        assert_eq!(est.policy.mu, DVector::from_vec(vec![0.5, 0.5]));
        assert!(!est.floored);

        // Floor-then-renormalize: [1.0, 0.05] / 1.05 = [20/21, 1/21].
        let sample = MatrixSample::new(vec![10, 0], vec![5, 5], 10).unwrap();
        let est = empirical_policies(&sample, 1.0 / 20.0).unwrap();
        assert!(est.floored);
        assert_abs_diff_eq!(est.policy.mu[0], 20.0 / 21.0, epsilon = 1e-15);
        assert_abs_diff_eq!(est.policy.mu[1], 1.0 / 21.0, epsilon = 1e-15);
        assert_abs_diff_eq!(est.policy.mu[0], 0.9523809523809523, epsilon = 1e-15);
        assert_abs_diff_eq!(est.policy.mu[1], 0.047619047619047616, epsilon = 1e-15);

        // Flooring moves no entry by more than floor * len after renormalizing.
        let sample = MatrixSample::new(vec![7, 0, 3, 0], vec![10, 0], 10).unwrap();
        let floor = 0.02;
        let est = empirical_policies(&sample, floor).unwrap();
        let raw = [0.7, 0.0, 0.3, 0.0];
        for (p, r) in est.policy.mu.iter().zip(raw) {
            assert!((p - r).abs() <= floor * 4.0 + 1e-15);
        }
    }

    #[test]
    fn default_floor_matches_half_inverse_n() {
        assert_eq!(default_floor(10), 0.05);
        assert_eq!(default_floor(1000), 0.0005);
    }

    #[test]
    fn single_state_dataset_is_matrix_sampling_plus_next_states() {
        let spec = generate_markov_game(1, 4, 4, 3, 1.0, 1.0, 0.8, 29).unwrap();
        let equilibrium = spec.solve_equilibrium(&SolverConfig::default()).unwrap();
        let data = sample_markov_dataset(&spec, &equilibrium.policies, 300, 17).unwrap();
        assert_eq!(data.states(), 1);
        assert_eq!(data.total(), 300);
        // The marginals form a valid matrix sample for the same policy.
        let (counts_a, counts_b) = data.marginals(0);
        let sample = MatrixSample::new(counts_a, counts_b, 300).unwrap();
        sample.validate().unwrap();
        // Every pair draw got exactly one next-state draw.
        let drawn: u64 = (0..4)
            .flat_map(|a| (0..4).map(move |b| (a, b)))
            .map(|(a, b)| data.transition_counts(0, a, b).iter().sum::<u64>())
            .sum();
        assert_eq!(drawn, 300);
    }

    #[test]
    fn markov_dataset_bookkeeping_identities() {
        let spec = generate_markov_game(3, 3, 3, 4, 1.5, 1.0, 0.9, 31).unwrap();
        let equilibrium = spec.solve_equilibrium(&SolverConfig::default()).unwrap();
        let data = sample_markov_dataset(&spec, &equilibrium.policies, 200, 13).unwrap();

        assert_eq!(data.total(), 3 * 200);
        data.validate().unwrap();
        // Transition counts per (s, a, b) sum to that pair's draw count.
        for s in 0..3 {
            for a in 0..3 {
                for b in 0..3 {
                    let row_sum: u64 = data.transition_counts(s, a, b).iter().sum();
                    assert_eq!(row_sum, data.pair_count(s, a, b));
                }
            }
        }

        let again = sample_markov_dataset(&spec, &equilibrium.policies, 200, 13).unwrap();
        assert_eq!(data, again);
    }

    #[test]
    fn transition_estimation_smoothing_and_mle() {
        let spec = generate_markov_game(3, 2, 2, 3, 1.0, 1.0, 0.5, 41).unwrap();
        // A dataset where state 0 only ever plays (0, 0): other pairs unvisited.
        let point = JointPolicy::new(
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![1.0, 0.0]),
        );
        let policies = vec![point.clone(), point.clone(), point];
        let data = sample_markov_dataset(&spec, &policies, 50, 5).unwrap();

        // Laplace smoothing gives the uniform prior at unvisited pairs.
        let smoothed = estimate_transitions(&data, 1.0).unwrap();
        for p in smoothed.row(0, 1, 1) {
            assert_abs_diff_eq!(*p, 1.0 / 3.0, epsilon = 1e-15);
        }
        smoothed.validate().unwrap();
        assert!(smoothed.probs().iter().all(|p| *p > 0.0));

        // alpha = 0 on an unvisited pair is undefined.
        match estimate_transitions(&data, 0.0) {
            Err(Error::UnvisitedStateAction { .. }) => {}
            other => panic!("expected UnvisitedStateAction, got {other:?}"),
        }

        // alpha = 0 with every pair visited reproduces the raw frequencies.
        let spec = generate_markov_game(2, 2, 2, 3, 1.0, 1.0, 0.5, 42).unwrap();
        let equilibrium = spec.solve_equilibrium(&SolverConfig::default()).unwrap();
        let data = sample_markov_dataset(&spec, &equilibrium.policies, 4000, 6).unwrap();
        let raw = estimate_transitions(&data, 0.0).unwrap();
        for s in 0..2 {
            for a in 0..2 {
                for b in 0..2 {
                    let counts = data.transition_counts(s, a, b);
                    let total: u64 = counts.iter().sum();
                    assert!(total > 0);
                    for (p, c) in raw.row(s, a, b).iter().zip(counts) {
                        assert_abs_diff_eq!(*p, *c as f64 / total as f64, epsilon = 1e-15);
                    }
                }
            }
        }
    }
}
