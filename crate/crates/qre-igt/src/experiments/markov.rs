//! Markov-game experiments: parameter/reward convergence with known dynamics,
//! and the known-P versus estimated-P robustness comparison.

use super::output::{summarize_grid, Cell, RawTable};
use super::{attach_slopes, run_trials, ConvergenceReport, ExperimentConfig, MarkovParams};
use crate::error::Result;
use crate::estimator::{recover_markov_rewards, DynamicsMode, MarkovRecovery};
use crate::game::{generate_markov_game, MarkovEquilibrium, MarkovGameSpec};
use crate::rng::subseed;
use crate::sampling::{
    empirical_markov_policies, estimate_transitions, sample_markov_dataset, MarkovDataset,
};
use crate::solver::{JointPolicy, SolverConfig};
use crate::system::build_markov_system;

struct MarkovTrial {
    spec: MarkovGameSpec,
    equilibrium: MarkovEquilibrium,
}

fn markov_trial(
    params: &MarkovParams,
    seed: u64,
    trial: usize,
    fixed_game: bool,
) -> Result<MarkovTrial> {
    let index = if fixed_game { 0 } else { trial as u64 };
    let game_seed = subseed(seed, "markov-game", &[index]);
    let spec = generate_markov_game(
        params.states,
        params.m,
        params.n,
        params.d,
        params.tau_star,
        params.normalization,
        params.gamma,
        game_seed,
    )?;
    let equilibrium = spec.solve_equilibrium(&SolverConfig::exact())?;
    Ok(MarkovTrial { spec, equilibrium })
}

/// Draws a per-state dataset of `k / states` pairs and returns it with the
/// floored empirical policies.
fn sampled_dataset(
    trial: &MarkovTrial,
    k: u64,
    floor: Option<f64>,
    sample_seed: u64,
) -> Result<(MarkovDataset, Vec<JointPolicy>)> {
    let n_per_state = k / trial.spec.states() as u64;
    let data = sample_markov_dataset(
        &trial.spec,
        &trial.equilibrium.policies,
        n_per_state,
        sample_seed,
    )?;
    let (policies, _floored) = empirical_markov_policies(&data, floor)?;
    Ok((data, policies))
}

fn recover(
    trial: &MarkovTrial,
    policies: &[JointPolicy],
    transitions: &crate::game::TransitionTensor,
    mode: DynamicsMode,
    normalization: f64,
) -> Result<MarkovRecovery> {
    let system = build_markov_system(&trial.spec.features, policies)?;
    recover_markov_rewards(
        &system,
        normalization,
        &trial.spec.features,
        policies,
        transitions,
        trial.spec.gamma,
        mode,
    )
}

/// Parameter and reward recovery error versus the total sample count `K`,
/// using the true dynamics for the reward step.
pub fn run_convergence_markov(config: &ExperimentConfig) -> Result<ConvergenceReport> {
    config.validate()?;
    let grid = config.markov_grid()?;
    let params = config.markov.clone();

    let outcomes = run_trials(config.trials, |trial| -> Vec<Result<(f64, f64, f64)>> {
        let setup = match markov_trial(&params, config.seed, trial, config.fixed_game) {
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
            .map(|(gi, k)| {
                let sample_seed = subseed(config.seed, "markov-play", &[trial as u64, gi as u64]);
                let (_, policies) = sampled_dataset(&setup, *k, config.floor, sample_seed)?;
                let recovery = recover(
                    &setup,
                    &policies,
                    &setup.spec.transitions,
                    DynamicsMode::KnownP,
                    params.normalization,
                )?;
                Ok((
                    (&recovery.theta_hat - &setup.spec.theta_star).norm(),
                    (recovery.tau_hat - params.tau_star).abs(),
                    recovery.r_hat.max_abs_diff(&setup.spec.rewards),
                ))
            })
            .collect()
    });

    let mut raw = RawTable::new(vec![
        "trial",
        "k",
        "theta_error",
        "tau_error",
        "reward_error",
    ]);
    let mut failures = vec![0u64; grid.len()];
    for (trial, cells) in outcomes.into_iter().enumerate() {
        for (gi, cell) in cells.into_iter().enumerate() {
            match cell {
                Ok((theta_error, tau_error, reward_error)) => raw.push(vec![
                    Cell::Int(trial as u64),
                    Cell::Int(grid[gi]),
                    Cell::Float(theta_error),
                    Cell::Float(tau_error),
                    Cell::Float(reward_error),
                ]),
                Err(_) => failures[gi] += 1,
            }
        }
    }

    let mut metrics = summarize_grid(&raw, "k", &["theta_error", "tau_error", "reward_error"]);
    attach_slopes(&mut metrics, &grid)?;
    Ok(ConvergenceReport {
        grid,
        trials: config.trials,
        metrics,
        failures,
        raw,
    })
}

/// Reward recovery error versus `K` with both recovery modes on shared data:
/// the true dynamics against Laplace-smoothed transition estimates.
pub fn run_unknown_dynamics(config: &ExperimentConfig) -> Result<ConvergenceReport> {
    config.validate()?;
    let grid = config.markov_grid()?;
    let params = config.markov.clone();

    type CellValues = (f64, f64, f64, f64);
    let outcomes = run_trials(config.trials, |trial| -> Vec<Result<CellValues>> {
        let setup = match markov_trial(&params, config.seed, trial, config.fixed_game) {
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
            .map(|(gi, k)| {
                let sample_seed = subseed(config.seed, "markov-play", &[trial as u64, gi as u64]);
                let (data, policies) = sampled_dataset(&setup, *k, config.floor, sample_seed)?;

                let known = recover(
                    &setup,
                    &policies,
                    &setup.spec.transitions,
                    DynamicsMode::KnownP,
                    params.normalization,
                )?;
                let estimated_p = estimate_transitions(&data, config.alpha)?;
                let estimated = recover(
                    &setup,
                    &policies,
                    &estimated_p,
                    DynamicsMode::EstimatedP,
                    params.normalization,
                )?;
                Ok((
                    (&known.theta_hat - &setup.spec.theta_star).norm(),
                    (known.tau_hat - params.tau_star).abs(),
                    known.r_hat.max_abs_diff(&setup.spec.rewards),
                    estimated.r_hat.max_abs_diff(&setup.spec.rewards),
                ))
            })
            .collect()
    });

    let mut raw = RawTable::new(vec![
        "trial",
        "k",
        "theta_error",
        "tau_error",
        "reward_error_known_p",
        "reward_error_estimated_p",
    ]);
    let mut failures = vec![0u64; grid.len()];
    for (trial, cells) in outcomes.into_iter().enumerate() {
        for (gi, cell) in cells.into_iter().enumerate() {
            match cell {
                Ok((theta_error, tau_error, known, estimated)) => raw.push(vec![
                    Cell::Int(trial as u64),
                    Cell::Int(grid[gi]),
                    Cell::Float(theta_error),
                    Cell::Float(tau_error),
                    Cell::Float(known),
                    Cell::Float(estimated),
                ]),
                Err(_) => failures[gi] += 1,
            }
        }
    }

    let mut metrics = summarize_grid(
        &raw,
        "k",
        &[
            "theta_error",
            "tau_error",
            "reward_error_known_p",
            "reward_error_estimated_p",
        ],
    );
    attach_slopes(&mut metrics, &grid)?;
    Ok(ConvergenceReport {
        grid,
        trials: config.trials,
        metrics,
        failures,
        raw,
    })
}
