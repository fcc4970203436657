//! Command-line surface: generation, forward solving, estimation,
//! confidence-set scans, experiment sweeps, and the self-test battery.
//!
//! All inputs are files and flags (no environment state); flag overrides take
//! precedence over config-file values, and every output embeds the effective
//! merged config. Exit codes: 0 success, 2 usage/config, 3 numerical failure,
//! 4 I/O.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::error::{Error, Result};
use crate::estimator::{
    confidence_threshold, estimate_soft_min_gap, nls_estimate, recover_markov_rewards,
    scan_confidence_set, ConfidenceConfig, DynamicsMode,
};
use crate::experiments::{run_and_write, verify_written_outputs, ExperimentConfig, ExperimentKind};
use crate::files::{
    self, read_game_spec, read_markov_dataset, read_matrix_sample, DocumentMetadata, GameSpec,
    GenerateConfig,
};
use crate::game::{generate_markov_game, generate_matrix_game, MarkovGameSpec, MatrixGameSpec};
use crate::sampling::{
    default_floor, empirical_markov_policies, empirical_policies, estimate_transitions,
    sample_markov_dataset, sample_matrix_play,
};
use crate::solver::{forward_solve_markov, solve_matrix_qre, JointPolicy, SolverConfig};
use crate::system::{build_markov_system, build_system};
use crate::verify;

#[derive(Debug, Parser)]
#[command(
    name = "qre-igt",
    version,
    about = "Quantal response equilibria of entropy-regularized zero-sum games, \
             and joint recovery of payoff parameters and the rationality temperature from play"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Worker threads for experiment sweeps (default: available parallelism;
    /// use 1 for single-threaded debugging; outputs are identical either way).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Print progress details.
    #[arg(long, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random game spec and write it as a JSON document.
    Generate(GenerateArgs),
    /// Solve a game spec to its equilibrium and write the solution JSON.
    SolveQre(SolveArgs),
    /// Estimate parameters (and rewards, for Markov specs) from sampled play.
    Estimate(EstimateArgs),
    /// Scan the confidence-set membership predicate and export a point cloud.
    Confset(ConfsetArgs),
    /// Run a named experiment and write raw/summary/plot files.
    Experiment(ExperimentArgs),
    /// Run the built-in oracle self-tests.
    Verify,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Generation config JSON; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// "matrix" or "markov".
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub states: Option<usize>,
    #[arg(long)]
    pub tau_star: Option<f64>,
    #[arg(long)]
    pub normalization: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Output path (default game-spec.json).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Game spec JSON to solve.
    #[arg(long)]
    pub spec: PathBuf,
    /// Fixed-point residual tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub damping: Option<f64>,
    /// Output path (default qre-solution.json).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Game spec JSON providing features and ground truth.
    #[arg(long)]
    pub spec: PathBuf,
    /// Sample internally: rounds of play (matrix) or per-state draws (Markov).
    #[arg(long)]
    pub n: Option<u64>,
    /// Read a previously written dataset directory instead of sampling.
    #[arg(long, conflicts_with = "n")]
    pub counts: Option<PathBuf>,
    /// Use the exact equilibrium policies (no sampling noise).
    #[arg(long, conflicts_with_all = ["n", "counts"])]
    pub exact: bool,
    /// Probability floor for zero counts (default 1/(2N)).
    #[arg(long)]
    pub floor: Option<f64>,
    /// Normalization constant handed to the estimator (default: the spec's).
    #[arg(long)]
    pub c_assumed: Option<f64>,
    /// Keep only the first D feature components for estimation.
    #[arg(long)]
    pub d_est: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Markov reward recovery mode.
    #[arg(long, value_parser = ["known-p", "estimated-p"])]
    pub mode: Option<String>,
    /// Laplace smoothing for estimated dynamics.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Also write the sampled dataset to this directory.
    #[arg(long)]
    pub save_counts: Option<PathBuf>,
    /// Also export the assembled constraint system as CSV.
    #[arg(long)]
    pub dump_system: Option<PathBuf>,
    /// Output path (default estimation-result.json).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConfsetArgs {
    /// Matrix game spec JSON.
    #[arg(long)]
    pub spec: PathBuf,
    /// Rounds of play to sample.
    #[arg(long, default_value_t = 10_000)]
    pub n: u64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    /// Soft-min gap; default is the plug-in minimum of the floored empirical
    /// probabilities (an overestimate, which shrinks the threshold and can
    /// weaken coverage).
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long, default_value_t = 10.0)]
    pub tau_max: f64,
    /// Random sphere directions to probe (the estimate's direction and its
    /// antipode are always included).
    #[arg(long, default_value_t = 64)]
    pub directions: usize,
    /// Temperature grid as lo:hi:steps (geometric spacing).
    #[arg(long, default_value = "0.1:10:25")]
    pub tau_grid: String,
    #[arg(long)]
    pub c_assumed: Option<f64>,
    /// Output path (default confset.csv).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// One of: convergence-matrix, comparison-table, misspecified-c,
    /// convergence-markov, unknown-dynamics, feature-misspec.
    pub name: String,
    /// Experiment config JSON; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Comma-separated sample-size grid (N or K values).
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub floor: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub d_est: Option<usize>,
    /// Reuse one game across trials.
    #[arg(long)]
    pub fixed_game: bool,
    /// Output directory (default results/).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses argv, dispatches, and maps errors to exit codes.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs one parsed invocation.
pub fn dispatch(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        // Ignore the error if a pool already exists (repeat in-process calls).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    match cli.command {
        Command::Generate(args) => generate(args, cli.verbose),
        Command::SolveQre(args) => solve_qre(args, cli.verbose),
        Command::Estimate(args) => estimate(args, cli.verbose),
        Command::Confset(args) => confset(args, cli.verbose),
        Command::Experiment(args) => experiment(args, cli.verbose),
        Command::Verify => run_verify(cli.verbose),
    }
}

fn generate(args: GenerateArgs, verbose: bool) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => files::parse_generate_config(&std::fs::read(path)?)?,
        None => GenerateConfig::default(),
    };
    // Flags win over file values.
    if args.kind.is_some() {
        config.kind = args.kind.clone();
    }
    for (flag, slot) in [
        (args.m, &mut config.m),
        (args.n, &mut config.n),
        (args.d, &mut config.d),
        (args.states, &mut config.states),
    ] {
        if flag.is_some() {
            *slot = flag;
        }
    }
    for (flag, slot) in [
        (args.tau_star, &mut config.tau_star),
        (args.normalization, &mut config.normalization),
        (args.gamma, &mut config.gamma),
    ] {
        if flag.is_some() {
            *slot = flag;
        }
    }
    if args.seed.is_some() {
        config.seed = args.seed;
    }

    let kind = config.kind.clone().unwrap_or_else(|| "matrix".to_string());
    let seed = config.seed.unwrap_or(0);
    let spec = match kind.as_str() {
        "matrix" => GameSpec::Matrix(generate_matrix_game(
            config.m.unwrap_or(10),
            config.n.unwrap_or(10),
            config.d.unwrap_or(5),
            config.tau_star.unwrap_or(2.0),
            config.normalization.unwrap_or(1.0),
            seed,
        )?),
        "markov" => GameSpec::Markov(generate_markov_game(
            config.states.unwrap_or(8),
            config.m.unwrap_or(5),
            config.n.unwrap_or(5),
            config.d.unwrap_or(6),
            config.tau_star.unwrap_or(1.5),
            config.normalization.unwrap_or(1.0),
            config.gamma.unwrap_or(0.9),
            seed,
        )?),
        other => {
            return Err(Error::invalid_document(
                "generate config",
                format!("unknown kind {other:?}"),
            ))
        }
    };
    let out = args.out.unwrap_or_else(|| PathBuf::from("game-spec.json"));
    let metadata = DocumentMetadata::new(Some(seed), serde_json::to_value(&config)?);
    files::write_game_spec(&out, &spec, Some(metadata))?;
    if verbose {
        eprintln!("wrote {}", out.display());
    }
    Ok(())
}

fn solver_config(tol: Option<f64>, max_iter: Option<usize>, damping: Option<f64>) -> SolverConfig {
    let mut config = SolverConfig::default();
    if let Some(tol) = tol {
        config.tol = tol;
    }
    if let Some(max_iter) = max_iter {
        config.max_iter = max_iter;
    }
    if let Some(damping) = damping {
        config.damping = damping;
    }
    config
}

fn solve_qre(args: SolveArgs, verbose: bool) -> Result<()> {
    let spec = read_game_spec(&args.spec)?;
    let config = solver_config(args.tol, args.max_iter, args.damping);
    let out = args
        .out
        .unwrap_or_else(|| PathBuf::from("qre-solution.json"));
    let config_echo = json!({
        "spec": args.spec,
        "tol": config.tol,
        "max_iter": config.max_iter,
        "damping": config.damping,
    });
    let metadata = DocumentMetadata::new(None, config_echo);
    match spec {
        GameSpec::Matrix(spec) => {
            let solution = solve_matrix_qre(&spec.payoff(), spec.tau_star, &config)?;
            if !solution.converged {
                return Err(Error::NotConverged {
                    residual: solution.residual,
                    iterations: solution.iterations,
                });
            }
            files::write_matrix_solution(&out, &solution, spec.tau_star, Some(metadata))?;
        }
        GameSpec::Markov(spec) => {
            let solution = forward_solve_markov(
                &spec.rewards,
                &spec.transitions,
                spec.gamma,
                spec.tau_star,
                &config,
            )?;
            if !solution.converged {
                return Err(Error::NotConverged {
                    residual: solution.residual,
                    iterations: solution.iterations,
                });
            }
            files::write_markov_solution(&out, &solution, spec.tau_star, Some(metadata))?;
        }
    }
    if verbose {
        eprintln!("wrote {}", out.display());
    }
    Ok(())
}

fn estimate(args: EstimateArgs, verbose: bool) -> Result<()> {
    let spec = read_game_spec(&args.spec)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("estimation-result.json"));
    let seed = args.seed.unwrap_or(0);
    match spec {
        GameSpec::Matrix(spec) => estimate_matrix(&args, spec, seed, &out),
        GameSpec::Markov(spec) => estimate_markov(&args, spec, seed, &out),
    }?;
    if verbose {
        eprintln!("wrote {}", out.display());
    }
    Ok(())
}

fn estimate_matrix(args: &EstimateArgs, spec: MatrixGameSpec, seed: u64, out: &Path) -> Result<()> {
    if args.mode.is_some() || args.alpha.is_some() {
        return Err(Error::invalid_parameter(
            "estimate flags",
            "--mode and --alpha apply to Markov specs only".to_string(),
        ));
    }
    let (policy, floored, n_used): (JointPolicy, bool, Option<u64>) = if args.exact {
        let solution = solve_matrix_qre(&spec.payoff(), spec.tau_star, &SolverConfig::exact())?;
        (solution.policy, false, None)
    } else if let Some(dir) = &args.counts {
        let sample = read_matrix_sample(dir)?;
        let empirical = empirical_policies(
            &sample,
            args.floor.unwrap_or_else(|| default_floor(sample.total)),
        )?;
        (empirical.policy, empirical.floored, Some(sample.total))
    } else {
        let n = args.n.unwrap_or(10_000);
        let solution = solve_matrix_qre(&spec.payoff(), spec.tau_star, &SolverConfig::exact())?;
        let sample = sample_matrix_play(&solution.policy, n, seed)?;
        if let Some(dir) = &args.save_counts {
            files::write_matrix_sample(dir, &sample, Some(seed))?;
        }
        let empirical =
            empirical_policies(&sample, args.floor.unwrap_or_else(|| default_floor(n)))?;
        (empirical.policy, empirical.floored, Some(n))
    };

    let features = match args.d_est {
        Some(d_est) => spec.features.restrict(d_est)?,
        None => spec.features.clone(),
    };
    let system = build_system(&features, &policy)?;
    if let Some(path) = &args.dump_system {
        files::write_system_csv(path, &system, Some(seed))?;
    }
    let c = args.c_assumed.unwrap_or(spec.normalization);
    let estimate = nls_estimate(&system, c)?;
    let config_echo = json!({
        "spec": args.spec,
        "exact": args.exact,
        "n": n_used,
        "floor": args.floor,
        "c_assumed": c,
        "d_est": args.d_est,
    });
    files::write_estimation_result(
        out,
        &estimate,
        floored,
        Some(DocumentMetadata::new(Some(seed), config_echo)),
    )
}

fn estimate_markov(args: &EstimateArgs, spec: MarkovGameSpec, seed: u64, out: &Path) -> Result<()> {
    if args.d_est.is_some() {
        return Err(Error::invalid_parameter(
            "estimate flags",
            "--d-est applies to matrix specs only".to_string(),
        ));
    }
    let mode = match args.mode.as_deref() {
        None | Some("known-p") => DynamicsMode::KnownP,
        Some("estimated-p") => DynamicsMode::EstimatedP,
        Some(other) => {
            return Err(Error::invalid_parameter(
                "mode",
                format!("unknown mode {other:?}"),
            ))
        }
    };
    let alpha = args.alpha.unwrap_or(1.0);

    let (policies, floored, data, n_used) = if args.exact {
        if mode == DynamicsMode::EstimatedP {
            return Err(Error::invalid_parameter(
                "mode",
                "estimated-p requires sampled transitions; drop --exact".to_string(),
            ));
        }
        let equilibrium = spec.solve_equilibrium(&SolverConfig::exact())?;
        (equilibrium.policies, false, None, None)
    } else if let Some(dir) = &args.counts {
        let data = read_markov_dataset(dir)?;
        let (policies, floored) = empirical_markov_policies(&data, args.floor)?;
        let n = data.n_per_state();
        (policies, floored, Some(data), Some(n))
    } else {
        let n = args.n.unwrap_or(1_000);
        let equilibrium = spec.solve_equilibrium(&SolverConfig::exact())?;
        let data = sample_markov_dataset(&spec, &equilibrium.policies, n, seed)?;
        if let Some(dir) = &args.save_counts {
            files::write_markov_dataset(dir, &data, Some(seed))?;
        }
        let (policies, floored) = empirical_markov_policies(&data, args.floor)?;
        (policies, floored, Some(data), Some(n))
    };

    let transitions = match mode {
        DynamicsMode::KnownP => spec.transitions.clone(),
        DynamicsMode::EstimatedP => {
            let data = data.as_ref().ok_or_else(|| {
                Error::invalid_parameter("mode", "estimated-p requires sampled data".to_string())
            })?;
            estimate_transitions(data, alpha)?
        }
    };

    let system = build_markov_system(&spec.features, &policies)?;
    if let Some(path) = &args.dump_system {
        files::write_system_csv(path, &system, Some(seed))?;
    }
    let c = args.c_assumed.unwrap_or(spec.normalization);
    let recovery = recover_markov_rewards(
        &system,
        c,
        &spec.features,
        &policies,
        &transitions,
        spec.gamma,
        mode,
    )?;
    let config_echo = json!({
        "spec": args.spec,
        "exact": args.exact,
        "n_per_state": n_used,
        "floor": args.floor,
        "c_assumed": c,
        "mode": mode,
        "alpha": alpha,
    });
    files::write_markov_recovery(
        out,
        &recovery,
        floored,
        Some(DocumentMetadata::new(Some(seed), config_echo)),
    )
}

fn parse_tau_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || Error::invalid_parameter("tau-grid", format!("{text:?} is not lo:hi:steps"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    let steps: usize = parts[2].parse().map_err(|_| bad())?;
    if !(lo > 0.0 && hi > lo && steps >= 2) {
        return Err(bad());
    }
    Ok((0..steps)
        .map(|i| lo * (hi / lo).powf(i as f64 / (steps - 1) as f64))
        .collect())
}

fn confset(args: ConfsetArgs, verbose: bool) -> Result<()> {
    let GameSpec::Matrix(spec) = read_game_spec(&args.spec)? else {
        return Err(Error::invalid_parameter(
            "confset",
            "confidence-set scans support matrix specs".to_string(),
        ));
    };
    let seed = args.seed.unwrap_or(0);
    let solution = solve_matrix_qre(&spec.payoff(), spec.tau_star, &SolverConfig::exact())?;
    let sample = sample_matrix_play(&solution.policy, args.n, seed)?;
    let empirical = empirical_policies(&sample, default_floor(args.n))?;
    let system = build_system(&spec.features, &empirical.policy)?;

    let (xi, xi_source) = match args.xi {
        Some(xi) => (xi, "supplied"),
        // Plug-in gap: an overestimate of the population gap, which shrinks
        // kappa and weakens coverage; recorded in the output metadata.
        None => (
            estimate_soft_min_gap(std::slice::from_ref(&empirical.policy)),
            "plug-in",
        ),
    };
    let c = args.c_assumed.unwrap_or(spec.normalization);
    let config = ConfidenceConfig {
        delta: args.delta,
        xi,
        feature_bound: spec.features.bound(),
        normalization: c,
        tau_max: args.tau_max,
        m: spec.features.rows(),
        n: spec.features.cols(),
        num_samples: args.n,
    };
    let kappa = confidence_threshold(&config)?;
    let tau_grid = parse_tau_grid(&args.tau_grid)?;
    let points = scan_confidence_set(&system, c, kappa, args.directions, &tau_grid, seed);

    let out = args.out.unwrap_or_else(|| PathBuf::from("confset.csv"));
    let config_echo = json!({
        "spec": args.spec,
        "n": args.n,
        "delta": args.delta,
        "xi": xi,
        "xi_source": xi_source,
        "tau_max": args.tau_max,
        "kappa": kappa,
        "c_assumed": c,
        "directions": args.directions,
        "tau_grid": args.tau_grid,
        "floored": empirical.floored,
    });
    files::write_confset_csv(&out, &points, Some(seed), &config_echo.to_string())?;
    if verbose {
        let inside = points.iter().filter(|p| p.contained).count();
        eprintln!(
            "wrote {} ({inside}/{} points contained)",
            out.display(),
            points.len()
        );
    }
    Ok(())
}

fn experiment(args: ExperimentArgs, verbose: bool) -> Result<()> {
    let kind = ExperimentKind::from_name(&args.name).ok_or_else(|| {
        let names: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
        Error::invalid_parameter(
            "experiment name",
            format!("{:?} is not one of {}", args.name, names.join(", ")),
        )
    })?;

    let mut config = match &args.config {
        Some(path) => merge_config(kind.default_config(), &std::fs::read(path)?)?,
        None => kind.default_config(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(trials) = args.trials {
        config.trials = trials;
    }
    if let Some(grid) = &args.grid {
        let values: std::result::Result<Vec<u64>, _> =
            grid.split(',').map(|v| v.trim().parse::<u64>()).collect();
        config.grid = Some(values.map_err(|_| {
            Error::invalid_parameter("grid", format!("{grid:?} is not a comma-separated list"))
        })?);
    }
    if args.floor.is_some() {
        config.floor = args.floor;
    }
    if let Some(alpha) = args.alpha {
        config.alpha = alpha;
    }
    if let Some(d_est) = args.d_est {
        config.d_est = d_est;
    }
    if args.fixed_game {
        config.fixed_game = true;
    }

    let out_dir = args
        .out
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    let (summary, dir) = run_and_write(kind, &config, &out_dir)?;
    // Aggregates must be recomputable from the raw records.
    verify_written_outputs(&dir)?;
    if verbose {
        for metric in &summary.metrics {
            match metric.slope {
                Some(slope) => eprintln!("{}: slope {slope:.4}", metric.name),
                None => eprintln!("{}: mean {:?}", metric.name, metric.mean),
            }
        }
    }
    println!("{}", dir.join("summary.json").display());
    Ok(())
}

/// Overlays the fields present in a config file onto the kind defaults, then
/// validates. Top-level scalars replace; the nested game-parameter objects
/// merge field by field.
fn merge_config(base: ExperimentConfig, file_bytes: &[u8]) -> Result<ExperimentConfig> {
    let mut base_value = serde_json::to_value(&base)?;
    let file_value: serde_json::Value = {
        let mut deserializer = serde_json::Deserializer::from_slice(file_bytes);
        serde_path_to_error::deserialize(&mut deserializer).map_err(|e| {
            Error::invalid_document(
                "experiment config",
                format!("{} (at {})", e.inner(), e.path()),
            )
        })?
    };
    let serde_json::Value::Object(file_map) = file_value else {
        return Err(Error::invalid_document(
            "experiment config",
            "top level must be a JSON object",
        ));
    };
    let base_map = base_value
        .as_object_mut()
        .expect("config serializes to an object");
    for (key, value) in file_map {
        match (base_map.get_mut(&key), value) {
            (Some(serde_json::Value::Object(base_obj)), serde_json::Value::Object(file_obj)) => {
                for (inner_key, inner_value) in file_obj {
                    base_obj.insert(inner_key, inner_value);
                }
            }
            (_, value) => {
                base_map.insert(key, value);
            }
        }
    }
    let merged: ExperimentConfig = serde_path_to_error::deserialize(base_value).map_err(|e| {
        Error::invalid_document(
            "experiment config",
            format!("{} (at {})", e.inner(), e.path()),
        )
    })?;
    merged.validate()?;
    Ok(merged)
}

fn run_verify(verbose: bool) -> Result<()> {
    let checks = verify::run_all();
    let mut failed = 0;
    for check in &checks {
        match &check.outcome {
            Ok(()) => {
                if verbose {
                    println!("ok   {}", check.name);
                }
            }
            Err(detail) => {
                failed += 1;
                println!("FAIL {}: {detail}", check.name);
            }
        }
    }
    println!(
        "self-test: {}/{} checks passed",
        checks.len() - failed,
        checks.len()
    );
    if failed > 0 {
        return Err(Error::SelfTestFailed {
            failed,
            total: checks.len(),
        });
    }
    Ok(())
}
