//! On-disk document formats: game specs, datasets, solutions, estimation
//! results, and config files.
//!
//! Every document embeds the tool version plus the seed and effective config
//! that produced it (the `metadata` object in JSON documents, `#` comment
//! lines in CSV files). Parsers validate structure and invariants and never
//! panic on malformed input; the fuzz targets under `fuzz/` drive each one.
//!
//! # Game spec JSON
//!
//! ```json
//! {
//!   "format": "game-spec",
//!   "kind": "matrix",                // or "markov"
//!   "m": 10, "n": 10, "d": 5,
//!   "states": 8,                     // markov only
//!   "tau_star": 2.0,
//!   "normalization": 1.0,
//!   "gamma": 0.9,                    // markov only
//!   "theta_star": [/* d values */],
//!   "features": [/* row-major: ((s*m + a)*n + b)*d + j */],
//!   "transitions": [/* markov only: ((s*m + a)*n + b)*S + s' */],
//!   "rewards": [/* markov only: (s*m + a)*n + b */],
//!   "metadata": { "tool_version": "…", "seed": 1, "config": { } }
//! }
//! ```
//!
//! # Datasets
//!
//! A matrix sample is a directory holding `counts.csv` (`player,action,count`
//! with player `a` or `b`) and `meta.json`. A Markov dataset holds
//! `pairs.csv` (`state,a,b,count`), `transitions.csv`
//! (`state,a,b,next_state,count`), and `meta.json`; cells absent from the CSV
//! are zero.

use std::fs;
use std::path::Path;

use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{DynamicsMode, EstimationResult, MarkovRecovery, ScanPoint};
use crate::experiments::{write_csv_with_metadata, Cell, ExperimentConfig, RunMetadata};
use crate::game::{FeatureMap, MarkovGameSpec, MatrixGameSpec, RewardTable, TransitionTensor};
use crate::sampling::{MarkovDataset, MatrixSample};
use crate::solver::{MarkovQreSolution, QreSolution};
use crate::system::LinearSystem;

/// Provenance block carried by every JSON document the tool writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DocumentMetadata {
    #[serde(default)]
    pub tool_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub config: serde_json::Value,
}

impl DocumentMetadata {
    pub fn new(seed: Option<u64>, config: serde_json::Value) -> Self {
        DocumentMetadata {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
        }
    }
}

/// A parsed game spec of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum GameSpec {
    Matrix(MatrixGameSpec),
    Markov(MarkovGameSpec),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireGameSpec {
    format: String,
    kind: String,
    m: usize,
    n: usize,
    d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    states: Option<usize>,
    tau_star: f64,
    normalization: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    theta_star: Vec<f64>,
    features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    transitions: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rewards: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metadata: Option<DocumentMetadata>,
}

/// Deserializes JSON with a path to the offending field on failure.
pub fn from_json_slice<T: DeserializeOwned>(kind: &'static str, bytes: &[u8]) -> Result<T> {
    let mut deserializer = serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(&mut deserializer)
        .map_err(|e| Error::invalid_document(kind, format!("{} (at {})", e.inner(), e.path())))
}

/// Parses and validates a game-spec document.
pub fn parse_game_spec(bytes: &[u8]) -> Result<GameSpec> {
    let wire: WireGameSpec = from_json_slice("game spec", bytes)?;
    if wire.format != "game-spec" {
        return Err(Error::invalid_document(
            "game spec",
            format!("format is {:?}, expected \"game-spec\"", wire.format),
        ));
    }
    let theta = DVector::from_vec(wire.theta_star);
    match wire.kind.as_str() {
        "matrix" => {
            if wire.states.is_some()
                || wire.gamma.is_some()
                || wire.transitions.is_some()
                || wire.rewards.is_some()
            {
                return Err(Error::invalid_document(
                    "game spec",
                    "matrix specs must not carry states/gamma/transitions/rewards",
                ));
            }
            let features =
                FeatureMap::matrix(wire.m, wire.n, wire.d, wire.features).map_err(spec_error)?;
            let spec = MatrixGameSpec::new(features, theta, wire.tau_star, wire.normalization)
                .map_err(spec_error)?;
            Ok(GameSpec::Matrix(spec))
        }
        "markov" => {
            let states = wire.states.ok_or_else(|| {
                Error::invalid_document("game spec", "markov specs require \"states\"")
            })?;
            let gamma = wire.gamma.ok_or_else(|| {
                Error::invalid_document("game spec", "markov specs require \"gamma\"")
            })?;
            let transitions = wire.transitions.ok_or_else(|| {
                Error::invalid_document("game spec", "markov specs require \"transitions\"")
            })?;
            let rewards = wire.rewards.ok_or_else(|| {
                Error::invalid_document("game spec", "markov specs require \"rewards\"")
            })?;
            let features = FeatureMap::markov(states, wire.m, wire.n, wire.d, wire.features)
                .map_err(spec_error)?;
            let transitions =
                TransitionTensor::new(states, wire.m, wire.n, transitions).map_err(spec_error)?;
            let rewards = RewardTable::new(states, wire.m, wire.n, rewards).map_err(spec_error)?;
            let spec = MarkovGameSpec::new(
                features,
                theta,
                wire.tau_star,
                wire.normalization,
                gamma,
                transitions,
                rewards,
            )
            .map_err(spec_error)?;
            Ok(GameSpec::Markov(spec))
        }
        other => Err(Error::invalid_document(
            "game spec",
            format!("unknown kind {other:?}"),
        )),
    }
}

fn spec_error(e: Error) -> Error {
    Error::invalid_document("game spec", e.to_string())
}

/// Serializes a game spec to its JSON document.
pub fn game_spec_to_json(spec: &GameSpec, metadata: Option<DocumentMetadata>) -> Result<String> {
    let wire = match spec {
        GameSpec::Matrix(spec) => WireGameSpec {
            format: "game-spec".to_string(),
            kind: "matrix".to_string(),
            m: spec.features.rows(),
            n: spec.features.cols(),
            d: spec.features.dim(),
            states: None,
            tau_star: spec.tau_star,
            normalization: spec.normalization,
            gamma: None,
            theta_star: spec.theta_star.iter().copied().collect(),
            features: spec.features.values().to_vec(),
            transitions: None,
            rewards: None,
            metadata,
        },
        GameSpec::Markov(spec) => WireGameSpec {
            format: "game-spec".to_string(),
            kind: "markov".to_string(),
            m: spec.features.rows(),
            n: spec.features.cols(),
            d: spec.features.dim(),
            states: Some(spec.features.states()),
            tau_star: spec.tau_star,
            normalization: spec.normalization,
            gamma: Some(spec.gamma),
            theta_star: spec.theta_star.iter().copied().collect(),
            features: spec.features.values().to_vec(),
            transitions: Some(spec.transitions.probs().to_vec()),
            rewards: Some(spec.rewards.values().to_vec()),
            metadata,
        },
    };
    Ok(serde_json::to_string_pretty(&wire)?)
}

pub fn read_game_spec(path: &Path) -> Result<GameSpec> {
    parse_game_spec(&fs::read(path)?)
}

pub fn write_game_spec(
    path: &Path,
    spec: &GameSpec,
    metadata: Option<DocumentMetadata>,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, game_spec_to_json(spec, metadata)?)?;
    Ok(())
}

/// Parses and validates an experiment config document.
pub fn parse_experiment_config(bytes: &[u8]) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = from_json_slice("experiment config", bytes)?;
    config.validate()?;
    Ok(config)
}

/// Game-generation config for the CLI; unset fields fall back to the
/// kind-specific defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub kind: Option<String>,
    pub m: Option<usize>,
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub states: Option<usize>,
    pub tau_star: Option<f64>,
    pub normalization: Option<f64>,
    pub gamma: Option<f64>,
    pub seed: Option<u64>,
}

/// Parses and sanity-checks a generation config document.
pub fn parse_generate_config(bytes: &[u8]) -> Result<GenerateConfig> {
    let config: GenerateConfig = from_json_slice("generate config", bytes)?;
    if let Some(kind) = &config.kind {
        if kind != "matrix" && kind != "markov" {
            return Err(Error::invalid_document(
                "generate config",
                format!("unknown kind {kind:?}"),
            ));
        }
    }
    Ok(config)
}

// --- datasets ---------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireMatrixSampleMeta {
    format: String,
    n: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metadata: Option<DocumentMetadata>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireMarkovDatasetMeta {
    format: String,
    states: usize,
    m: usize,
    n: usize,
    n_per_state: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metadata: Option<DocumentMetadata>,
}

/// Per-player count rows parsed from `counts.csv`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatrixCountRows {
    pub counts_a: Vec<u64>,
    pub counts_b: Vec<u64>,
}

/// Upper bound on index values in dataset CSVs, to reject absurd documents
/// before allocating.
const MAX_INDEX: u64 = 1_000_000;

/// Parses `player,action,count` rows; each player's actions must cover
/// `0..k` exactly once.
pub fn parse_matrix_counts(bytes: &[u8]) -> Result<MatrixCountRows> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::invalid_document("matrix counts", "not valid UTF-8"))?;
    let mut rows: [Vec<Option<u64>>; 2] = [Vec::new(), Vec::new()];
    for (line_no, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        if line_no == 0 || line == "player,action,count" {
            // Header (required on the first data line).
            if line != "player,action,count" {
                return Err(Error::invalid_document(
                    "matrix counts",
                    "missing player,action,count header",
                ));
            }
            continue;
        }
        let mut fields = line.split(',');
        let (player, action, count) =
            match (fields.next(), fields.next(), fields.next(), fields.next()) {
                (Some(p), Some(a), Some(c), None) => (p, a, c),
                _ => {
                    return Err(Error::invalid_document(
                        "matrix counts",
                        format!("line {} is not player,action,count", line_no + 1),
                    ))
                }
            };
        let which = match player {
            "a" => 0,
            "b" => 1,
            other => {
                return Err(Error::invalid_document(
                    "matrix counts",
                    format!("unknown player {other:?}"),
                ))
            }
        };
        let action: u64 = parse_index("matrix counts", action)?;
        let count: u64 = count.parse().map_err(|_| {
            Error::invalid_document("matrix counts", format!("bad count {count:?}"))
        })?;
        let table = &mut rows[which];
        if action as usize >= table.len() {
            table.resize(action as usize + 1, None);
        }
        if table[action as usize].replace(count).is_some() {
            return Err(Error::invalid_document(
                "matrix counts",
                format!("duplicate row for player {player} action {action}"),
            ));
        }
    }
    let unwrap_table = |table: Vec<Option<u64>>, player: &str| -> Result<Vec<u64>> {
        if table.is_empty() {
            return Err(Error::invalid_document(
                "matrix counts",
                format!("no rows for player {player}"),
            ));
        }
        table
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                v.ok_or_else(|| {
                    Error::invalid_document(
                        "matrix counts",
                        format!("player {player} is missing action {i}"),
                    )
                })
            })
            .collect()
    };
    let [table_a, table_b] = rows;
    Ok(MatrixCountRows {
        counts_a: unwrap_table(table_a, "a")?,
        counts_b: unwrap_table(table_b, "b")?,
    })
}

fn parse_index(kind: &'static str, field: &str) -> Result<u64> {
    let value: u64 = field
        .parse()
        .map_err(|_| Error::invalid_document(kind, format!("bad index {field:?}")))?;
    if value > MAX_INDEX {
        return Err(Error::invalid_document(
            kind,
            format!("index {value} exceeds the supported range"),
        ));
    }
    Ok(value)
}

/// A sparse count row of a Markov dataset CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountRow {
    pub indices: Vec<u64>,
    pub count: u64,
}

/// Parses a Markov dataset CSV with the given header (`pairs.csv` or
/// `transitions.csv`); duplicate index tuples are rejected.
pub fn parse_count_rows(bytes: &[u8], header: &str) -> Result<Vec<CountRow>> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::invalid_document("dataset counts", "not valid UTF-8"))?;
    let index_fields = header.split(',').count() - 1;
    let mut rows: Vec<CountRow> = Vec::new();
    let mut seen: std::collections::HashSet<Vec<u64>> = std::collections::HashSet::new();
    let mut seen_header = false;
    for (line_no, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        if !seen_header {
            if line != header {
                return Err(Error::invalid_document(
                    "dataset counts",
                    format!("missing {header} header"),
                ));
            }
            seen_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != index_fields + 1 {
            return Err(Error::invalid_document(
                "dataset counts",
                format!("line {} does not match {header}", line_no + 1),
            ));
        }
        let indices: Vec<u64> = fields[..index_fields]
            .iter()
            .map(|f| parse_index("dataset counts", f))
            .collect::<Result<_>>()?;
        let count: u64 = fields[index_fields].parse().map_err(|_| {
            Error::invalid_document(
                "dataset counts",
                format!("bad count {:?}", fields[index_fields]),
            )
        })?;
        if !seen.insert(indices.clone()) {
            return Err(Error::invalid_document(
                "dataset counts",
                format!("duplicate row at line {}", line_no + 1),
            ));
        }
        rows.push(CountRow { indices, count });
    }
    if !seen_header {
        return Err(Error::invalid_document("dataset counts", "empty document"));
    }
    Ok(rows)
}

pub fn write_matrix_sample(dir: &Path, sample: &MatrixSample, seed: Option<u64>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = WireMatrixSampleMeta {
        format: "matrix-sample".to_string(),
        n: sample.total,
        metadata: Some(DocumentMetadata::new(seed, serde_json::Value::Null)),
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;

    let run = RunMetadata::new("matrix-sample", seed.unwrap_or_default());
    let rows = sample
        .counts_a
        .iter()
        .enumerate()
        .map(|(action, count)| {
            vec![
                Cell::Text("a".to_string()),
                Cell::Int(action as u64),
                Cell::Int(*count),
            ]
        })
        .chain(sample.counts_b.iter().enumerate().map(|(action, count)| {
            vec![
                Cell::Text("b".to_string()),
                Cell::Int(action as u64),
                Cell::Int(*count),
            ]
        }));
    write_csv_with_metadata(
        &dir.join("counts.csv"),
        &run,
        "null",
        &["player", "action", "count"],
        rows,
    )
}

pub fn read_matrix_sample(dir: &Path) -> Result<MatrixSample> {
    let meta: WireMatrixSampleMeta =
        from_json_slice("matrix sample meta", &fs::read(dir.join("meta.json"))?)?;
    if meta.format != "matrix-sample" {
        return Err(Error::invalid_document(
            "matrix sample meta",
            format!("format is {:?}", meta.format),
        ));
    }
    let rows = parse_matrix_counts(&fs::read(dir.join("counts.csv"))?)?;
    MatrixSample::new(rows.counts_a, rows.counts_b, meta.n)
}

pub fn write_markov_dataset(dir: &Path, data: &MarkovDataset, seed: Option<u64>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = WireMarkovDatasetMeta {
        format: "markov-dataset".to_string(),
        states: data.states(),
        m: data.rows(),
        n: data.cols(),
        n_per_state: data.n_per_state(),
        metadata: Some(DocumentMetadata::new(seed, serde_json::Value::Null)),
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    let run = RunMetadata::new("markov-dataset", seed.unwrap_or_default());

    let mut pair_rows = Vec::new();
    let mut transition_rows = Vec::new();
    for s in 0..data.states() {
        for a in 0..data.rows() {
            for b in 0..data.cols() {
                let count = data.pair_count(s, a, b);
                if count > 0 {
                    pair_rows.push(vec![
                        Cell::Int(s as u64),
                        Cell::Int(a as u64),
                        Cell::Int(b as u64),
                        Cell::Int(count),
                    ]);
                }
                for (next, c) in data.transition_counts(s, a, b).iter().enumerate() {
                    if *c > 0 {
                        transition_rows.push(vec![
                            Cell::Int(s as u64),
                            Cell::Int(a as u64),
                            Cell::Int(b as u64),
                            Cell::Int(next as u64),
                            Cell::Int(*c),
                        ]);
                    }
                }
            }
        }
    }
    write_csv_with_metadata(
        &dir.join("pairs.csv"),
        &run,
        "null",
        &["state", "a", "b", "count"],
        pair_rows.into_iter(),
    )?;
    write_csv_with_metadata(
        &dir.join("transitions.csv"),
        &run,
        "null",
        &["state", "a", "b", "next_state", "count"],
        transition_rows.into_iter(),
    )
}

pub fn read_markov_dataset(dir: &Path) -> Result<MarkovDataset> {
    let meta: WireMarkovDatasetMeta =
        from_json_slice("markov dataset meta", &fs::read(dir.join("meta.json"))?)?;
    if meta.format != "markov-dataset" {
        return Err(Error::invalid_document(
            "markov dataset meta",
            format!("format is {:?}", meta.format),
        ));
    }
    // Bound the full transition-table footprint before allocating anything.
    meta.states
        .checked_mul(meta.m)
        .and_then(|x| x.checked_mul(meta.n))
        .and_then(|x| x.checked_mul(meta.states))
        .filter(|c| *c <= 10_000_000)
        .ok_or_else(|| Error::invalid_document("markov dataset meta", "dimensions too large"))?;
    let dims = [meta.states as u64, meta.m as u64, meta.n as u64];

    let mut pair_counts = vec![vec![0u64; meta.m * meta.n]; meta.states];
    for row in parse_count_rows(&fs::read(dir.join("pairs.csv"))?, "state,a,b,count")? {
        check_bounds("pairs.csv", &row.indices, &dims)?;
        let (s, a, b) = (
            row.indices[0] as usize,
            row.indices[1] as usize,
            row.indices[2] as usize,
        );
        pair_counts[s][a * meta.n + b] = row.count;
    }
    let mut transition_counts = vec![vec![0u64; meta.states]; meta.states * meta.m * meta.n];
    let transition_dims = [dims[0], dims[1], dims[2], dims[0]];
    for row in parse_count_rows(
        &fs::read(dir.join("transitions.csv"))?,
        "state,a,b,next_state,count",
    )? {
        check_bounds("transitions.csv", &row.indices, &transition_dims)?;
        let (s, a, b, next) = (
            row.indices[0] as usize,
            row.indices[1] as usize,
            row.indices[2] as usize,
            row.indices[3] as usize,
        );
        transition_counts[(s * meta.m + a) * meta.n + b][next] = row.count;
    }
    MarkovDataset::new(
        meta.states,
        meta.m,
        meta.n,
        pair_counts,
        transition_counts,
        meta.n_per_state,
    )
}

fn check_bounds(file: &'static str, indices: &[u64], dims: &[u64]) -> Result<()> {
    if indices.len() != dims.len() || indices.iter().zip(dims).any(|(i, d)| i >= d) {
        return Err(Error::invalid_document(
            "markov dataset",
            format!("{file} row {indices:?} is outside the declared dimensions"),
        ));
    }
    Ok(())
}

// --- solutions and estimates -------------------------------------------------

#[derive(Serialize, Deserialize)]
struct WireSolution {
    format: String,
    kind: String,
    m: usize,
    n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    states: Option<usize>,
    tau: f64,
    mu: Vec<f64>,
    nu: Vec<f64>,
    q: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v: Option<Vec<f64>>,
    residual: f64,
    iterations: usize,
    converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metadata: Option<DocumentMetadata>,
}

pub fn write_matrix_solution(
    path: &Path,
    solution: &QreSolution,
    tau: f64,
    metadata: Option<DocumentMetadata>,
) -> Result<()> {
    let wire = WireSolution {
        format: "qre-solution".to_string(),
        kind: "matrix".to_string(),
        m: solution.q.nrows(),
        n: solution.q.ncols(),
        states: None,
        tau,
        mu: solution.policy.mu.iter().copied().collect(),
        nu: solution.policy.nu.iter().copied().collect(),
        q: row_major(&solution.q),
        v: None,
        residual: solution.residual,
        iterations: solution.iterations,
        converged: solution.converged,
        metadata,
    };
    write_json(path, &wire)
}

pub fn write_markov_solution(
    path: &Path,
    solution: &MarkovQreSolution,
    tau: f64,
    metadata: Option<DocumentMetadata>,
) -> Result<()> {
    let states = solution.policies.len();
    let (m, n) = (solution.q[0].nrows(), solution.q[0].ncols());
    let wire = WireSolution {
        format: "qre-solution".to_string(),
        kind: "markov".to_string(),
        m,
        n,
        states: Some(states),
        tau,
        mu: solution
            .policies
            .iter()
            .flat_map(|p| p.mu.iter().copied().collect::<Vec<_>>())
            .collect(),
        nu: solution
            .policies
            .iter()
            .flat_map(|p| p.nu.iter().copied().collect::<Vec<_>>())
            .collect(),
        q: solution.q.iter().flat_map(row_major).collect(),
        v: Some(solution.v.iter().copied().collect()),
        residual: solution.residual,
        iterations: solution.iterations,
        converged: solution.converged,
        metadata,
    };
    write_json(path, &wire)
}

#[derive(Serialize, Deserialize)]
struct WireEstimation {
    format: String,
    theta_hat: Vec<f64>,
    tau_hat: f64,
    theta_ls: Vec<f64>,
    residual: f64,
    identifiability: crate::system::IdentifiabilityReport,
    /// Whether any empirical policy entry was floored before log-ratios.
    floored: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r_hat: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v_hat: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dynamics_mode: Option<DynamicsMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metadata: Option<DocumentMetadata>,
}

pub fn write_estimation_result(
    path: &Path,
    estimate: &EstimationResult,
    floored: bool,
    metadata: Option<DocumentMetadata>,
) -> Result<()> {
    let wire = WireEstimation {
        format: "estimation-result".to_string(),
        theta_hat: estimate.theta_hat.iter().copied().collect(),
        tau_hat: estimate.tau_hat,
        theta_ls: estimate.theta_ls.iter().copied().collect(),
        residual: estimate.residual,
        identifiability: estimate.identifiability.clone(),
        floored,
        r_hat: None,
        v_hat: None,
        dynamics_mode: None,
        metadata,
    };
    write_json(path, &wire)
}

pub fn write_markov_recovery(
    path: &Path,
    recovery: &MarkovRecovery,
    floored: bool,
    metadata: Option<DocumentMetadata>,
) -> Result<()> {
    let wire = WireEstimation {
        format: "estimation-result".to_string(),
        theta_hat: recovery.theta_hat.iter().copied().collect(),
        tau_hat: recovery.tau_hat,
        theta_ls: recovery.theta_ls.iter().copied().collect(),
        residual: recovery.residual,
        identifiability: recovery.identifiability.clone(),
        floored,
        r_hat: Some(recovery.r_hat.values().to_vec()),
        v_hat: Some(recovery.v_hat.iter().copied().collect()),
        dynamics_mode: Some(recovery.dynamics_mode),
        metadata,
    };
    write_json(path, &wire)
}

/// Exports a system as CSV, one constraint per row: `x0..x{d-1},y`.
pub fn write_system_csv(path: &Path, system: &LinearSystem, seed: Option<u64>) -> Result<()> {
    let d = system.dim();
    let names: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    let mut columns: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    columns.push("y");
    let run = RunMetadata::new("linear-system", seed.unwrap_or_default());
    let rows = (0..system.x.nrows()).map(|r| {
        let mut row: Vec<Cell> = (0..d).map(|j| Cell::Float(system.x[(r, j)])).collect();
        row.push(Cell::Float(system.y[r]));
        row
    });
    write_csv_with_metadata_str(path, &run, "null", &columns, rows)
}

/// Exports confidence-set scan points as CSV:
/// `theta_0..theta_{d-1},tau,residual_sq,contained`.
pub fn write_confset_csv(
    path: &Path,
    points: &[ScanPoint],
    seed: Option<u64>,
    config_json: &str,
) -> Result<()> {
    let d = points.first().map(|p| p.theta.len()).unwrap_or(0);
    let names: Vec<String> = (0..d).map(|j| format!("theta_{j}")).collect();
    let mut columns: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    columns.push("tau");
    columns.push("residual_sq");
    columns.push("contained");
    let run = RunMetadata::new("confidence-scan", seed.unwrap_or_default());
    let rows = points.iter().map(|p| {
        let mut row: Vec<Cell> = p.theta.iter().map(|t| Cell::Float(*t)).collect();
        row.push(Cell::Float(p.tau));
        row.push(Cell::Float(p.residual_sq));
        row.push(Cell::Int(p.contained as u64));
        row
    });
    write_csv_with_metadata_str(path, &run, config_json, &columns, rows)
}

fn write_csv_with_metadata_str(
    path: &Path,
    run: &RunMetadata,
    config_json: &str,
    columns: &[&str],
    rows: impl Iterator<Item = Vec<Cell>>,
) -> Result<()> {
    write_csv_with_metadata(path, run, config_json, columns, rows)
}

fn row_major(matrix: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    let mut values = Vec::with_capacity(matrix.nrows() * matrix.ncols());
    for r in 0..matrix.nrows() {
        for c in 0..matrix.ncols() {
            values.push(matrix[(r, c)]);
        }
    }
    values
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Reads back an estimation-result document (used by tests and round-trip
/// checks).
pub fn read_estimation_theta(path: &Path) -> Result<(Vec<f64>, f64)> {
    let wire: WireEstimation = from_json_slice("estimation result", &fs::read(path)?)?;
    Ok((wire.theta_hat, wire.tau_hat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{generate_markov_game, generate_matrix_game};
    use crate::sampling::{sample_markov_dataset, sample_matrix_play};
    use crate::solver::{JointPolicy, SolverConfig};

    #[test]
    fn game_specs_round_trip_bit_exactly() {
        let matrix = GameSpec::Matrix(generate_matrix_game(4, 5, 3, 2.0, 1.0, 1).unwrap());
        let json = game_spec_to_json(
            &matrix,
            Some(DocumentMetadata::new(Some(1), serde_json::Value::Null)),
        )
        .unwrap();
        assert_eq!(parse_game_spec(json.as_bytes()).unwrap(), matrix);

        let markov = GameSpec::Markov(generate_markov_game(3, 3, 3, 4, 1.5, 1.0, 0.9, 2).unwrap());
        let json = game_spec_to_json(&markov, None).unwrap();
        assert_eq!(parse_game_spec(json.as_bytes()).unwrap(), markov);
    }

    #[test]
    fn malformed_specs_are_rejected() {
        assert!(parse_game_spec(b"not json").is_err());
        assert!(parse_game_spec(b"{}").is_err());

        let spec = GameSpec::Matrix(generate_matrix_game(3, 3, 2, 1.0, 1.0, 3).unwrap());
        let json = game_spec_to_json(&spec, None).unwrap();

        let wrong_format = json.replace("game-spec", "other");
        assert!(parse_game_spec(wrong_format.as_bytes()).is_err());

        let wrong_kind = json.replace("\"matrix\"", "\"markov\"");
        assert!(parse_game_spec(wrong_kind.as_bytes()).is_err());

        // Breaking the stored norm violates the invariant check.
        let bad_norm = json.replace("\"normalization\": 1.0", "\"normalization\": 2.0");
        assert!(bad_norm.contains("2.0"));
        assert!(parse_game_spec(bad_norm.as_bytes()).is_err());

        // Unknown fields are rejected.
        let extra = json.replacen('{', "{\"surprise\": 1,", 1);
        assert!(parse_game_spec(extra.as_bytes()).is_err());

        // Out-of-range numbers cannot sneak in as infinities.
        let huge = json.replace("\"tau_star\": 1.0", "\"tau_star\": 1e999");
        assert!(parse_game_spec(huge.as_bytes()).is_err());
    }

    #[test]
    fn matrix_sample_files_round_trip() {
        let policy = JointPolicy::uniform(4, 3);
        let sample = sample_matrix_play(&policy, 250, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_matrix_sample(dir.path(), &sample, Some(7)).unwrap();
        let loaded = read_matrix_sample(dir.path()).unwrap();
        assert_eq!(loaded, sample);
    }

    #[test]
    fn matrix_counts_parser_rejects_malformed_documents() {
        assert!(parse_matrix_counts(b"").is_err());
        assert!(parse_matrix_counts(b"wrong,header,here\n").is_err());
        assert!(parse_matrix_counts(b"player,action,count\nc,0,5\n").is_err());
        assert!(parse_matrix_counts(b"player,action,count\na,0,5\na,0,6\nb,0,1\n").is_err());
        assert!(parse_matrix_counts(b"player,action,count\na,0,5\na,2,6\nb,0,1\n").is_err());
        assert!(parse_matrix_counts(b"player,action,count\na,0,boom\nb,0,1\n").is_err());
        assert!(parse_matrix_counts(b"player,action,count\na,999999999,5\nb,0,1\n").is_err());

        let ok =
            parse_matrix_counts(b"player,action,count\n# comment\na,1,3\na,0,5\nb,0,8\n").unwrap();
        assert_eq!(ok.counts_a, vec![5, 3]);
        assert_eq!(ok.counts_b, vec![8]);
    }

    #[test]
    fn markov_dataset_files_round_trip() {
        let spec = generate_markov_game(3, 3, 3, 4, 1.5, 1.0, 0.9, 4).unwrap();
        let equilibrium = spec.solve_equilibrium(&SolverConfig::default()).unwrap();
        let data = sample_markov_dataset(&spec, &equilibrium.policies, 100, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_markov_dataset(dir.path(), &data, Some(5)).unwrap();
        let loaded = read_markov_dataset(dir.path()).unwrap();
        assert_eq!(loaded, data);
    }

    #[test]
    fn count_rows_parser_validates_structure() {
        assert!(parse_count_rows(b"", "state,a,b,count").is_err());
        assert!(
            parse_count_rows(b"state,a,b,count\n0,0,0,5\n0,0,0,6\n", "state,a,b,count").is_err()
        );
        assert!(parse_count_rows(b"state,a,b,count\n0,0,5\n", "state,a,b,count").is_err());
        let rows = parse_count_rows(b"state,a,b,count\n0,1,2,5\n", "state,a,b,count").unwrap();
        assert_eq!(rows[0].indices, vec![0, 1, 2]);
        assert_eq!(rows[0].count, 5);
    }

    #[test]
    fn config_parsers_accept_defaults_and_reject_junk() {
        let config = parse_experiment_config(b"{}").unwrap();
        assert_eq!(config.trials, 50);
        assert!(parse_experiment_config(b"{\"trials\": 0}").is_err());
        let err = parse_experiment_config(b"{\"matrix\": {\"m\": \"x\"}}").unwrap_err();
        assert!(err.to_string().contains("matrix.m"), "{err}");

        let generate = parse_generate_config(b"{\"kind\": \"markov\", \"seed\": 3}").unwrap();
        assert_eq!(generate.kind.as_deref(), Some("markov"));
        assert!(parse_generate_config(b"{\"kind\": \"poker\"}").is_err());
    }
}
