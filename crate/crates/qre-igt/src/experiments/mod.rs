//! Seeded experiment harness: convergence sweeps, the estimator comparison
//! table, misspecification studies, and log-log slope fits.
//!
//! Every experiment is a pure function of `(config, master seed)`: trials get
//! derived seed streams, run independently (in parallel when a rayon pool is
//! available), and aggregate in fixed trial order, so output files are
//! byte-identical across runs and thread counts.

mod markov;
mod matrix;
mod output;

pub use markov::{run_convergence_markov, run_unknown_dynamics};
pub use matrix::{
    payoff_projection, run_comparison_table, run_convergence_matrix, run_feature_misspecification,
    run_misspecified_c, ComparisonReport, ComparisonRow, MisspecReport,
};
pub use output::{
    mean_std, read_csv_skipping_comments, summarize_grid, verify_written_outputs,
    write_csv_with_metadata, write_experiment_outputs, Cell, ExperimentSummary, FailureCount,
    MetricSummary, RawTable, RunMetadata,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Matrix-game generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatrixParams {
    pub m: usize,
    pub n: usize,
    pub d: usize,
    pub tau_star: f64,
    pub normalization: f64,
}

impl Default for MatrixParams {
    fn default() -> Self {
        MatrixParams {
            m: 10,
            n: 10,
            d: 5,
            tau_star: 2.0,
            normalization: 1.0,
        }
    }
}

/// Markov-game generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkovParams {
    pub states: usize,
    pub m: usize,
    pub n: usize,
    pub d: usize,
    pub tau_star: f64,
    pub normalization: f64,
    pub gamma: f64,
}

impl Default for MarkovParams {
    fn default() -> Self {
        MarkovParams {
            states: 8,
            m: 5,
            n: 5,
            d: 6,
            tau_star: 1.5,
            normalization: 1.0,
            gamma: 0.9,
        }
    }
}

/// One experiment run, fully specified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trials: usize,
    /// Sample-size grid: N values for matrix experiments, total K for Markov
    /// experiments. `None` uses the experiment's default grid.
    pub grid: Option<Vec<u64>>,
    pub matrix: MatrixParams,
    pub markov: MarkovParams,
    /// Probability floor for empirical policies; `None` uses `1 / (2N)`.
    pub floor: Option<f64>,
    /// Laplace smoothing weight for transition estimation.
    pub alpha: f64,
    /// Fixed temperatures for the comparison-table baseline.
    pub tau_assumed: Vec<f64>,
    /// Sample count for the comparison table.
    pub comparison_samples: u64,
    /// `C_assumed / C_true` grid for the misspecified-normalization sweep.
    pub c_ratios: Vec<f64>,
    /// Sample count for the misspecified-normalization sweep.
    pub misspec_samples: u64,
    /// Feature count handed to the estimator in the feature-misspecification
    /// study.
    pub d_est: usize,
    /// Reuse a single game across trials instead of redrawing per trial.
    pub fixed_game: bool,
    /// Where to write outputs; the CLI `--out` flag overrides this.
    pub output_dir: Option<std::path::PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            trials: 50,
            grid: None,
            matrix: MatrixParams::default(),
            markov: MarkovParams::default(),
            floor: None,
            alpha: 1.0,
            tau_assumed: vec![1.0, 2.0, 4.0],
            comparison_samples: 10_000,
            c_ratios: vec![0.1, 0.3, 1.0, 3.0, 10.0],
            misspec_samples: 100_000,
            d_est: 4,
            fixed_game: false,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::invalid_document(
                "experiment config",
                "trials must be >= 1",
            ));
        }
        if let Some(grid) = &self.grid {
            if grid.is_empty() {
                return Err(Error::invalid_document(
                    "experiment config",
                    "grid is empty",
                ));
            }
            if grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid_document(
                    "experiment config",
                    "grid must be strictly increasing",
                ));
            }
        }
        if self.alpha.is_nan() || self.alpha < 0.0 {
            return Err(Error::invalid_document(
                "experiment config",
                "alpha must be >= 0",
            ));
        }
        if self.tau_assumed.iter().any(|t| t.is_nan() || *t <= 0.0) {
            return Err(Error::invalid_document(
                "experiment config",
                "tau_assumed entries must be positive",
            ));
        }
        if self.c_ratios.iter().any(|r| r.is_nan() || *r <= 0.0) {
            return Err(Error::invalid_document(
                "experiment config",
                "c_ratios entries must be positive",
            ));
        }
        if let Some(floor) = self.floor {
            if floor.is_nan() || floor < 0.0 {
                return Err(Error::invalid_document(
                    "experiment config",
                    "floor must be >= 0",
                ));
            }
        }
        Ok(())
    }

    /// The N grid for matrix-game experiments.
    pub fn matrix_grid(&self) -> Vec<u64> {
        self.grid
            .clone()
            .unwrap_or_else(|| log_grid(1_000, 100_000, 6))
    }

    /// The K grid for Markov-game experiments; K must be divisible by the
    /// state count since sampling draws `K / states` pairs per state.
    pub fn markov_grid(&self) -> Result<Vec<u64>> {
        let states = self.markov.states as u64;
        match &self.grid {
            Some(grid) => {
                for k in grid {
                    if k % states != 0 || *k == 0 {
                        return Err(Error::invalid_document(
                            "experiment config",
                            format!("grid value {k} is not a positive multiple of {states} states"),
                        ));
                    }
                }
                Ok(grid.clone())
            }
            None => Ok(log_grid(250, 25_000, 6)
                .into_iter()
                .map(|n| n * states)
                .collect()),
        }
    }
}

/// Rounded geometric grid from `lo` to `hi` inclusive.
pub fn log_grid(lo: u64, hi: u64, points: usize) -> Vec<u64> {
    assert!(points >= 2 && lo >= 1 && hi > lo);
    let (lo_f, hi_f) = (lo as f64, hi as f64);
    let mut grid: Vec<u64> = (0..points)
        .map(|i| {
            let t = i as f64 / (points - 1) as f64;
            (lo_f * (hi_f / lo_f).powf(t)).round() as u64
        })
        .collect();
    grid.dedup();
    grid
}

/// The experiments the CLI can run by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    ConvergenceMatrix,
    ComparisonTable,
    MisspecifiedC,
    ConvergenceMarkov,
    UnknownDynamics,
    FeatureMisspec,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::ConvergenceMatrix,
        ExperimentKind::ComparisonTable,
        ExperimentKind::MisspecifiedC,
        ExperimentKind::ConvergenceMarkov,
        ExperimentKind::UnknownDynamics,
        ExperimentKind::FeatureMisspec,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::ConvergenceMatrix => "convergence-matrix",
            ExperimentKind::ComparisonTable => "comparison-table",
            ExperimentKind::MisspecifiedC => "misspecified-c",
            ExperimentKind::ConvergenceMarkov => "convergence-markov",
            ExperimentKind::UnknownDynamics => "unknown-dynamics",
            ExperimentKind::FeatureMisspec => "feature-misspec",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|kind| kind.name() == name)
    }

    /// Experiment-specific defaults; the misspecified-normalization sweep uses
    /// the larger game with a non-unit scale.
    pub fn default_config(&self) -> ExperimentConfig {
        let mut config = ExperimentConfig::default();
        if let ExperimentKind::MisspecifiedC = self {
            config.matrix = MatrixParams {
                m: 20,
                n: 20,
                d: 8,
                tau_star: 2.0,
                normalization: 5.0,
            };
        }
        config
    }
}

/// Per-sample-size means, spreads, and fitted convergence slopes.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub grid: Vec<u64>,
    pub trials: usize,
    pub metrics: Vec<MetricSummary>,
    /// Failed (trial, grid point) cell counts, aligned with `grid`.
    pub failures: Vec<u64>,
    pub raw: RawTable,
}

impl ConvergenceReport {
    pub fn metric(&self, name: &str) -> &MetricSummary {
        self.metrics
            .iter()
            .find(|m| m.name == name)
            .unwrap_or_else(|| panic!("no metric named {name}"))
    }

    pub fn slope(&self, name: &str) -> f64 {
        self.metric(name).slope.expect("metric has no fitted slope")
    }
}

/// OLS slope of `log(error)` on `log(size)`.
pub fn fit_loglog_slope(sizes: &[f64], errors: &[f64]) -> Result<f64> {
    if sizes.len() != errors.len() {
        return Err(Error::DimensionMismatch {
            what: "slope fit inputs",
            expected: sizes.len(),
            actual: errors.len(),
        });
    }
    if sizes.len() < 2 {
        return Err(Error::invalid_parameter(
            "slope fit",
            "need at least two points".to_string(),
        ));
    }
    if sizes
        .iter()
        .chain(errors.iter())
        .any(|v| v.is_nan() || *v <= 0.0)
    {
        return Err(Error::invalid_parameter(
            "slope fit",
            "sizes and errors must be strictly positive".to_string(),
        ));
    }
    let xs: Vec<f64> = sizes.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|v| v.ln()).collect();
    let x_mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let y_mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        num += (x - x_mean) * (y - y_mean);
        den += (x - x_mean) * (x - x_mean);
    }
    if den == 0.0 {
        return Err(Error::invalid_parameter(
            "slope fit",
            "all sizes are identical".to_string(),
        ));
    }
    Ok(num / den)
}

/// Runs `f` over trial indices on the rayon pool, preserving trial order.
pub(crate) fn run_trials<T: Send>(trials: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..trials).into_par_iter().map(f).collect()
}

/// Fits slopes on the per-grid-point trial means (the plotted mean curves),
/// requiring at least four grid points. Grid points where every trial failed
/// are absent from the metric and excluded from the fit.
pub(crate) fn attach_slopes(metrics: &mut [MetricSummary], grid: &[u64]) -> Result<()> {
    if grid.len() < 4 {
        return Err(Error::invalid_document(
            "experiment config",
            "convergence slopes need a grid of at least 4 sample sizes",
        ));
    }
    for metric in metrics.iter_mut() {
        if metric.grid.len() < 4 {
            return Err(Error::invalid_parameter(
                "slope fit",
                format!(
                    "metric {} has only {} usable grid points (all trials failed elsewhere)",
                    metric.name,
                    metric.grid.len()
                ),
            ));
        }
        metric.slope = Some(fit_loglog_slope(&metric.grid, &metric.mean)?);
    }
    Ok(())
}

/// Runs an experiment by kind and writes `raw.csv`, `summary.json`, and
/// `plotdata.csv` under `out_dir/<experiment name>/`. Returns the summary.
pub fn run_and_write(
    kind: ExperimentKind,
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<(ExperimentSummary, PathBuf)> {
    config.validate()?;
    let dir = out_dir.join(kind.name());
    let (summary, raw) = match kind {
        ExperimentKind::ConvergenceMatrix => {
            let report = run_convergence_matrix(config)?;
            (report_summary(kind, config, &report), report.raw)
        }
        ExperimentKind::ConvergenceMarkov => {
            let report = run_convergence_markov(config)?;
            (report_summary(kind, config, &report), report.raw)
        }
        ExperimentKind::UnknownDynamics => {
            let report = run_unknown_dynamics(config)?;
            (report_summary(kind, config, &report), report.raw)
        }
        ExperimentKind::FeatureMisspec => {
            let report = run_feature_misspecification(config)?;
            (report_summary(kind, config, &report), report.raw)
        }
        ExperimentKind::MisspecifiedC => {
            let report = run_misspecified_c(config)?;
            let summary = ExperimentSummary {
                metadata: RunMetadata::new(kind.name(), config.seed),
                trials: report.trials,
                failures: report
                    .ratios
                    .iter()
                    .map(|ratio| FailureCount {
                        x: *ratio,
                        count: report.failures,
                    })
                    .collect(),
                metrics: report.metrics.clone(),
                config: serde_json::to_value(config)?,
            };
            (summary, report.raw)
        }
        ExperimentKind::ComparisonTable => {
            let report = run_comparison_table(config)?;
            let summary = ExperimentSummary {
                metadata: RunMetadata::new(kind.name(), config.seed),
                trials: config.trials,
                failures: vec![FailureCount {
                    x: config.comparison_samples as f64,
                    count: report.failures,
                }],
                metrics: report.metrics.clone(),
                config: serde_json::to_value(config)?,
            };
            (summary, report.raw)
        }
    };
    write_experiment_outputs(&dir, &summary, &raw)?;
    Ok((summary, dir))
}

fn report_summary(
    kind: ExperimentKind,
    config: &ExperimentConfig,
    report: &ConvergenceReport,
) -> ExperimentSummary {
    ExperimentSummary {
        metadata: RunMetadata::new(kind.name(), config.seed),
        trials: report.trials,
        failures: report
            .grid
            .iter()
            .zip(&report.failures)
            .map(|(x, count)| FailureCount {
                x: *x as f64,
                count: *count,
            })
            .collect(),
        metrics: report.metrics.clone(),
        config: serde_json::to_value(config).expect("config serializes"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_an_exact_power_law_is_recovered() {
        let sizes: Vec<f64> = vec![100.0, 1_000.0, 10_000.0, 100_000.0];
        let errors: Vec<f64> = sizes.iter().map(|n| 3.0 / n.sqrt()).collect();
        let slope = fit_loglog_slope(&sizes, &errors).unwrap();
        assert!((slope + 0.5).abs() < 1e-12, "slope {slope}");

        let constant = vec![2.0; 4];
        assert!(fit_loglog_slope(&sizes, &constant).unwrap().abs() < 1e-12);
    }

    #[test]
    fn slope_on_a_noisy_power_law_stays_close() {
        let mut rng = crate::rng::stream(1, "slope-test", &[]);
        let sizes: Vec<f64> = (0..8).map(|i| 100.0 * 2.0_f64.powi(i)).collect();
        let errors: Vec<f64> = sizes
            .iter()
            .map(|n| 5.0 * n.powf(-0.5) * (1.0 + 0.02 * crate::rng::standard_normal(&mut rng)))
            .collect();
        let slope = fit_loglog_slope(&sizes, &errors).unwrap();
        assert!((slope + 0.5).abs() < 0.05, "slope {slope}");
    }

    #[test]
    fn slope_rejects_bad_input() {
        assert!(fit_loglog_slope(&[10.0], &[1.0]).is_err());
        assert!(fit_loglog_slope(&[10.0, 20.0], &[1.0, 0.0]).is_err());
        assert!(fit_loglog_slope(&[10.0, 20.0], &[1.0]).is_err());
        assert!(fit_loglog_slope(&[10.0, 10.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn default_grids_bracket_the_reference_points() {
        let config = ExperimentConfig::default();
        let matrix = config.matrix_grid();
        assert_eq!(matrix.len(), 6);
        assert_eq!(matrix[0], 1_000);
        assert_eq!(matrix[5], 100_000);
        assert!(matrix.windows(2).all(|w| w[0] < w[1]));

        let markov = config.markov_grid().unwrap();
        assert_eq!(markov[0], 2_000);
        assert_eq!(markov[5], 200_000);
        assert!(markov.iter().all(|k| k % 8 == 0));
    }

    #[test]
    fn config_validation_rejects_bad_grids_and_params() {
        let mut config = ExperimentConfig {
            grid: Some(vec![100, 100]),
            ..Default::default()
        };
        assert!(config.validate().is_err());
        config.grid = Some(vec![100, 50]);
        assert!(config.validate().is_err());
        config.grid = Some(vec![50, 100]);
        assert!(config.validate().is_ok());

        // d_est is checked where it is consumed.
        config.d_est = 6;
        assert!(run_feature_misspecification(&config).is_err());
        config.d_est = 4;
        config.trials = 0;
        assert!(config.validate().is_err());

        let bad_k = ExperimentConfig {
            grid: Some(vec![2_001]),
            ..Default::default()
        };
        assert!(bad_k.markov_grid().is_err());
    }

    #[test]
    fn default_params_match_the_reference_setups() {
        let matrix = MatrixParams::default();
        assert_eq!(
            (
                matrix.m,
                matrix.n,
                matrix.d,
                matrix.tau_star,
                matrix.normalization
            ),
            (10, 10, 5, 2.0, 1.0)
        );
        let markov = MarkovParams::default();
        assert_eq!((markov.states, markov.m, markov.n, markov.d), (8, 5, 5, 6));
        assert_eq!(
            (markov.tau_star, markov.normalization, markov.gamma),
            (1.5, 1.0, 0.9)
        );
        assert_eq!(ExperimentConfig::default().trials, 50);
        assert_eq!(ExperimentConfig::default().comparison_samples, 10_000);
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in ExperimentKind::ALL {
            assert_eq!(ExperimentKind::from_name(kind.name()), Some(kind));
        }
        assert_eq!(ExperimentKind::from_name("nope"), None);
        let misspec = ExperimentKind::MisspecifiedC.default_config();
        assert_eq!(misspec.matrix.m, 20);
        assert_eq!(misspec.matrix.normalization, 5.0);
    }
}
