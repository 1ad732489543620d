//! Experiment harness: worst-case error probabilities over attack grids,
//! single-shot bias sweeps, and config-driven experiment runs that write
//! CSV data with a JSON metadata sidecar.
//!
//! Monte Carlo runs are deterministic for a given seed regardless of worker
//! count: work is split into (attack value, trial batch) cells, each cell
//! derives its own stream from the seed, and the max-reduction over the
//! grid is by index order. Noise streams depend only on the seed, never on
//! the estimator, so estimators compared in one run see identical draws.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    estimate_lasso, estimate_least_squares, estimate_trimmed_mean, phi_search,
    require_homogeneous,
};
use crate::geometry::{build_region, radius_curve, RegionFamily};
use crate::inconsistency::{SubsetBasis, SubsetGeometry};
use crate::model::{trial_rng, SensorModel};

/// Trials per Monte Carlo cell when a config does not say otherwise.
pub const DEFAULT_TRIALS: u64 = 100_000;

/// Trials per parallel work unit.
const BATCH: u64 = 8192;

/// Worker-count override honored by [`run_experiment`].
pub const WORKERS_ENV: &str = "SSE_WORKERS";

fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one (horizon, delta) cell, shared by every estimator in the
/// cell so their draws are common random numbers.
fn cell_seed(seed: u64, k_idx: usize, d_idx: usize) -> u64 {
    let tag = (k_idx * 64 + d_idx + 1) as u64;
    splitmix64(seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(tag))
}

fn default_eps() -> f64 {
    1e-3
}

fn default_lasso_tol() -> f64 {
    1e-10
}

/// Estimator selection with its parameters, as it appears in config files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum EstimatorSpec {
    /// Chebyshev center of the widest confidence region that fits in a
    /// `delta`-ball; `delta` falls back to the run's accuracy radius.
    Optimal {
        #[serde(default)]
        delta: Option<f64>,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default)]
        label: Option<String>,
    },
    TrimmedMean {
        #[serde(default)]
        label: Option<String>,
    },
    LeastSquares {
        #[serde(default)]
        label: Option<String>,
    },
    Lasso {
        lambda: f64,
        #[serde(default = "default_lasso_tol")]
        tol: f64,
        #[serde(default)]
        label: Option<String>,
    },
}

impl EstimatorSpec {
    /// Column label: the explicit label, or a name derived from the method.
    pub fn label(&self) -> String {
        match self {
            EstimatorSpec::Optimal { delta, label, .. } => label.clone().unwrap_or_else(|| {
                match delta {
                    Some(d) => format!("optimal_d{d}"),
                    None => "optimal".to_string(),
                }
            }),
            EstimatorSpec::TrimmedMean { label } => {
                label.clone().unwrap_or_else(|| "trimmed_mean".to_string())
            }
            EstimatorSpec::LeastSquares { label } => {
                label.clone().unwrap_or_else(|| "least_squares".to_string())
            }
            EstimatorSpec::Lasso { label, .. } => {
                label.clone().unwrap_or_else(|| "lasso".to_string())
            }
        }
    }
}

enum BuiltKind {
    Optimal {
        basis: Arc<SubsetBasis>,
        delta: Option<f64>,
        eps: f64,
    },
    TrimmedMean,
    LeastSquares {
        kappa: DMatrix<f64>,
    },
    Lasso {
        lambda: f64,
        tol: f64,
    },
}

/// Estimator with its model-dependent precomputation done once.
pub struct BuiltEstimator {
    pub label: String,
    kind: BuiltKind,
}

impl BuiltEstimator {
    pub fn build(spec: &EstimatorSpec, model: &SensorModel) -> Result<Self> {
        let kind = match spec {
            EstimatorSpec::Optimal { delta, eps, .. } => {
                if let Some(d) = delta {
                    if !d.is_finite() || *d <= 0.0 {
                        return Err(Error::InvalidConfig(
                            "optimal estimator delta must be finite and positive".into(),
                        ));
                    }
                }
                if !eps.is_finite() || *eps <= 0.0 {
                    return Err(Error::InvalidConfig(
                        "optimal estimator eps must be finite and positive".into(),
                    ));
                }
                if !model.is_observable() {
                    return Err(Error::NotObservable {
                        witnesses: model.observability().deficient(),
                    });
                }
                BuiltKind::Optimal {
                    basis: Arc::new(SubsetBasis::for_model(model)?),
                    delta: *delta,
                    eps: *eps,
                }
            }
            EstimatorSpec::TrimmedMean { .. } => {
                require_homogeneous(model)?;
                BuiltKind::TrimmedMean
            }
            EstimatorSpec::LeastSquares { .. } => {
                let all: Vec<usize> = (0..model.m()).collect();
                BuiltKind::LeastSquares {
                    kappa: SubsetGeometry::new(model, &all)?.kappa,
                }
            }
            EstimatorSpec::Lasso { lambda, tol, .. } => {
                if !lambda.is_finite() || *lambda <= 0.0 || !tol.is_finite() || *tol <= 0.0 {
                    return Err(Error::InvalidConfig(
                        "lasso needs finite positive lambda and tol".into(),
                    ));
                }
                BuiltKind::Lasso {
                    lambda: *lambda,
                    tol: *tol,
                }
            }
        };
        Ok(BuiltEstimator {
            label: spec.label(),
            kind,
        })
    }

    /// Runs the estimator on one averaged measurement. `fallback_delta`
    /// feeds estimators that target the run's accuracy radius when their
    /// spec leaves it unset; `k` is the averaging horizon behind `y`.
    pub fn estimate(
        &self,
        model: &SensorModel,
        y: &DVector<f64>,
        k: u32,
        fallback_delta: f64,
    ) -> Result<DVector<f64>> {
        match &self.kind {
            BuiltKind::Optimal { basis, delta, eps } => {
                let family = RegionFamily::with_basis(basis.clone(), y)?;
                let search = phi_search(&family, delta.unwrap_or(fallback_delta), *eps)?;
                Ok(search.center)
            }
            BuiltKind::TrimmedMean => Ok(DVector::from_element(
                1,
                estimate_trimmed_mean(model, y)?,
            )),
            BuiltKind::LeastSquares { kappa } => Ok(kappa * y),
            BuiltKind::Lasso { lambda, tol } => estimate_lasso(model, y, k, *lambda, *tol),
        }
    }
}

/// How the compromised sensor's averaged reading is corrupted at each grid
/// value: replaced outright, or shifted by a constant bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Pinned,
    Bias,
}

/// Attack values to maximize over, all applied to one sensor.
#[derive(Debug, Clone)]
pub struct AttackGrid {
    pub sensor: usize,
    pub kind: AttackKind,
    pub values: Vec<f64>,
}

/// Worst-case Monte Carlo outcome for one (estimator, horizon, delta).
#[derive(Debug, Clone, Serialize)]
pub struct WorstCaseResult {
    /// Error probability at the worst grid value.
    pub e_hat: f64,
    pub worst_attack: f64,
    /// Binomial standard error at the worst value.
    pub std_err: f64,
    /// Trials where the estimator returned an error; counted as misses.
    pub failures: u64,
    pub trials: u64,
    /// Error probability at every grid value, in grid order.
    pub per_value: Vec<(f64, f64)>,
}

/// Estimates the worst-case probability that the estimate lands more than
/// `delta` from the true state, maximizing over the attack grid.
///
/// The true state is the origin and each trial draws the k-round averaged
/// measurement directly: benign sensor i reads `sqrt(W_i / k)` times a
/// standard normal, the compromised sensor is overwritten or biased per the
/// grid. Estimator errors count as misses. Ties on the grid keep the first
/// value.
pub fn worst_case_probability(
    model: &SensorModel,
    spec: &EstimatorSpec,
    k: u32,
    delta: f64,
    grid: &AttackGrid,
    trials: u64,
    seed: u64,
) -> Result<WorstCaseResult> {
    if k == 0 {
        return Err(Error::InvalidArgument("horizon k must be at least 1".into()));
    }
    if !delta.is_finite() || delta <= 0.0 {
        return Err(Error::InvalidArgument(
            "delta must be finite and positive".into(),
        ));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    if grid.sensor >= model.m() {
        return Err(Error::InvalidArgument(format!(
            "attacked sensor {} out of range for m = {}",
            grid.sensor,
            model.m()
        )));
    }
    if grid.values.is_empty() || grid.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "attack grid must be non-empty and finite".into(),
        ));
    }

    let built = BuiltEstimator::build(spec, model)?;
    let m = model.m();
    let sd: Vec<f64> = (0..m).map(|i| (model.w()[i] / f64::from(k)).sqrt()).collect();
    let n_batches = trials.div_ceil(BATCH);
    let cells: Vec<(usize, u64)> = (0..grid.values.len())
        .flat_map(|g| (0..n_batches).map(move |b| (g, b)))
        .collect();

    let outcomes: Vec<(u64, u64)> = cells
        .par_iter()
        .map(|&(g, b)| {
            let value = grid.values[g];
            let mut rng = trial_rng(seed, g as u64 * n_batches + b);
            let count = BATCH.min(trials - b * BATCH);
            let mut misses = 0u64;
            let mut failures = 0u64;
            let mut y = DVector::zeros(m);
            for _ in 0..count {
                for i in 0..m {
                    let z: f64 = rng.sample(StandardNormal);
                    y[i] = sd[i] * z;
                }
                match grid.kind {
                    AttackKind::Pinned => y[grid.sensor] = value,
                    AttackKind::Bias => y[grid.sensor] += value,
                }
                let miss = match built.estimate(model, &y, k, delta) {
                    Ok(x_hat) => x_hat.norm() > delta,
                    Err(_) => {
                        failures += 1;
                        true
                    }
                };
                if miss {
                    misses += 1;
                }
            }
            (misses, failures)
        })
        .collect();

    let mut per_value = Vec::with_capacity(grid.values.len());
    let mut failures = 0u64;
    for (g, &value) in grid.values.iter().enumerate() {
        let mut misses = 0u64;
        for b in 0..n_batches as usize {
            let (mi, fa) = outcomes[g * n_batches as usize + b];
            misses += mi;
            failures += fa;
        }
        per_value.push((value, misses as f64 / trials as f64));
    }
    let mut best = 0usize;
    for (g, pv) in per_value.iter().enumerate() {
        if pv.1 > per_value[best].1 {
            best = g;
        }
    }
    let e_hat = per_value[best].1;
    Ok(WorstCaseResult {
        e_hat,
        worst_attack: per_value[best].0,
        std_err: (e_hat * (1.0 - e_hat) / trials as f64).sqrt(),
        failures,
        trials,
        per_value,
    })
}

/// One bias value with each estimator's error against the attack-free
/// target; `NaN` marks an estimator that failed at that bias.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub bias: f64,
    pub errors: Vec<f64>,
}

/// Single-shot bias sweep: per-estimator error norms, column per label.
#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub labels: Vec<String>,
    /// Attack-free target: the full least-squares fit of the clean `z`.
    pub target: Vec<f64>,
    pub rows: Vec<SweepRow>,
}

/// Sweeps an additive bias on one sensor of the clean measurement `z` and
/// records each estimator's error against the attack-free least-squares
/// target. Deterministic; horizon is one round.
pub fn resilience_sweep(
    model: &SensorModel,
    specs: &[EstimatorSpec],
    z: &DVector<f64>,
    sensor: usize,
    biases: &[f64],
) -> Result<SweepResult> {
    if specs.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one estimator".into()));
    }
    if sensor >= model.m() {
        return Err(Error::InvalidArgument(format!(
            "attacked sensor {sensor} out of range for m = {}",
            model.m()
        )));
    }
    if biases.is_empty() || biases.iter().any(|b| !b.is_finite()) {
        return Err(Error::InvalidArgument(
            "bias grid must be non-empty and finite".into(),
        ));
    }
    for spec in specs {
        if matches!(spec, EstimatorSpec::Optimal { delta: None, .. }) {
            return Err(Error::InvalidConfig(
                "optimal estimator needs an explicit delta in a bias sweep".into(),
            ));
        }
    }
    let built = specs
        .iter()
        .map(|s| BuiltEstimator::build(s, model))
        .collect::<Result<Vec<_>>>()?;
    let target = estimate_least_squares(model, z)?;

    let rows = biases
        .iter()
        .map(|&a| {
            let mut y = z.clone();
            y[sensor] += a;
            let errors = built
                .iter()
                .map(|b| match b.estimate(model, &y, 1, f64::NAN) {
                    Ok(x_hat) => (x_hat - &target).norm(),
                    Err(_) => f64::NAN,
                })
                .collect();
            SweepRow { bias: a, errors }
        })
        .collect();
    Ok(SweepResult {
        labels: built.iter().map(|b| b.label.clone()).collect(),
        target: target.as_slice().to_vec(),
        rows,
    })
}

/// Evenly spaced values from `start` to `stop` inclusive.
pub fn float_range(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !start.is_finite() || !stop.is_finite() || !step.is_finite() || step <= 0.0 {
        return Err(Error::InvalidArgument(
            "range needs finite endpoints and a positive step".into(),
        ));
    }
    if stop < start {
        return Err(Error::InvalidArgument(
            "range stop must not precede its start".into(),
        ));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + i as f64 * step).collect())
}

fn default_seed() -> u64 {
    1
}

fn default_boundary_points() -> usize {
    256
}

fn default_trials() -> u64 {
    DEFAULT_TRIALS
}

fn default_attack_kind() -> AttackKind {
    AttackKind::Pinned
}

/// Attack grid as configured: one sensor, a value range, and how the
/// values corrupt the sensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackSpec {
    pub sensor: usize,
    #[serde(default = "default_attack_kind")]
    pub kind: AttackKind,
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

/// The experiment kinds a config file can request.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Boundary polylines of every region piece at each level; needs a
    /// two-dimensional state.
    RegionFigure {
        y: Vec<f64>,
        phis: Vec<f64>,
        #[serde(default = "default_boundary_points")]
        boundary_points: usize,
    },
    /// Chebyshev radius of the region across a level range.
    RadiusCurve {
        y: Vec<f64>,
        phi_start: f64,
        phi_stop: f64,
        phi_step: f64,
    },
    /// Single-shot bias sweep on one sensor of a clean measurement.
    ResilienceSweep {
        z: Vec<f64>,
        sensor: usize,
        bias_start: f64,
        bias_stop: f64,
        bias_step: f64,
        estimators: Vec<EstimatorSpec>,
    },
    /// Worst-case probabilities per (estimator, horizon, delta).
    Comparison {
        estimators: Vec<EstimatorSpec>,
        horizons: Vec<u32>,
        deltas: Vec<f64>,
        #[serde(default = "default_trials")]
        trials: u64,
        attack: AttackSpec,
    },
}

/// A full experiment: the model file, the experiment, the seed, and where
/// the CSV goes. Relative paths resolve against the config file's folder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub output: PathBuf,
    pub experiment: ExperimentKind,
}

/// Reads a config file and resolves its relative paths.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut config: ExperimentConfig = serde_json::from_str(&text)?;
    if let Some(dir) = path.parent() {
        if config.model.is_relative() {
            config.model = dir.join(&config.model);
        }
        if config.output.is_relative() {
            config.output = dir.join(&config.output);
        }
    }
    Ok(config)
}

/// Files written by a run: the CSV and its metadata sidecar.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub output: PathBuf,
    pub meta: PathBuf,
    pub rows: usize,
}

#[derive(Serialize)]
struct RunMeta<'a> {
    config: &'a ExperimentConfig,
    crate_version: &'static str,
    seed: u64,
    workers: Option<usize>,
    wall_ms: u64,
    rows: usize,
}

/// Runs the experiment with the default worker pool (or the count from the
/// `SSE_WORKERS` environment variable).
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary> {
    run_experiment_with_workers(config, None)
}

/// Runs the experiment on `workers` threads. The CSV bytes depend only on
/// the config and seed, never on the worker count; wall time goes to the
/// metadata sidecar only.
pub fn run_experiment_with_workers(
    config: &ExperimentConfig,
    workers: Option<usize>,
) -> Result<RunSummary> {
    let workers = workers.or_else(|| {
        std::env::var(WORKERS_ENV)
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
    });
    let start = Instant::now();
    let (csv, rows) = match workers {
        Some(w) if w >= 1 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
            pool.install(|| render_experiment(config))?
        }
        _ => render_experiment(config)?,
    };

    if let Some(dir) = config.output.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(&config.output, csv)?;
    let meta_path = PathBuf::from(format!("{}.meta.json", config.output.display()));
    let meta = RunMeta {
        config,
        crate_version: env!("CARGO_PKG_VERSION"),
        seed: config.seed,
        workers,
        wall_ms: start.elapsed().as_millis() as u64,
        rows,
    };
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)?;
    Ok(RunSummary {
        output: config.output.clone(),
        meta: meta_path,
        rows,
    })
}

/// Produces the CSV text and its data row count for one experiment.
fn render_experiment(config: &ExperimentConfig) -> Result<(String, usize)> {
    let model = SensorModel::from_json_file(&config.model)?;
    let mut csv = String::new();
    let mut rows = 0usize;
    match &config.experiment {
        ExperimentKind::RegionFigure {
            y,
            phis,
            boundary_points,
        } => {
            if model.n() != 2 {
                return Err(Error::InvalidConfig(
                    "region figures need a two-dimensional state".into(),
                ));
            }
            if phis.is_empty() {
                return Err(Error::InvalidConfig("region figure needs at least one level".into()));
            }
            if *boundary_points < 3 {
                return Err(Error::InvalidConfig(
                    "boundary_points must be at least 3".into(),
                ));
            }
            let y = DVector::from_vec(y.clone());
            csv.push_str("phi,piece,point_index,x0,x1\n");
            for &phi in phis {
                let region = build_region(&model, &y, phi)?;
                for piece in &region.pieces {
                    let label = piece
                        .subset
                        .iter()
                        .map(|i| i.to_string())
                        .collect::<Vec<_>>()
                        .join("+");
                    if piece.is_point() {
                        csv.push_str(&format!(
                            "{phi},{label},0,{},{}\n",
                            piece.center[0], piece.center[1]
                        ));
                        rows += 1;
                        continue;
                    }
                    let eig = piece.shape.clone().symmetric_eigen();
                    let semi = |j: usize| (piece.level / eig.eigenvalues[j]).sqrt();
                    for t in 0..=*boundary_points {
                        let theta =
                            2.0 * std::f64::consts::PI * t as f64 / *boundary_points as f64;
                        let p = &piece.center
                            + semi(0) * theta.cos() * eig.eigenvectors.column(0)
                            + semi(1) * theta.sin() * eig.eigenvectors.column(1);
                        csv.push_str(&format!("{phi},{label},{t},{},{}\n", p[0], p[1]));
                        rows += 1;
                    }
                }
            }
        }
        ExperimentKind::RadiusCurve {
            y,
            phi_start,
            phi_stop,
            phi_step,
        } => {
            let y = DVector::from_vec(y.clone());
            let phis = float_range(*phi_start, *phi_stop, *phi_step)?;
            csv.push_str("phi,radius\n");
            for (phi, radius) in radius_curve(&model, &y, &phis)? {
                match radius {
                    Some(r) => csv.push_str(&format!("{phi},{r}\n")),
                    None => csv.push_str(&format!("{phi},\n")),
                }
                rows += 1;
            }
        }
        ExperimentKind::ResilienceSweep {
            z,
            sensor,
            bias_start,
            bias_stop,
            bias_step,
            estimators,
        } => {
            let z = DVector::from_vec(z.clone());
            let biases = float_range(*bias_start, *bias_stop, *bias_step)?;
            let sweep = resilience_sweep(&model, estimators, &z, *sensor, &biases)?;
            csv.push_str(&format!("bias,{}\n", sweep.labels.join(",")));
            for row in &sweep.rows {
                let errors = row
                    .errors
                    .iter()
                    .map(|e| e.to_string())
                    .collect::<Vec<_>>()
                    .join(",");
                csv.push_str(&format!("{},{errors}\n", row.bias));
                rows += 1;
            }
        }
        ExperimentKind::Comparison {
            estimators,
            horizons,
            deltas,
            trials,
            attack,
        } => {
            if estimators.is_empty() || horizons.is_empty() || deltas.is_empty() {
                return Err(Error::InvalidConfig(
                    "comparison needs estimators, horizons, and deltas".into(),
                ));
            }
            let grid = AttackGrid {
                sensor: attack.sensor,
                kind: attack.kind,
                values: float_range(attack.start, attack.stop, attack.step)?,
            };
            csv.push_str("estimator,k,delta,e_hat,std_err,worst_attack,failures,trials\n");
            for spec in estimators {
                let label = spec.label();
                for (ki, &k) in horizons.iter().enumerate() {
                    for (di, &delta) in deltas.iter().enumerate() {
                        let result = worst_case_probability(
                            &model,
                            spec,
                            k,
                            delta,
                            &grid,
                            *trials,
                            cell_seed(config.seed, ki, di),
                        )?;
                        csv.push_str(&format!(
                            "{label},{k},{delta},{},{},{},{},{}\n",
                            result.e_hat,
                            result.std_err,
                            result.worst_attack,
                            result.failures,
                            result.trials
                        ));
                        rows += 1;
                    }
                }
            }
        }
    }
    Ok((csv, rows))
}
