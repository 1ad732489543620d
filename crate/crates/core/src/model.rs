//! Measurement model and attack scenarios.
//!
//! `m` scalar sensors observe an unknown state `x` in `R^n`. Sensor `i`
//! reports `z_i(t) = h_i · x + w_i(t)` where `h_i` is the i-th row of the
//! observation matrix `H` and `w_i(t)` is zero-mean Gaussian noise with
//! variance `W_i`, independent across sensors and time. An adversary
//! controls an unknown fixed subset of at most `q` sensors and adds an
//! arbitrary bias `a_i(t)` to each of them, so the received measurement is
//! `y_i(t) = z_i(t) + a_i(t)`.
//!
//! Everything downstream consumes the row-averaged measurement
//! `avg(Y) = Y 1 / k`, which is a sufficient statistic for the static state
//! under this noise model.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Observation setup plus the attack budget `q`.
///
/// Construction validates shapes and positivity and records which
/// `(m - 2q)`-row subsets of `H` are full column rank. Models that fail that
/// rank test are still constructed (they are needed to exhibit what goes
/// wrong without it); estimation entry points reject them instead.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct SensorModel {
    h: DMatrix<f64>,
    w: DVector<f64>,
    q: usize,
    observability: ObservabilityReport,
}

/// Rank information for every sensor subset of size `m - 2q`.
///
/// The model is called 2q-observable when every such subset of `H` rows has
/// full column rank; equivalently, removing any `2q` sensors still leaves an
/// identifiable state.
#[derive(Debug, Clone)]
pub struct ObservabilityReport {
    /// Each checked subset with its full-rank flag, in lexicographic order.
    pub subsets: Vec<(Vec<usize>, bool)>,
    pub observable: bool,
}

impl ObservabilityReport {
    /// Subsets that failed the rank test.
    pub fn deficient(&self) -> Vec<Vec<usize>> {
        self.subsets
            .iter()
            .filter(|(_, ok)| !ok)
            .map(|(s, _)| s.clone())
            .collect()
    }
}

impl SensorModel {
    pub fn new(h: DMatrix<f64>, w: DVector<f64>, q: usize) -> Result<Self> {
        let m = h.nrows();
        let n = h.ncols();
        if m == 0 || n == 0 {
            return Err(Error::InvalidModel("H must be non-empty".into()));
        }
        if w.len() != m {
            return Err(Error::InvalidModel(format!(
                "W has {} entries but H has {} rows",
                w.len(),
                m
            )));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("H contains non-finite entries".into()));
        }
        if w.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::InvalidModel(
                "noise variances must be finite and positive".into(),
            ));
        }
        if 2 * q >= m {
            return Err(Error::InvalidModel(format!(
                "attack budget q = {q} needs m > 2q, but m = {m}"
            )));
        }
        let observability = validate_observability_raw(&h, q);
        Ok(SensorModel {
            h,
            w,
            q,
            observability,
        })
    }

    pub fn m(&self) -> usize {
        self.h.nrows()
    }

    pub fn n(&self) -> usize {
        self.h.ncols()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn w(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn observability(&self) -> &ObservabilityReport {
        &self.observability
    }

    pub fn is_observable(&self) -> bool {
        self.observability.observable
    }

    /// Rows of `H` and entries of `W` for the given sensors, in the order given.
    pub fn subset_rows(&self, subset: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        let mut h = DMatrix::zeros(subset.len(), self.n());
        let mut w = DVector::zeros(subset.len());
        for (r, &i) in subset.iter().enumerate() {
            h.row_mut(r).copy_from(&self.h.row(i));
            w[r] = self.w[i];
        }
        (h, w)
    }

    /// Noise-free measurement `H x`.
    pub fn clean(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.h * x
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Rank-check every `(m - 2q)`-subset of `H` rows.
pub fn validate_observability(model: &SensorModel) -> ObservabilityReport {
    validate_observability_raw(model.h(), model.q())
}

fn validate_observability_raw(h: &DMatrix<f64>, q: usize) -> ObservabilityReport {
    use itertools::Itertools;
    let m = h.nrows();
    let size = m - 2 * q;
    let mut subsets = Vec::new();
    let mut observable = true;
    for subset in (0..m).combinations(size) {
        let mut rows = DMatrix::zeros(size, h.ncols());
        for (r, &i) in subset.iter().enumerate() {
            rows.row_mut(r).copy_from(&h.row(i));
        }
        let ok = linalg::is_full_column_rank(&rows);
        observable &= ok;
        subsets.push((subset, ok));
    }
    ObservabilityReport {
        subsets,
        observable,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    #[serde(rename = "H")]
    h: Vec<Vec<f64>>,
    #[serde(rename = "W")]
    w: Vec<f64>,
    q: usize,
}

impl TryFrom<ModelFile> for SensorModel {
    type Error = Error;

    fn try_from(file: ModelFile) -> Result<Self> {
        let m = file.h.len();
        if m == 0 {
            return Err(Error::InvalidModel("H must be non-empty".into()));
        }
        let n = file.h[0].len();
        if file.h.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidModel("H rows have unequal lengths".into()));
        }
        let flat: Vec<f64> = file.h.iter().flatten().copied().collect();
        let h = DMatrix::from_row_slice(m, n, &flat);
        SensorModel::new(h, DVector::from_vec(file.w), file.q)
    }
}

impl From<SensorModel> for ModelFile {
    fn from(model: SensorModel) -> Self {
        let h = model
            .h
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        ModelFile {
            h,
            w: model.w.iter().copied().collect(),
            q: model.q,
        }
    }
}

/// Received measurements over a horizon; column `t` holds all sensors at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementBlock {
    data: DMatrix<f64>,
}

impl MeasurementBlock {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.ncols() == 0 || data.nrows() == 0 {
            return Err(Error::InvalidArgument(
                "measurement block must have at least one sensor and one time step".into(),
            ));
        }
        Ok(MeasurementBlock { data })
    }

    pub fn sensors(&self) -> usize {
        self.data.nrows()
    }

    pub fn horizon(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn averaged(&self) -> DVector<f64> {
        avg(self)
    }
}

/// Row averages of a measurement block: one entry per sensor.
pub fn avg(block: &MeasurementBlock) -> DVector<f64> {
    let k = block.data.ncols() as f64;
    DVector::from_iterator(
        block.data.nrows(),
        block.data.row_iter().map(|r| r.sum() / k),
    )
}

/// What the adversary does with the sensors it controls.
///
/// Policies name their target sensors explicitly; a scenario is rejected when
/// a policy touches a sensor outside the compromised set.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BiasPolicy {
    /// Add the same bias at every time step; `values[j]` applies to `sensors[j]`.
    Constant {
        sensors: Vec<usize>,
        values: Vec<f64>,
    },
    /// Add a per-time bias; `values[t][j]` applies to `sensors[j]` at time `t`.
    Sequence {
        sensors: Vec<usize>,
        values: Vec<Vec<f64>>,
    },
    /// Discard the real readings and report a constant, pinning the averaged
    /// measurement of `sensors[j]` to exactly `values[j]`.
    PinnedAverage {
        sensors: Vec<usize>,
        values: Vec<f64>,
    },
}

impl BiasPolicy {
    fn sensors(&self) -> &[usize] {
        match self {
            BiasPolicy::Constant { sensors, .. }
            | BiasPolicy::Sequence { sensors, .. }
            | BiasPolicy::PinnedAverage { sensors, .. } => sensors,
        }
    }
}

/// One synthetic experiment: the true state, who is compromised, what they
/// inject, how long we observe, and the RNG seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ScenarioFile", into = "ScenarioFile")]
pub struct AttackScenario {
    pub x_true: DVector<f64>,
    pub compromised: Vec<usize>,
    pub bias_policy: BiasPolicy,
    pub horizon: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScenarioFile {
    x_true: Vec<f64>,
    compromised: Vec<usize>,
    bias_policy: BiasPolicy,
    horizon: usize,
    seed: u64,
}

impl TryFrom<ScenarioFile> for AttackScenario {
    type Error = Error;

    fn try_from(f: ScenarioFile) -> Result<Self> {
        Ok(AttackScenario {
            x_true: DVector::from_vec(f.x_true),
            compromised: f.compromised,
            bias_policy: f.bias_policy,
            horizon: f.horizon,
            seed: f.seed,
        })
    }
}

impl From<AttackScenario> for ScenarioFile {
    fn from(s: AttackScenario) -> Self {
        ScenarioFile {
            x_true: s.x_true.iter().copied().collect(),
            compromised: s.compromised,
            bias_policy: s.bias_policy,
            horizon: s.horizon,
            seed: s.seed,
        }
    }
}

impl AttackScenario {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Check the scenario against a model. Policy targets must lie inside the
    /// compromised set, which in turn must respect the attack budget.
    pub fn validate(&self, model: &SensorModel) -> Result<()> {
        if self.x_true.len() != model.n() {
            return Err(Error::InvalidScenario(format!(
                "x_true has dimension {}, model expects {}",
                self.x_true.len(),
                model.n()
            )));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidScenario("horizon must be at least 1".into()));
        }
        let mut seen = vec![false; model.m()];
        for &i in &self.compromised {
            if i >= model.m() {
                return Err(Error::InvalidScenario(format!(
                    "compromised sensor {i} out of range (m = {})",
                    model.m()
                )));
            }
            if seen[i] {
                return Err(Error::InvalidScenario(format!(
                    "compromised sensor {i} listed twice"
                )));
            }
            seen[i] = true;
        }
        if self.compromised.len() > model.q() {
            return Err(Error::InvalidScenario(format!(
                "{} compromised sensors exceed the budget q = {}",
                self.compromised.len(),
                model.q()
            )));
        }
        for &s in self.bias_policy.sensors() {
            if !self.compromised.contains(&s) {
                return Err(Error::InvalidScenario(format!(
                    "bias policy touches sensor {s} outside the compromised set"
                )));
            }
        }
        match &self.bias_policy {
            BiasPolicy::Constant { sensors, values }
            | BiasPolicy::PinnedAverage { sensors, values } => {
                if sensors.len() != values.len() {
                    return Err(Error::InvalidScenario(
                        "bias policy sensors and values differ in length".into(),
                    ));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidScenario(
                        "bias policy values must be finite".into(),
                    ));
                }
            }
            BiasPolicy::Sequence { sensors, values } => {
                if values.len() < self.horizon {
                    return Err(Error::InvalidScenario(format!(
                        "bias sequence has {} steps, horizon needs {}",
                        values.len(),
                        self.horizon
                    )));
                }
                for row in values {
                    if row.len() != sensors.len() {
                        return Err(Error::InvalidScenario(
                            "bias sequence row length does not match its sensors".into(),
                        ));
                    }
                    if row.iter().any(|v| !v.is_finite()) {
                        return Err(Error::InvalidScenario(
                            "bias policy values must be finite".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// RNG seeded for one scenario.
pub fn scenario_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// RNG for one Monte Carlo unit: same seed, separate stream per index, so
/// trials stay independent and reproducible no matter how work is scheduled.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draw a measurement block for the scenario: Gaussian sensor noise plus the
/// scenario's injected biases.
///
/// Noise is drawn for every sensor and time step, compromised sensors
/// included, so the benign part of the draw sequence does not depend on the
/// attack. Pinning overwrites the drawn values afterwards.
pub fn synthesize<R: Rng + ?Sized>(
    model: &SensorModel,
    scenario: &AttackScenario,
    rng: &mut R,
) -> Result<MeasurementBlock> {
    scenario.validate(model)?;
    let m = model.m();
    let k = scenario.horizon;
    let clean = model.clean(&scenario.x_true);
    let sd: Vec<f64> = model.w().iter().map(|w| w.sqrt()).collect();

    let mut data = DMatrix::zeros(m, k);
    for t in 0..k {
        for i in 0..m {
            let noise: f64 = rng.sample(StandardNormal);
            data[(i, t)] = clean[i] + sd[i] * noise;
        }
    }

    match &scenario.bias_policy {
        BiasPolicy::Constant { sensors, values } => {
            for (&s, &v) in sensors.iter().zip(values) {
                for t in 0..k {
                    data[(s, t)] += v;
                }
            }
        }
        BiasPolicy::Sequence { sensors, values } => {
            for t in 0..k {
                for (j, &s) in sensors.iter().enumerate() {
                    data[(s, t)] += values[t][j];
                }
            }
        }
        BiasPolicy::PinnedAverage { sensors, values } => {
            for (&s, &v) in sensors.iter().zip(values) {
                for t in 0..k {
                    data[(s, t)] = v;
                }
            }
        }
    }

    MeasurementBlock::new(data)
}
