//! Versioned experiment configuration.
//!
//! A single JSON document drives data generation, filter runs, adaptive
//! runs, baselines, and hyperparameter sweeps. Unknown keys are rejected so
//! typos fail loudly, and the schema carries a version number so old
//! configs either parse or fail with a clear message.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::NoiseModel;
use crate::error::{Error, Result};
use crate::kernel::SeparableKernel;
use crate::rng::substream;
use crate::statespace::RootMethod;

/// Schema version this build reads and writes.
pub const CONFIG_VERSION: u32 = 1;

/// Monitored locations: given outright or drawn from a generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LocationSpec {
    /// Use these points verbatim.
    Explicit { points: Vec<Vec<f64>> },
    /// `count` evenly spaced points on `[start, end]`.
    Grid1d { count: usize, start: f64, end: f64 },
    /// `count` points drawn uniformly on `[start, end]`, sorted. The draw
    /// comes from the run seed's `locations` substream.
    Uniform1d { count: usize, start: f64, end: f64 },
}

impl LocationSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            LocationSpec::Explicit { points } => {
                if points.is_empty() {
                    return Err(Error::Config("explicit location list is empty".into()));
                }
                let dim = points[0].len();
                for (i, p) in points.iter().enumerate() {
                    if p.len() != dim || p.is_empty() {
                        return Err(Error::Config(format!(
                            "location {i} has dimension {}, expected {}",
                            p.len(),
                            dim.max(1)
                        )));
                    }
                    if p.iter().any(|c| !c.is_finite()) {
                        return Err(Error::Config(format!("location {i} is not finite")));
                    }
                }
                Ok(())
            }
            LocationSpec::Grid1d { count, start, end }
            | LocationSpec::Uniform1d { count, start, end } => {
                if *count == 0 {
                    return Err(Error::Config("location generator needs count >= 1".into()));
                }
                if !(start.is_finite() && end.is_finite() && start < end) {
                    return Err(Error::Config(format!(
                        "location interval [{start}, {end}] must be finite and increasing"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Materializes the location list. Deterministic given the seed.
    pub fn build(&self, seed: u64) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        Ok(match self {
            LocationSpec::Explicit { points } => points.clone(),
            LocationSpec::Grid1d { count, start, end } => {
                if *count == 1 {
                    vec![vec![*start]]
                } else {
                    (0..*count)
                        .map(|i| {
                            vec![start + (end - start) * i as f64 / (*count as f64 - 1.0)]
                        })
                        .collect()
                }
            }
            LocationSpec::Uniform1d { count, start, end } => {
                let mut rng = substream(seed, "locations");
                let mut xs: Vec<f64> =
                    (0..*count).map(|_| rng.gen_range(*start..*end)).collect();
                xs.sort_by(|a, b| a.total_cmp(b));
                xs.into_iter().map(|x| vec![x]).collect()
            }
        })
    }
}

/// Uniform sampling schedule: batches at `start + step * k` for
/// `k = 1..=count`. A zero count means no measurements at all.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(default)]
    pub start: f64,
    pub step: f64,
    pub count: usize,
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.start.is_finite() {
            return Err(Error::Config(format!("schedule start must be finite, got {}", self.start)));
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::Config(format!(
                "schedule step must be positive and finite, got {}",
                self.step
            )));
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        (1..=self.count).map(|k| self.start + self.step * k as f64).collect()
    }
}

/// How the temporal kernel becomes a state-space realization.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RealizationSpec {
    /// Closed-form realization; fails for kernels without one.
    #[default]
    Exact,
    /// Rational spectral-density fit of the given order.
    Approximate {
        order: usize,
        #[serde(default = "default_grid_points")]
        grid_points: usize,
    },
}

fn default_grid_points() -> usize {
    crate::spectral::fit::DEFAULT_GRID_POINTS
}

impl RealizationSpec {
    pub fn validate(&self) -> Result<()> {
        if let RealizationSpec::Approximate { order, grid_points } = self {
            if *order == 0 {
                return Err(Error::Config("approximation order must be >= 1".into()));
            }
            if *grid_points < 8 {
                return Err(Error::Config(format!(
                    "spectral fit needs at least 8 grid points, got {grid_points}"
                )));
            }
        }
        Ok(())
    }
}

/// Off-grid evaluation requests attached to a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySpec {
    #[serde(default)]
    pub points: Vec<Vec<f64>>,
    #[serde(default)]
    pub times: Vec<f64>,
}

impl QuerySpec {
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if p.is_empty() || p.iter().any(|c| !c.is_finite()) {
                return Err(Error::Config(format!("query point {i} is empty or not finite")));
            }
        }
        if self.times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Config("query times must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Filter,
    Adaptive,
    Baseline,
    Sweep,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "filter" => Ok(Mode::Filter),
            "adaptive" => Ok(Mode::Adaptive),
            "baseline" => Ok(Mode::Baseline),
            "sweep" => Ok(Mode::Sweep),
            other => Err(Error::Config(format!(
                "unknown mode {other:?}; expected filter, adaptive, baseline, or sweep"
            ))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Filter => "filter",
            Mode::Adaptive => "adaptive",
            Mode::Baseline => "baseline",
            Mode::Sweep => "sweep",
        })
    }
}

/// Settings for adaptive-set runs and scenario generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveSpec {
    /// Maximum number of locations kept in the model.
    pub capacity: usize,
    /// Stop admitting new locations at this time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freeze_time: Option<f64>,
    /// Candidate pool for scenario generation; defaults to the run's
    /// location spec.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<LocationSpec>,
    /// Measurements per scenario step (generation only).
    #[serde(default = "default_visits_per_step")]
    pub visits_per_step: usize,
}

fn default_visits_per_step() -> usize {
    1
}

impl AdaptiveSpec {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::Config("adaptive capacity must be >= 1".into()));
        }
        if self.visits_per_step == 0 {
            return Err(Error::Config("visits_per_step must be >= 1".into()));
        }
        if let Some(t) = self.freeze_time {
            if !t.is_finite() {
                return Err(Error::Config(format!("freeze_time must be finite, got {t}")));
            }
        }
        if let Some(c) = &self.candidates {
            c.validate()?;
        }
        Ok(())
    }
}

/// Settings for the sliding-window batch baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSpec {
    /// Number of most recent time steps the window retains.
    pub buffer: usize,
}

impl BaselineSpec {
    pub fn validate(&self) -> Result<()> {
        if self.buffer == 0 {
            return Err(Error::Config("baseline buffer must be >= 1".into()));
        }
        Ok(())
    }
}

/// Hyperparameter grid for negative-log-likelihood sweeps. Empty axes fall
/// back to the configured kernel's value, so an all-empty sweep evaluates a
/// single point.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub spatial_length_scales: Vec<f64>,
    #[serde(default)]
    pub temporal_scales: Vec<f64>,
    #[serde(default)]
    pub temporal_decays: Vec<f64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let axes = [
            ("spatial_length_scales", &self.spatial_length_scales),
            ("temporal_scales", &self.temporal_scales),
            ("temporal_decays", &self.temporal_decays),
        ];
        for (name, axis) in axes {
            if axis.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::Config(format!(
                    "sweep axis {name} must contain positive finite values"
                )));
            }
        }
        Ok(())
    }
}

/// Everything one run needs, in one document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Schema version; must equal [`CONFIG_VERSION`].
    pub version: u32,
    pub kernel: SeparableKernel,
    pub locations: LocationSpec,
    pub schedule: ScheduleSpec,
    pub noise: NoiseModel,
    #[serde(default)]
    pub realization: RealizationSpec,
    #[serde(default)]
    pub queries: QuerySpec,
    pub mode: Mode,
    pub seed: u64,
    #[serde(default)]
    pub root_method: RootMethod,
    /// Dataset (or scenario) path for `run`; defaults to the output
    /// directory's generated files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    /// Output directory; the `--out` flag takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adaptive: Option<AdaptiveSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

impl ExperimentConfig {
    /// Full structural validation. Mode-specific sections are required for
    /// their mode and ignored otherwise.
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} unsupported; this build reads version {CONFIG_VERSION}",
                self.version
            )));
        }
        self.kernel.validate()?;
        self.locations.validate()?;
        self.schedule.validate()?;
        self.noise.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.realization.validate()?;
        self.queries.validate()?;
        match self.mode {
            Mode::Adaptive => {
                let spec = self
                    .adaptive
                    .as_ref()
                    .ok_or_else(|| Error::Config("adaptive mode needs an `adaptive` section".into()))?;
                spec.validate()?;
            }
            Mode::Baseline => {
                let spec = self
                    .baseline
                    .as_ref()
                    .ok_or_else(|| Error::Config("baseline mode needs a `baseline` section".into()))?;
                spec.validate()?;
            }
            Mode::Sweep => {
                let spec = self
                    .sweep
                    .as_ref()
                    .ok_or_else(|| Error::Config("sweep mode needs a `sweep` section".into()))?;
                spec.validate()?;
            }
            Mode::Filter => {}
        }
        Ok(())
    }

    /// Parses and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// Writes the config as pretty-printed JSON.
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("config serialization failed: {e}")))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}
