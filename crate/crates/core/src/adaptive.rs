//! Adaptive location-set estimation under a memory budget.
//!
//! Each scenario step runs in five phases: a plain filter update with the
//! measurements taken on locations already in the set, a sequential
//! expansion for every newly visited location (prior extension followed by a
//! rank-one correction with its measurement), a contraction while the set
//! exceeds capacity, and finally a state reconstruction that maps the
//! retained field statistics back to a full state belief through a static
//! virtual measurement. When a step leaves the location set untouched the
//! reconstruction is skipped and the engine behaves exactly like the plain
//! streaming filter.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::audit;
use crate::error::{Error, Result};
use crate::filter::{MeasurementBatch, StreamingFilter};
use crate::representer::SpatialQuery;
use crate::statespace::{JointModel, LocationSet};

/// Which location to discard when the set exceeds capacity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DiscardPolicy {
    /// Drop the location whose most recent measurement is oldest; locations
    /// never measured count as oldest of all, ties break toward the lowest
    /// index.
    #[default]
    OldestFirst,
}

/// Relative eigenvalue floor applied to the precision difference when the
/// virtual-measurement system is numerically indefinite.
const PRECISION_FLOOR: f64 = 1e-10;

/// One visit in an adaptive scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct VisitRecord {
    pub point: Vec<f64>,
    pub value: f64,
    pub noise_sd: f64,
    /// Marks a location that is not yet part of the set and must be added.
    pub is_new: bool,
}

/// All visits sharing one time instant.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioStep {
    pub time: f64,
    pub visits: Vec<VisitRecord>,
}

/// Diagnostics of one adaptive step.
#[derive(Clone, Copy, Debug, Default)]
pub struct AdaptiveStepReport {
    /// Locations added this step.
    pub expanded: usize,
    /// Locations discarded this step.
    pub dropped: usize,
    /// Eigenvalues floored while inverting the virtual-measurement system; a
    /// nonzero count signals a regularized reconstruction.
    pub floored_eigenvalues: usize,
}

/// Reconstructed state statistics consistent with given field statistics.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub state_mean: DVector<f64>,
    pub state_cov: DMatrix<f64>,
    /// Number of floored eigenvalues in the precision difference.
    pub floored_eigenvalues: usize,
}

/// Recovers state statistics from field statistics by positing a single
/// static virtual measurement of the whole field that would have produced
/// them from the stationary prior.
///
/// With `D = (field_cov)^{-1} - (prior_f)^{-1}`, the posterior information
/// carried by the virtual measurement enters only through `D - D field_cov D`,
/// which stays finite (and vanishes) in the no-information limit, so the
/// virtual noise covariance itself is never formed.
pub fn reconstruct_state(
    model: &JointModel,
    field_mean: &DVector<f64>,
    field_cov: &DMatrix<f64>,
) -> Result<Reconstruction> {
    let m = model.num_locations();
    if field_mean.len() != m || field_cov.nrows() != m || field_cov.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "field statistics of size {} / {}x{} for {m} locations",
            field_mean.len(),
            field_cov.nrows(),
            field_cov.ncols()
        )));
    }
    let (_, prior_state) = model.stationary_prior();
    let zero = DVector::zeros(model.state_dim());
    let (_, prior_field) = model.output_estimate(&zero, &prior_state);

    let prior_chol = prior_field.clone().cholesky().ok_or_else(|| {
        Error::Conditioning("stationary field prior is not positive definite".into())
    })?;
    let field_chol = field_cov.clone().cholesky().ok_or_else(|| {
        Error::Conditioning("field covariance is not positive definite".into())
    })?;

    let mut precision_gap = field_chol.inverse() - prior_chol.inverse();
    audit::symmetrize(&mut precision_gap);

    // The gap is PSD for any optimal posterior; rounding or suboptimal
    // statistics can push eigenvalues slightly negative, so floor them.
    let floor = PRECISION_FLOOR * precision_gap.trace().max(0.0);
    let eig = precision_gap.clone().symmetric_eigen();
    let floored_eigenvalues = eig.eigenvalues.iter().filter(|&&v| v < floor).count();
    let gap = if floored_eigenvalues > 0 {
        let values = eig.eigenvalues.map(|v| v.max(floor));
        let mut rebuilt =
            &eig.eigenvectors * DMatrix::from_diagonal(&values) * eig.eigenvectors.transpose();
        audit::symmetrize(&mut rebuilt);
        rebuilt
    } else {
        precision_gap
    };

    let mut information = &gap - &gap * field_cov * &gap;
    audit::symmetrize(&mut information);

    let cross = &prior_state * model.output_map().transpose();
    let state_mean = &cross * prior_chol.solve(field_mean);
    let mut state_cov = &prior_state - &cross * information * cross.transpose();
    audit::symmetrize(&mut state_cov);

    Ok(Reconstruction { state_mean, state_cov, floored_eigenvalues })
}

/// Streaming estimator that grows and shrinks its location set on the fly.
#[derive(Clone, Debug)]
pub struct AdaptiveEstimator {
    filter: StreamingFilter,
    capacity: usize,
    policy: DiscardPolicy,
    /// Time of the latest measurement per location; never-measured locations
    /// carry negative infinity.
    last_visit: Vec<f64>,
    field_mean: DVector<f64>,
    field_cov: DMatrix<f64>,
}

impl AdaptiveEstimator {
    pub fn new(
        model: Arc<JointModel>,
        capacity: usize,
        policy: DiscardPolicy,
        start_time: f64,
    ) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidInput("capacity must be at least one location".into()));
        }
        if model.num_locations() > capacity {
            return Err(Error::InvalidInput(format!(
                "initial set of {} locations exceeds capacity {capacity}",
                model.num_locations()
            )));
        }
        let last_visit = vec![f64::NEG_INFINITY; model.num_locations()];
        let filter = StreamingFilter::new(model, start_time)?;
        let (field_mean, field_cov) = filter.output();
        Ok(Self { filter, capacity, policy, last_visit, field_mean, field_cov })
    }

    pub fn filter(&self) -> &StreamingFilter {
        &self.filter
    }

    pub fn model(&self) -> &Arc<JointModel> {
        self.filter.model()
    }

    pub fn locations(&self) -> &[Vec<f64>] {
        self.filter.model().locations().points()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Field statistics after the latest step.
    pub fn field_estimate(&self) -> (&DVector<f64>, &DMatrix<f64>) {
        (&self.field_mean, &self.field_cov)
    }

    /// Processes one scenario step: update on known locations, expansion per
    /// new location, contraction to capacity, state reconstruction.
    pub fn step(&mut self, step: &ScenarioStep) -> Result<AdaptiveStepReport> {
        let mut old_active = Vec::new();
        let mut old_values = Vec::new();
        let mut old_variances = Vec::new();
        let mut new_visits = Vec::new();
        for visit in &step.visits {
            let known = self.filter.model().locations().index_of(&visit.point);
            match (visit.is_new, known) {
                (true, Some(i)) => {
                    return Err(Error::DuplicateLocation(format!(
                        "visit marked new but location already present at index {i}"
                    )));
                }
                (true, None) => new_visits.push(visit),
                (false, None) => {
                    return Err(Error::InvalidInput(
                        "visit marked known but location is not in the set".into(),
                    ));
                }
                (false, Some(i)) => {
                    old_active.push(i);
                    old_values.push(visit.value);
                    old_variances.push(visit.noise_sd * visit.noise_sd);
                }
            }
        }
        for pair in new_visits.windows(2) {
            if pair[0].point == pair[1].point {
                return Err(Error::DuplicateLocation(
                    "the same new location appears twice in one step".into(),
                ));
            }
        }

        if step.time < self.filter.state().time {
            return Err(Error::TimeOrder(format!(
                "step at {} precedes estimator time {}",
                step.time,
                self.filter.state().time
            )));
        }
        // With no on-grid measurements the canonical state is left alone, as
        // the plain filter does for query times: field statistics come from
        // an open-loop look on a copy. Expansion steps below replace the
        // state at this step's time anyway.
        let (mut mean, mut cov) = if old_active.is_empty() {
            if self.filter.state().updates == 0 {
                self.filter.output()
            } else {
                let peek = self.filter.predicted_state(step.time)?;
                self.filter.model().output_estimate(&peek.mean, &peek.cov)
            }
        } else {
            let indices = old_active.clone();
            let batch = MeasurementBatch::new(step.time, old_active, old_values, old_variances)?;
            self.filter.update(&batch)?;
            for i in indices {
                self.last_visit[i] = step.time;
            }
            self.filter.output()
        };

        let mut model = Arc::clone(self.filter.model());
        let mut points = model.locations().points().to_vec();
        let expanded = new_visits.len();
        for visit in new_visits {
            if !visit.value.is_finite() {
                return Err(Error::InvalidInput("measurement value is not finite".into()));
            }
            let variance = visit.noise_sd * visit.noise_sd;
            if !(variance.is_finite() && variance > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "noise deviation must be positive and finite, got {}",
                    visit.noise_sd
                )));
            }
            let query = SpatialQuery::new(&model, vec![visit.point.clone()])?;
            let prior_mean = query.extend_estimate(&mean)?[0];
            let joint = query.joint_covariance(&cov, 0)?;
            let m = mean.len();
            let mut augmented = DVector::zeros(m + 1);
            augmented.rows_mut(0, m).copy_from(&mean);
            augmented[m] = prior_mean;

            // Rank-one correction with the unit output row on the new entry,
            // in Joseph form.
            let innovation_var = joint[(m, m)] + variance;
            let gain = joint.column(m) / innovation_var;
            mean = &augmented + &gain * (visit.value - prior_mean);
            let mut shrink = DMatrix::<f64>::identity(m + 1, m + 1);
            shrink.column_mut(m).axpy(-1.0, &gain, 1.0);
            let mut updated = &shrink * joint * shrink.transpose();
            updated.ger(variance, &gain, &gain, 1.0);
            audit::symmetrize(&mut updated);
            cov = updated;

            points.push(visit.point.clone());
            self.last_visit.push(step.time);
            model = rebuild(&model, points.clone())?;
        }

        let mut dropped = 0;
        while points.len() > self.capacity {
            let drop = match self.policy {
                DiscardPolicy::OldestFirst => {
                    let mut best = 0;
                    for i in 1..self.last_visit.len() {
                        if self.last_visit[i] < self.last_visit[best] {
                            best = i;
                        }
                    }
                    best
                }
            };
            points.remove(drop);
            self.last_visit.remove(drop);
            mean = mean.remove_row(drop);
            cov = cov.remove_row(drop).remove_column(drop);
            model = rebuild(&model, points.clone())?;
            dropped += 1;
        }

        let mut floored_eigenvalues = 0;
        if expanded > 0 || dropped > 0 {
            let reconstruction = reconstruct_state(&model, &mean, &cov)?;
            floored_eigenvalues = reconstruction.floored_eigenvalues;
            let mut replacement = StreamingFilter::new(model, step.time)?;
            let state = replacement.state_mut();
            state.mean = reconstruction.state_mean;
            state.cov = reconstruction.state_cov;
            state.nll = self.filter.state().nll;
            state.updates = self.filter.state().updates;
            self.filter = replacement;
        }

        self.field_mean = mean;
        self.field_cov = cov;
        Ok(AdaptiveStepReport { expanded, dropped, floored_eigenvalues })
    }
}

fn rebuild(model: &JointModel, points: Vec<Vec<f64>>) -> Result<Arc<JointModel>> {
    let set = LocationSet::build(
        points,
        model.locations().kernel(),
        model.locations().root_method(),
    )?;
    Ok(Arc::new(JointModel::new(set, model.realization().clone())))
}

/// One emitted point of an adaptive trajectory.
#[derive(Clone, Debug)]
pub struct AdaptiveTrajectoryPoint {
    pub time: f64,
    /// Location set after the step, in set order.
    pub locations: Vec<Vec<f64>>,
    /// Field estimate over `locations`.
    pub mean: DVector<f64>,
    /// Field covariance over `locations`.
    pub cov: DMatrix<f64>,
    /// Negative log marginal likelihood accumulated by the filter updates
    /// (expansion corrections do not contribute).
    pub nll: f64,
    pub report: AdaptiveStepReport,
    /// New-location visits ignored because the set was frozen.
    pub skipped_new: usize,
}

/// Replays a scenario under a location budget. From `freeze_time` on, visits
/// marked new are skipped (and counted) instead of expanding the set, so the
/// estimator behaves as a plain filter on the frozen set.
pub fn run_adaptive(
    model: Arc<JointModel>,
    scenario: &[ScenarioStep],
    capacity: usize,
    policy: DiscardPolicy,
    freeze_time: Option<f64>,
) -> Result<Vec<AdaptiveTrajectoryPoint>> {
    for pair in scenario.windows(2) {
        if !(pair[0].time < pair[1].time) {
            return Err(Error::TimeOrder(format!(
                "scenario times must be strictly increasing, got {} then {}",
                pair[0].time, pair[1].time
            )));
        }
    }
    let start = scenario.first().map(|s| s.time).unwrap_or(0.0);
    let mut estimator = AdaptiveEstimator::new(model, capacity, policy, start)?;
    let mut out = Vec::with_capacity(scenario.len());
    for step in scenario {
        let mut visits = step.visits.clone();
        let mut skipped_new = 0;
        if freeze_time.is_some_and(|t| step.time >= t) {
            let before = visits.len();
            visits.retain(|v| !v.is_new);
            skipped_new = before - visits.len();
        }
        let report = estimator.step(&ScenarioStep { time: step.time, visits })?;
        let (mean, cov) = estimator.field_estimate();
        out.push(AdaptiveTrajectoryPoint {
            time: step.time,
            locations: estimator.locations().to_vec(),
            mean: mean.clone(),
            cov: cov.clone(),
            nll: estimator.filter().state().nll,
            report,
            skipped_new,
        });
    }
    Ok(out)
}
