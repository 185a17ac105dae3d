//! Streaming Kalman recursion over the joint state-space model.
//!
//! The filter carries the joint state for all model locations and processes
//! measurement batches in time order. Between batches the state evolves in
//! open loop (including the process-noise term), while updates apply the
//! Joseph-stabilized correction and accumulate the negative log marginal
//! likelihood of the innovations. Open-loop looks at future times are taken
//! on copies so the canonical state only ever advances at batch times.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::audit;
use crate::baseline::Dataset;
use crate::error::{Error, Result};
use crate::statespace::{discretize_block, kron_add_block_diag, kron_apply, kron_sandwich, JointModel, LocationSet};

/// One batch of noisy field observations taken at a common time.
///
/// Entries are kept sorted by location index; values and noise variances are
/// permuted alongside during construction.
#[derive(Clone, Debug)]
pub struct MeasurementBatch {
    time: f64,
    active: Vec<usize>,
    values: DVector<f64>,
    noise_variances: DVector<f64>,
}

impl MeasurementBatch {
    /// Validates and sorts a batch. Active indices must be unique, values
    /// finite, and noise variances positive and finite.
    pub fn new(
        time: f64,
        active: Vec<usize>,
        values: Vec<f64>,
        noise_variances: Vec<f64>,
    ) -> Result<Self> {
        if !time.is_finite() {
            return Err(Error::InvalidInput(format!("batch time must be finite, got {time}")));
        }
        if active.is_empty() {
            return Err(Error::InvalidInput("measurement batch is empty".into()));
        }
        if active.len() != values.len() || active.len() != noise_variances.len() {
            return Err(Error::DimensionMismatch(format!(
                "batch has {} indices, {} values, {} noise variances",
                active.len(),
                values.len(),
                noise_variances.len()
            )));
        }
        let mut entries: Vec<(usize, f64, f64)> = active
            .into_iter()
            .zip(values)
            .zip(noise_variances)
            .map(|((i, y), v)| (i, y, v))
            .collect();
        entries.sort_by_key(|e| e.0);
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::DuplicateLocation(format!(
                    "location index {} observed twice in one batch",
                    pair[0].0
                )));
            }
        }
        for &(i, y, v) in &entries {
            if !y.is_finite() {
                return Err(Error::InvalidInput(format!("value at index {i} is not finite")));
            }
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "noise variance at index {i} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(Self {
            time,
            active: entries.iter().map(|e| e.0).collect(),
            values: DVector::from_iterator(entries.len(), entries.iter().map(|e| e.1)),
            noise_variances: DVector::from_iterator(entries.len(), entries.iter().map(|e| e.2)),
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Observed location indices, strictly increasing.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn noise_variances(&self) -> &DVector<f64> {
        &self.noise_variances
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }
}

/// Gaussian state belief at a point in time, together with the running
/// negative log marginal likelihood of everything absorbed so far.
///
/// Fields are public because downstream consumers (the adaptive location-set
/// logic in particular) rebuild states wholesale; keep `cov` symmetric when
/// replacing it.
#[derive(Clone, Debug)]
pub struct FilterState {
    pub time: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub nll: f64,
    pub updates: usize,
}

/// Diagnostics of a single measurement update.
#[derive(Clone, Debug)]
pub struct UpdateDiagnostics {
    /// Innovation `y - C s_pred`.
    pub innovation: DVector<f64>,
    /// Kalman gain used for the correction.
    pub gain: DMatrix<f64>,
    /// Contribution of this batch to the negative log marginal likelihood.
    pub nll_increment: f64,
}

/// Kalman filter bound to one joint model.
#[derive(Clone, Debug)]
pub struct StreamingFilter {
    model: Arc<JointModel>,
    state: FilterState,
}

impl StreamingFilter {
    /// Starts a filter at the stationary prior.
    pub fn new(model: Arc<JointModel>, start_time: f64) -> Result<Self> {
        if !start_time.is_finite() {
            return Err(Error::InvalidInput(format!(
                "filter start time must be finite, got {start_time}"
            )));
        }
        let (mean, cov) = model.stationary_prior();
        Ok(Self {
            model,
            state: FilterState { time: start_time, mean, cov, nll: 0.0, updates: 0 },
        })
    }

    pub fn model(&self) -> &Arc<JointModel> {
        &self.model
    }

    pub fn state(&self) -> &FilterState {
        &self.state
    }

    /// Mutable access for consumers that rebuild the state in place.
    pub fn state_mut(&mut self) -> &mut FilterState {
        &mut self.state
    }

    /// Advances the canonical state in open loop to `time`.
    pub fn predict_to(&mut self, time: f64) -> Result<()> {
        let step = time - self.state.time;
        if !(step.is_finite() && step >= 0.0) {
            return Err(Error::TimeOrder(format!(
                "cannot predict from {} back to {time}",
                self.state.time
            )));
        }
        if step == 0.0 {
            return Ok(());
        }
        let (transition, noise) = discretize_block(self.model.realization(), step)?;
        let m = self.model.num_locations();
        self.state.mean = kron_apply(&transition, &self.state.mean, m);
        let mut cov = kron_sandwich(&transition, &self.state.cov, m);
        kron_add_block_diag(&mut cov, &noise, m);
        audit::symmetrize(&mut cov);
        self.state.cov = cov;
        self.state.time = time;
        Ok(())
    }

    /// Open-loop belief at a (non-past) time, computed on a copy; the
    /// canonical state is untouched.
    pub fn predicted_state(&self, time: f64) -> Result<FilterState> {
        let mut scratch = self.clone();
        scratch.predict_to(time)?;
        Ok(scratch.state)
    }

    /// Predicts to the batch time and applies the measurement correction.
    pub fn update(&mut self, batch: &MeasurementBatch) -> Result<UpdateDiagnostics> {
        if batch.time() < self.state.time {
            return Err(Error::TimeOrder(format!(
                "batch at {} precedes filter time {}",
                batch.time(),
                self.state.time
            )));
        }
        let step = batch.time() - self.state.time;
        let discrete =
            self.model.discretize(step, batch.active(), batch.noise_variances().as_slice())?;
        let m = self.model.num_locations();

        let mean = kron_apply(&discrete.transition_block, &self.state.mean, m);
        let mut cov = kron_sandwich(&discrete.transition_block, &self.state.cov, m);
        kron_add_block_diag(&mut cov, &discrete.noise_block, m);
        audit::symmetrize(&mut cov);

        let c = &discrete.output_rows;
        let innovation = batch.values() - c * &mean;
        let mut innovation_cov = c * &cov * c.transpose();
        for (k, &v) in discrete.noise_variances.iter().enumerate() {
            innovation_cov[(k, k)] += v;
        }
        audit::symmetrize(&mut innovation_cov);
        let chol = Cholesky::new(innovation_cov).ok_or_else(|| {
            Error::Conditioning("innovation covariance is not positive definite".into())
        })?;

        // Gain P C' S^{-1} through the factorization, never an explicit inverse.
        let gain = chol.solve(&(c * &cov)).transpose();

        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let quad = innovation.dot(&chol.solve(&innovation));
        let mk = batch.len() as f64;
        let nll_increment =
            0.5 * (mk * (2.0 * std::f64::consts::PI).ln() + log_det + quad);

        let n = self.model.state_dim();
        let joseph = DMatrix::<f64>::identity(n, n) - &gain * c;
        let mut new_cov = &joseph * cov * joseph.transpose();
        for (k, &v) in discrete.noise_variances.iter().enumerate() {
            let col = gain.column(k);
            new_cov.ger(v, &col, &col, 1.0);
        }
        audit::symmetrize(&mut new_cov);

        self.state.mean = mean + &gain * &innovation;
        self.state.cov = new_cov;
        self.state.time = batch.time();
        self.state.nll += nll_increment;
        self.state.updates += 1;

        Ok(UpdateDiagnostics { innovation, gain, nll_increment })
    }

    /// Field estimate and covariance implied by the current state.
    pub fn output(&self) -> (DVector<f64>, DMatrix<f64>) {
        self.model.output_estimate(&self.state.mean, &self.state.cov)
    }
}

/// One emitted point of a filtered trajectory, at field level.
#[derive(Clone, Debug)]
pub struct TrajectoryPoint {
    pub time: f64,
    /// True when the point reflects a measurement update at this time; false
    /// for open-loop query emissions.
    pub is_update: bool,
    /// Field posterior mean over all model locations.
    pub mean: DVector<f64>,
    /// Field posterior covariance over all model locations.
    pub cov: DMatrix<f64>,
    /// Negative log marginal likelihood accumulated so far.
    pub nll: f64,
}

fn peek_point(filter: &StreamingFilter, time: f64) -> Result<TrajectoryPoint> {
    // Before any data is absorbed the belief at every time is the stationary
    // prior; report it directly so query times never touch the discretization
    // sequence of the canonical chain.
    if filter.state().updates == 0 {
        let (mean, cov) = filter.output();
        return Ok(TrajectoryPoint { time, is_update: false, mean, cov, nll: filter.state().nll });
    }
    let peek = filter.predicted_state(time)?;
    let (mean, cov) = filter.model().output_estimate(&peek.mean, &peek.cov);
    Ok(TrajectoryPoint { time, is_update: false, mean, cov, nll: peek.nll })
}

/// Runs a full stream: batches must be strictly increasing in time, and one
/// trajectory point is emitted per batch and per query time. Query times at
/// or after a batch time reflect the posterior of that batch; earlier ones
/// are open-loop predictions taken on copies.
pub fn run_stream(
    model: Arc<JointModel>,
    batches: &[MeasurementBatch],
    query_times: &[f64],
) -> Result<Vec<TrajectoryPoint>> {
    for pair in batches.windows(2) {
        if !(pair[0].time() < pair[1].time()) {
            return Err(Error::TimeOrder(format!(
                "batch times must be strictly increasing, got {} then {}",
                pair[0].time(),
                pair[1].time()
            )));
        }
    }
    let mut queries = query_times.to_vec();
    for &q in &queries {
        if !q.is_finite() {
            return Err(Error::InvalidInput(format!("query time must be finite, got {q}")));
        }
    }
    queries.sort_by(f64::total_cmp);

    // Anchor the canonical chain at the first batch so query times cannot
    // alter its discretization steps; the prior is stationary, so earlier
    // query times still report the exact prior belief.
    let start = batches
        .first()
        .map(MeasurementBatch::time)
        .or_else(|| queries.first().copied())
        .unwrap_or(0.0);

    let mut filter = StreamingFilter::new(model, start)?;
    let mut out = Vec::with_capacity(batches.len() + queries.len());
    let mut qi = 0;
    for batch in batches {
        while qi < queries.len() && queries[qi] < batch.time() {
            out.push(peek_point(&filter, queries[qi])?);
            qi += 1;
        }
        filter.update(batch)?;
        let (mean, cov) = filter.output();
        out.push(TrajectoryPoint {
            time: batch.time(),
            is_update: true,
            mean,
            cov,
            nll: filter.state().nll,
        });
        while qi < queries.len() && queries[qi] == batch.time() {
            out.push(peek_point(&filter, queries[qi])?);
            qi += 1;
        }
    }
    while qi < queries.len() {
        out.push(peek_point(&filter, queries[qi])?);
        qi += 1;
    }
    Ok(out)
}

/// Groups dataset records into per-time measurement batches, mapping each
/// record location to its index in the model's location set.
pub fn batches_from_dataset(
    dataset: &Dataset,
    locations: &LocationSet,
) -> Result<Vec<MeasurementBatch>> {
    let steps = dataset.time_steps()?;
    let mut batches = Vec::with_capacity(steps.len());
    for &t in &steps {
        let mut active = Vec::new();
        let mut values = Vec::new();
        let mut variances = Vec::new();
        for r in dataset.records().iter().filter(|r| r.time == t) {
            let idx = locations.index_of(&r.point).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "record at time {t} observes a location outside the model set"
                ))
            })?;
            active.push(idx);
            values.push(r.value);
            variances.push(r.noise_sd * r.noise_sd);
        }
        batches.push(MeasurementBatch::new(t, active, values, variances)?);
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::{batch_nll, sample_on_grid, BatchGp, NoiseModel, Record};
    use crate::kernel::{SeparableKernel, SpatialKernel, TemporalKernel};
    use crate::spectral::{factorize, realize};
    use crate::statespace::RootMethod;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn model(points: &[Vec<f64>], kernel: &SeparableKernel) -> Arc<JointModel> {
        let set = LocationSet::build(
            points.to_vec(),
            &kernel.spatial,
            RootMethod::SymmetricEigen,
        )
        .unwrap();
        let realization = realize(&factorize(&kernel.temporal).unwrap()).unwrap();
        Arc::new(JointModel::new(set, realization))
    }

    fn exp_kernel(scale: f64, decay: f64) -> SeparableKernel {
        SeparableKernel {
            spatial: SpatialKernel::SquaredExponential { length_scale: 1.5, amplitude: 1.0 },
            temporal: TemporalKernel::Exponential { scale, decay },
        }
    }

    #[test]
    fn zero_step_prediction_is_identity() {
        let m = model(&[vec![0.0], vec![1.0]], &exp_kernel(1.0, 1.0));
        let mut filter = StreamingFilter::new(m, 2.0).unwrap();
        let before = filter.state().clone();
        filter.predict_to(2.0).unwrap();
        assert_eq!(filter.state().mean, before.mean);
        assert_eq!(filter.state().cov, before.cov);
        assert_eq!(filter.state().time, before.time);
    }

    #[test]
    fn prediction_rejects_past_times() {
        let m = model(&[vec![0.0]], &exp_kernel(1.0, 1.0));
        let mut filter = StreamingFilter::new(m, 1.0).unwrap();
        assert!(matches!(filter.predict_to(0.5), Err(Error::TimeOrder(_))));
    }

    #[test]
    fn stationary_prior_is_prediction_fixed_point() {
        let m = model(&[vec![0.0]], &exp_kernel(1.0, 1.0));
        let mut filter = StreamingFilter::new(m, 0.0).unwrap();
        filter.predict_to(3.7).unwrap();
        assert_abs_diff_eq!(filter.state().cov[(0, 0)], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(filter.state().mean[0], 0.0);

        let m2 = model(&[vec![0.0], vec![0.8], vec![2.5]], &exp_kernel(1.7, 0.6));
        let mut filter = StreamingFilter::new(m2.clone(), 0.0).unwrap();
        let (_, prior) = m2.stationary_prior();
        filter.predict_to(5.0).unwrap();
        assert_relative_eq!(filter.state().cov, prior, epsilon = 1e-10);
    }

    #[test]
    fn long_horizon_prediction_forgets_update() {
        let m = model(&[vec![0.0], vec![1.0]], &exp_kernel(1.3, 0.9));
        let mut filter = StreamingFilter::new(m.clone(), 0.0).unwrap();
        let batch =
            MeasurementBatch::new(0.5, vec![0, 1], vec![1.8, -0.6], vec![0.05, 0.05]).unwrap();
        filter.update(&batch).unwrap();
        filter.predict_to(0.5 + 50.0 * 0.9).unwrap();
        let (_, prior) = m.stationary_prior();
        assert_relative_eq!(filter.state().cov, prior, epsilon = 1e-6);
        assert_abs_diff_eq!(filter.state().mean.norm(), 0.0, epsilon = 1e-6);
    }

    #[test]
    fn uninformative_update_keeps_prediction() {
        let m = model(&[vec![0.0], vec![1.0]], &exp_kernel(1.0, 1.0));
        let mut filter = StreamingFilter::new(m, 0.0).unwrap();
        let predicted = filter.predicted_state(1.0).unwrap();
        let batch = MeasurementBatch::new(1.0, vec![0, 1], vec![5.0, -3.0], vec![1e12, 1e12])
            .unwrap();
        filter.update(&batch).unwrap();
        assert_abs_diff_eq!(filter.state().mean, predicted.mean, epsilon = 1e-6);
        assert_relative_eq!(filter.state().cov, predicted.cov, epsilon = 1e-6);
    }

    #[test]
    fn scalar_update_matches_bayes_rule() {
        let h0 = 2.0;
        let m = model(&[vec![0.4]], &exp_kernel(h0, 1.0));
        let mut filter = StreamingFilter::new(m, 0.0).unwrap();
        let (y, var) = (1.3, 0.4);
        let batch = MeasurementBatch::new(0.0, vec![0], vec![y], vec![var]).unwrap();
        filter.update(&batch).unwrap();
        let (f, fc) = filter.output();
        assert_relative_eq!(f[0], h0 * y / (h0 + var), epsilon = 1e-12);
        assert_relative_eq!(fc[(0, 0)], h0 * var / (h0 + var), epsilon = 1e-12);
    }

    #[test]
    fn nll_increment_closed_forms() {
        // Zero innovation with unit innovation covariance: scale + noise = 1.
        let m = model(&[vec![0.0]], &exp_kernel(0.3, 1.0));
        let mut filter = StreamingFilter::new(m, 0.0).unwrap();
        let batch = MeasurementBatch::new(0.0, vec![0], vec![0.0], vec![0.7]).unwrap();
        let diag = filter.update(&batch).unwrap();
        assert_abs_diff_eq!(
            diag.nll_increment,
            0.5 * (2.0 * std::f64::consts::PI).ln(),
            epsilon = 1e-12
        );

        // Innovation covariance 1/(2pi) cancels the constant exactly.
        let scale = 0.1;
        let noise = 1.0 / (2.0 * std::f64::consts::PI) - scale;
        let m = model(&[vec![0.0]], &exp_kernel(scale, 1.0));
        let mut filter = StreamingFilter::new(m, 0.0).unwrap();
        let batch = MeasurementBatch::new(0.0, vec![0], vec![0.0], vec![noise]).unwrap();
        let diag = filter.update(&batch).unwrap();
        assert_abs_diff_eq!(diag.nll_increment, 0.0, epsilon = 1e-12);
    }

    /// Sampled scenario with varying active subsets; used by the oracle tests.
    fn scenario(kernel: &SeparableKernel, seed: u64) -> (Vec<Record>, Vec<Vec<f64>>) {
        let points = vec![vec![0.0], vec![1.3], vec![2.1]];
        let times = vec![0.4, 0.9, 1.7, 2.0, 3.1];
        let active: [&[usize]; 5] = [&[0, 1, 2], &[0], &[1, 2], &[0, 2], &[1]];
        let sampled = sample_on_grid(
            kernel,
            &points,
            &times,
            &NoiseModel::Homogeneous { sd: 0.4 },
            seed,
        )
        .unwrap();
        let mut kept = Vec::new();
        for r in sampled.dataset.records() {
            let step = times.iter().position(|&t| t == r.time).unwrap();
            let loc = points.iter().position(|p| p == &r.point).unwrap();
            if active[step].contains(&loc) {
                kept.push(r.clone());
            }
        }
        (kept, points)
    }

    #[test]
    fn stream_matches_batch_oracle() {
        let kernel = exp_kernel(1.2, 0.7);
        let (records, points) = scenario(&kernel, 7);
        let dataset = Dataset::new(records).unwrap();
        let m = model(&points, &kernel);
        let batches = batches_from_dataset(&dataset, m.locations()).unwrap();
        assert_eq!(batches.len(), 5);

        let mut filter = StreamingFilter::new(m.clone(), 0.0).unwrap();
        for batch in &batches {
            // Between-sample open-loop look halfway to the batch.
            let mid = 0.5 * (filter.state().time + batch.time());
            let peek = filter.predicted_state(mid).unwrap();
            let (pf, pc) = m.output_estimate(&peek.mean, &peek.cov);
            let so_far: Vec<Record> = dataset
                .records()
                .iter()
                .filter(|r| r.time <= mid)
                .cloned()
                .collect();
            if !so_far.is_empty() {
                let gp = BatchGp::fit(&Dataset::new(so_far).unwrap(), &kernel).unwrap();
                for (i, p) in points.iter().enumerate() {
                    let (mean, var) = gp.predict(p, mid).unwrap();
                    assert_relative_eq!(pf[i], mean, epsilon = 1e-10, max_relative = 1e-8);
                    assert_relative_eq!(pc[(i, i)], var, epsilon = 1e-10, max_relative = 1e-8);
                }
            }

            filter.update(batch).unwrap();
            let (f, fc) = filter.output();
            let so_far: Vec<Record> = dataset
                .records()
                .iter()
                .filter(|r| r.time <= batch.time())
                .cloned()
                .collect();
            let so_far = Dataset::new(so_far).unwrap();
            let gp = BatchGp::fit(&so_far, &kernel).unwrap();
            for (i, p) in points.iter().enumerate() {
                let (mean, var) = gp.predict(p, batch.time()).unwrap();
                assert_relative_eq!(f[i], mean, epsilon = 1e-10, max_relative = 1e-8);
                assert_relative_eq!(fc[(i, i)], var, epsilon = 1e-10, max_relative = 1e-8);
            }
        }

        // Accumulated innovation likelihood equals the batch marginal.
        let reference = batch_nll(&dataset, &kernel).unwrap();
        assert_abs_diff_eq!(filter.state().nll, reference, epsilon = 1e-6);
    }

    #[test]
    fn stream_matches_batch_oracle_second_order() {
        let kernel = SeparableKernel {
            spatial: SpatialKernel::SquaredExponential { length_scale: 1.5, amplitude: 1.0 },
            temporal: TemporalKernel::PeriodicExponential {
                scale: 0.8,
                decay: 1.4,
                frequency: 0.35,
            },
        };
        let (records, points) = scenario(&kernel, 21);
        let dataset = Dataset::new(records).unwrap();
        let m = model(&points, &kernel);
        let batches = batches_from_dataset(&dataset, m.locations()).unwrap();

        let mut filter = StreamingFilter::new(m, 0.0).unwrap();
        for batch in &batches {
            filter.update(batch).unwrap();
            let (f, fc) = filter.output();
            let so_far: Vec<Record> = dataset
                .records()
                .iter()
                .filter(|r| r.time <= batch.time())
                .cloned()
                .collect();
            let gp = BatchGp::fit(&Dataset::new(so_far).unwrap(), &kernel).unwrap();
            for (i, p) in points.iter().enumerate() {
                let (mean, var) = gp.predict(p, batch.time()).unwrap();
                assert_relative_eq!(f[i], mean, epsilon = 1e-10, max_relative = 1e-8);
                assert_relative_eq!(fc[(i, i)], var, epsilon = 1e-10, max_relative = 1e-8);
            }
        }
        let reference = batch_nll(&dataset, &kernel).unwrap();
        assert_abs_diff_eq!(filter.state().nll, reference, epsilon = 1e-6);
    }

    #[test]
    fn gain_converges_on_uniform_schedule() {
        let m = model(&[vec![0.0], vec![1.0]], &exp_kernel(1.0, 1.0));
        let mut filter = StreamingFilter::new(m, 0.0).unwrap();
        let mut previous: Option<DMatrix<f64>> = None;
        let mut last_delta = f64::INFINITY;
        for k in 1..=60 {
            let t = 0.5 * k as f64;
            let batch = MeasurementBatch::new(
                t,
                vec![0, 1],
                vec![(0.3 * t).sin(), (0.3 * t).cos()],
                vec![0.25, 0.25],
            )
            .unwrap();
            let diag = filter.update(&batch).unwrap();
            if let Some(prev) = previous.replace(diag.gain.clone()) {
                last_delta = (diag.gain - prev).norm();
            }
        }
        assert!(last_delta <= 1e-8, "gain still moving by {last_delta}");
    }

    #[test]
    fn joseph_form_matches_short_form() {
        let m = model(&[vec![0.0], vec![0.9], vec![1.7]], &exp_kernel(1.1, 0.8));
        let mut filter = StreamingFilter::new(m.clone(), 0.0).unwrap();
        let warmup =
            MeasurementBatch::new(0.3, vec![0, 2], vec![0.7, -0.2], vec![0.2, 0.3]).unwrap();
        filter.update(&warmup).unwrap();

        let batch = MeasurementBatch::new(0.9, vec![0, 1], vec![0.1, 0.5], vec![0.4, 0.1]).unwrap();
        let predicted = filter.predicted_state(batch.time()).unwrap();
        let discrete = m
            .discretize(batch.time() - filter.state().time, batch.active(), &[0.4, 0.1])
            .unwrap();
        let c = discrete.output_rows.clone();
        let mut s = &c * &predicted.cov * c.transpose();
        s[(0, 0)] += 0.4;
        s[(1, 1)] += 0.1;
        let gain = Cholesky::new(s).unwrap().solve(&(&c * &predicted.cov)).transpose();
        let n = m.state_dim();
        let short_form = (DMatrix::<f64>::identity(n, n) - &gain * &c) * &predicted.cov;

        filter.update(&batch).unwrap();
        assert_relative_eq!(filter.state().cov, short_form, epsilon = 1e-9);
    }

    #[test]
    fn run_stream_queries_only_returns_prior() {
        let kernel = exp_kernel(1.4, 1.0);
        let points = vec![vec![0.0], vec![1.0]];
        let m = model(&points, &kernel);
        let trajectory = run_stream(m.clone(), &[], &[0.5, 2.0]).unwrap();
        assert_eq!(trajectory.len(), 2);
        for point in &trajectory {
            assert!(!point.is_update);
            assert_abs_diff_eq!(point.mean.norm(), 0.0);
            for i in 0..points.len() {
                for j in 0..points.len() {
                    let prior = 1.4
                        * m.locations()
                            .kernel()
                            .eval(&points[i], &points[j])
                            .unwrap();
                    assert_relative_eq!(point.cov[(i, j)], prior, epsilon = 1e-12);
                }
            }
            assert_eq!(point.nll, 0.0);
        }
    }

    #[test]
    fn run_stream_rejects_unordered_batches() {
        let m = model(&[vec![0.0]], &exp_kernel(1.0, 1.0));
        let batches = vec![
            MeasurementBatch::new(1.0, vec![0], vec![0.1], vec![0.2]).unwrap(),
            MeasurementBatch::new(0.5, vec![0], vec![0.1], vec![0.2]).unwrap(),
        ];
        assert!(matches!(
            run_stream(m, &batches, &[]),
            Err(Error::TimeOrder(_))
        ));
    }

    #[test]
    fn queries_do_not_perturb_canonical_state() {
        let kernel = exp_kernel(1.2, 0.7);
        let (records, points) = scenario(&kernel, 11);
        let dataset = Dataset::new(records).unwrap();
        let m = model(&points, &kernel);
        let batches = batches_from_dataset(&dataset, m.locations()).unwrap();

        let plain = run_stream(m.clone(), &batches, &[]).unwrap();
        let queried = run_stream(m, &batches, &[0.1, 0.65, 1.8, 2.0, 4.0]).unwrap();
        let updates: Vec<&TrajectoryPoint> =
            queried.iter().filter(|p| p.is_update).collect();
        assert_eq!(plain.len(), updates.len());
        assert_eq!(queried.len(), plain.len() + 5);
        for (a, b) in plain.iter().zip(updates) {
            assert_eq!(a.mean, b.mean);
            assert_eq!(a.cov, b.cov);
            assert_eq!(a.nll, b.nll);
        }
        // A query at an update time reports that update's posterior.
        let at_update = queried.iter().find(|p| p.time == 2.0 && !p.is_update).unwrap();
        let update = queried.iter().find(|p| p.time == 2.0 && p.is_update).unwrap();
        assert_eq!(at_update.mean, update.mean);
    }

    #[test]
    fn batches_from_dataset_maps_and_validates() {
        let kernel = exp_kernel(1.0, 1.0);
        let points = vec![vec![0.0], vec![1.0]];
        let m = model(&points, &kernel);
        let records = vec![
            Record { time: 0.0, point: vec![1.0], value: 0.3, noise_sd: 0.1 },
            Record { time: 0.0, point: vec![0.0], value: -0.1, noise_sd: 0.2 },
            Record { time: 1.0, point: vec![1.0], value: 0.5, noise_sd: 0.1 },
        ];
        let batches =
            batches_from_dataset(&Dataset::new(records).unwrap(), m.locations()).unwrap();
        assert_eq!(batches.len(), 2);
        assert_eq!(batches[0].active(), &[0, 1]);
        assert_eq!(batches[0].values()[0], -0.1);
        assert_eq!(batches[0].values()[1], 0.3);
        assert_eq!(batches[1].active(), &[1]);

        let unknown = vec![Record { time: 0.0, point: vec![3.0], value: 0.0, noise_sd: 0.1 }];
        assert!(batches_from_dataset(&Dataset::new(unknown).unwrap(), m.locations()).is_err());

        let duplicated = vec![
            Record { time: 0.0, point: vec![0.0], value: 0.1, noise_sd: 0.1 },
            Record { time: 0.0, point: vec![0.0], value: 0.2, noise_sd: 0.1 },
        ];
        assert!(matches!(
            batches_from_dataset(&Dataset::new(duplicated).unwrap(), m.locations()),
            Err(Error::DuplicateLocation(_))
        ));
    }

    #[test]
    fn batch_constructor_validates() {
        assert!(MeasurementBatch::new(0.0, vec![], vec![], vec![]).is_err());
        assert!(MeasurementBatch::new(0.0, vec![0], vec![1.0], vec![0.0]).is_err());
        assert!(MeasurementBatch::new(0.0, vec![0], vec![f64::NAN], vec![0.1]).is_err());
        assert!(MeasurementBatch::new(f64::NAN, vec![0], vec![1.0], vec![0.1]).is_err());
        assert!(MeasurementBatch::new(0.0, vec![1, 1], vec![1.0, 2.0], vec![0.1, 0.1]).is_err());
        // Entries get sorted by location index.
        let b = MeasurementBatch::new(0.0, vec![2, 0], vec![5.0, 7.0], vec![0.1, 0.2]).unwrap();
        assert_eq!(b.active(), &[0, 2]);
        assert_eq!(b.values()[0], 7.0);
        assert_eq!(b.noise_variances()[1], 0.1);
    }

    #[test]
    fn update_rejects_past_batch() {
        let m = model(&[vec![0.0]], &exp_kernel(1.0, 1.0));
        let mut filter = StreamingFilter::new(m, 0.0).unwrap();
        let batch = MeasurementBatch::new(1.0, vec![0], vec![0.4], vec![0.2]).unwrap();
        filter.update(&batch).unwrap();
        let past = MeasurementBatch::new(0.5, vec![0], vec![0.4], vec![0.2]).unwrap();
        assert!(matches!(filter.update(&past), Err(Error::TimeOrder(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        /// Updates never inflate the variance at a measured location, and the
        /// posterior covariance stays a valid covariance matrix.
        #[test]
        fn updates_contract_measured_variance(
            y0 in -3.0f64..3.0,
            y1 in -3.0f64..3.0,
            noise in 0.05f64..2.0,
            step in 0.01f64..2.0,
        ) {
            let m = model(&[vec![0.0], vec![0.7], vec![1.9]], &exp_kernel(1.0, 0.8));
            let mut filter = StreamingFilter::new(m.clone(), 0.0).unwrap();
            let first = MeasurementBatch::new(step, vec![0, 2], vec![y0, y1], vec![noise, noise])
                .unwrap();
            let predicted = filter.predicted_state(step).unwrap();
            let (_, before) = m.output_estimate(&predicted.mean, &predicted.cov);
            filter.update(&first).unwrap();
            let (_, after) = filter.output();
            for &loc in first.active() {
                prop_assert!(after[(loc, loc)] <= before[(loc, loc)] + 1e-10);
            }
            audit::check_covariance(&filter.state().cov, "posterior state covariance").unwrap();
            audit::check_covariance(&after, "posterior field covariance").unwrap();
        }
    }
}
