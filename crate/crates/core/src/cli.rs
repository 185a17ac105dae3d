//! Experiment driver behind the `stgp` binary.
//!
//! Each command takes a validated [`ExperimentConfig`] plus an output
//! directory, works entirely through files, and returns a [`CommandReport`]
//! with warnings and human-readable summary lines for the binary to print.
//! Every command is deterministic given the config and seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::{
    AdaptiveEstimator, AdaptiveTrajectoryPoint, DiscardPolicy, ScenarioStep, VisitRecord,
};
use crate::baseline::{fit_percent, sample_at, sample_on_grid, truncated_gp_at, BatchGp, Dataset};
use crate::config::{ExperimentConfig, Mode, RealizationSpec};
use crate::error::{Error, Result};
use crate::filter::{batches_from_dataset, run_stream, MeasurementBatch, StreamingFilter};
use crate::io::{
    format_float, read_dataset, read_json_lines, read_scenario, write_json_lines, write_records,
    write_scenario, AdaptiveRow, TrajectoryRow,
};
use crate::kernel::{SeparableKernel, SpatialKernel, TemporalKernel};
use crate::representer::SpatialQuery;
use crate::rng::{derive, substream};
use crate::spectral::fit::{approximate_psd, default_frequency_grid};
use crate::spectral::{factorize, realize, SpectralFactor, TemporalRealization};
use crate::statespace::{JointModel, LocationSet};

/// What a command produced, for the binary to report.
#[derive(Clone, Debug, Default)]
pub struct CommandReport {
    pub warnings: Vec<String>,
    pub outputs: Vec<PathBuf>,
    pub summary: Vec<String>,
}

impl CommandReport {
    fn warn(&mut self, message: impl Into<String>) {
        self.warnings.push(message.into());
    }

    fn wrote(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    fn say(&mut self, line: impl Into<String>) {
        self.summary.push(line.into());
    }
}

/// Metadata written next to every command's outputs. The embedded config
/// re-parses to a document equal to the one the command ran with.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMeta {
    pub command: String,
    pub config: ExperimentConfig,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

impl RunMeta {
    fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("metadata serialization failed: {e}")))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Process exit code for an error: 2 for input problems, 3 for numerical
/// failures.
pub fn exit_code_for(error: &Error) -> i32 {
    if error.is_input_error() {
        2
    } else {
        3
    }
}

/// Builds the temporal realization the config asks for: the closed-form
/// state-space model, or a rational spectral fit of the requested order.
pub fn build_realization(
    temporal: &TemporalKernel,
    spec: &RealizationSpec,
    seed: u64,
) -> Result<TemporalRealization> {
    match spec {
        RealizationSpec::Exact => realize(&factorize(temporal)?),
        RealizationSpec::Approximate { order, grid_points } => {
            let grid = default_frequency_grid(temporal.decay(), *grid_points);
            let target = |w: f64| temporal.psd(w);
            let fit = approximate_psd(&target, *order, &grid, derive(seed, "psd-fit"))?;
            realize(&fit.factor)
        }
    }
}

/// Assembles the joint model over the given points.
pub fn build_model(config: &ExperimentConfig, points: Vec<Vec<f64>>) -> Result<Arc<JointModel>> {
    let realization =
        build_realization(&config.kernel.temporal, &config.realization, config.seed)?;
    let set = LocationSet::build(points, &config.kernel.spatial, config.root_method)?;
    Ok(Arc::new(JointModel::new(set, realization)))
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

fn data_path(config: &ExperimentConfig, out_dir: &Path, default_name: &str) -> PathBuf {
    config
        .data
        .as_ref()
        .map(PathBuf::from)
        .unwrap_or_else(|| out_dir.join(default_name))
}

fn write_truth(path: &Path, rows: &[(f64, &[f64], f64)], dim: usize) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    let mut header = vec!["t".to_string()];
    for i in 1..=dim {
        header.push(format!("x{i}"));
    }
    header.push("f".to_string());
    writer
        .write_record(&header)
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    for (t, point, f) in rows {
        let mut row = vec![format_float(*t)];
        row.extend(point.iter().map(|&c| format_float(c)));
        row.push(format_float(*f));
        writer
            .write_record(&row)
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    }
    writer.flush()?;
    Ok(())
}

/// Synthesizes a dataset (and, in adaptive mode, a visit scenario) from the
/// configured kernel, locations, schedule, and noise model.
pub fn cmd_generate(config: &ExperimentConfig, out_dir: &Path) -> Result<CommandReport> {
    config.validate()?;
    ensure_dir(out_dir)?;
    let mut report = CommandReport::default();
    let points = config.locations.build(config.seed)?;
    let dim = points[0].len();
    let times = config.schedule.times();

    if config.mode == Mode::Adaptive {
        generate_scenario(config, out_dir, &points, &times, &mut report)?;
    } else {
        let dataset_file = out_dir.join("dataset.csv");
        let truth_file = out_dir.join("truth.csv");
        if times.is_empty() {
            write_records(&dataset_file, &[], dim)?;
            write_truth(&truth_file, &[], dim)?;
            report.warn("schedule spans zero duration; wrote an empty dataset");
        } else {
            let sampled =
                sample_on_grid(&config.kernel, &points, &times, &config.noise, config.seed)?;
            write_records(&dataset_file, sampled.dataset.records(), dim)?;
            let rows: Vec<(f64, &[f64], f64)> = sampled
                .dataset
                .records()
                .iter()
                .zip(&sampled.truth)
                .map(|(r, &f)| (r.time, r.point.as_slice(), f))
                .collect();
            write_truth(&truth_file, &rows, dim)?;
            report.say(format!(
                "wrote {} records over {} locations and {} steps",
                sampled.dataset.len(),
                points.len(),
                times.len()
            ));
        }
        report.wrote(&dataset_file);
        report.wrote(&truth_file);
    }

    let meta_file = out_dir.join("generate_meta.json");
    RunMeta {
        command: "generate".into(),
        config: config.clone(),
        warnings: report.warnings.clone(),
        metrics: BTreeMap::new(),
    }
    .write(&meta_file)?;
    report.wrote(&meta_file);
    Ok(report)
}

/// Scenario synthesis for adaptive runs: cyclic visits over a candidate
/// pool, with `is_new` flags kept consistent with the estimator's own
/// expansion and discard rules by simulating the set evolution.
fn generate_scenario(
    config: &ExperimentConfig,
    out_dir: &Path,
    initial: &[Vec<f64>],
    times: &[f64],
    report: &mut CommandReport,
) -> Result<()> {
    let spec = config.adaptive.as_ref().expect("validated adaptive section");
    if initial.len() > spec.capacity {
        return Err(Error::Config(format!(
            "initial set of {} locations exceeds adaptive capacity {}",
            initial.len(),
            spec.capacity
        )));
    }
    let dim = initial[0].len();
    let scenario_file = out_dir.join("scenario.csv");
    let truth_file = out_dir.join("truth.csv");

    let candidates = match &spec.candidates {
        Some(s) => s.build(derive(config.seed, "candidates"))?,
        None => initial.to_vec(),
    };
    if candidates.iter().any(|p| p.len() != dim) {
        return Err(Error::Config(
            "candidate locations must match the initial set's dimension".into(),
        ));
    }

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.shuffle(&mut substream(config.seed, "scenario"));

    // Mirror of the estimator's location set and visit recency, so is_new
    // flags and post-freeze visits stay valid under the capacity budget.
    let mut set = initial.to_vec();
    let mut last_visit = vec![f64::NEG_INFINITY; set.len()];
    let mut cursor = 0usize;
    let mut planned: Vec<(f64, Vec<(Vec<f64>, bool)>)> = Vec::new();
    for &t in times {
        let frozen = spec.freeze_time.is_some_and(|f| t >= f);
        let mut picks: Vec<Vec<f64>> = Vec::new();
        if frozen {
            let want = spec.visits_per_step.min(set.len());
            for i in 0..want {
                picks.push(set[(cursor + i) % set.len()].clone());
            }
            cursor += want;
        } else {
            let mut attempts = 0;
            while picks.len() < spec.visits_per_step && attempts < candidates.len() {
                let p = candidates[order[cursor % order.len()]].clone();
                cursor += 1;
                attempts += 1;
                if !picks.contains(&p) {
                    picks.push(p);
                }
            }
        }
        let mut visits = Vec::with_capacity(picks.len());
        for p in picks {
            let is_new = !set.contains(&p);
            if is_new {
                set.push(p.clone());
                last_visit.push(t);
            } else {
                let i = set.iter().position(|q| *q == p).expect("present");
                last_visit[i] = t;
            }
            visits.push((p, is_new));
        }
        while set.len() > spec.capacity {
            let mut drop = 0;
            for i in 1..last_visit.len() {
                if last_visit[i] < last_visit[drop] {
                    drop = i;
                }
            }
            set.remove(drop);
            last_visit.remove(drop);
        }
        planned.push((t, visits));
    }

    let where_when: Vec<(Vec<f64>, f64)> = planned
        .iter()
        .flat_map(|(t, visits)| visits.iter().map(|(p, _)| (p.clone(), *t)))
        .collect();
    if where_when.is_empty() {
        write_scenario(&scenario_file, &[], dim)?;
        write_truth(&truth_file, &[], dim)?;
        report.warn("schedule spans zero duration; wrote an empty scenario");
    } else {
        let sampled = sample_at(&config.kernel, &where_when, &config.noise, config.seed)?;
        let mut steps = Vec::with_capacity(planned.len());
        let mut k = 0usize;
        let mut truth_rows = Vec::with_capacity(where_when.len());
        for (t, visits) in &planned {
            let mut step = ScenarioStep { time: *t, visits: Vec::with_capacity(visits.len()) };
            for (point, is_new) in visits {
                let record = &sampled.dataset.records()[k];
                step.visits.push(VisitRecord {
                    point: point.clone(),
                    value: record.value,
                    noise_sd: record.noise_sd,
                    is_new: *is_new,
                });
                truth_rows.push((*t, point.as_slice(), sampled.truth[k]));
                k += 1;
            }
            steps.push(step);
        }
        write_scenario(&scenario_file, &steps, dim)?;
        write_truth(&truth_file, &truth_rows, dim)?;
        report.say(format!(
            "wrote a scenario of {} steps with {} visits over {} candidates",
            steps.len(),
            where_when.len(),
            candidates.len()
        ));
    }
    report.wrote(&scenario_file);
    report.wrote(&truth_file);
    Ok(())
}

/// Batch-GP means at the model locations for each distinct dataset time.
/// This is the full-information reference runs are scored against.
fn batch_reference(
    dataset: &Dataset,
    kernel: &SeparableKernel,
    points: &[Vec<f64>],
) -> Result<Vec<(f64, Vec<f64>)>> {
    let gp = BatchGp::fit(dataset, kernel)?;
    let steps = dataset.time_steps()?;
    let mut out = Vec::with_capacity(steps.len());
    for &t in &steps {
        let mut means = Vec::with_capacity(points.len());
        for p in points {
            means.push(gp.predict(p, t)?.0);
        }
        out.push((t, means));
    }
    Ok(out)
}

fn write_summary_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    writer
        .write_record(header)
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    for row in rows {
        writer
            .write_record(row)
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    }
    writer.flush()?;
    Ok(())
}

/// Runs the configured estimator over an existing dataset or scenario.
pub fn cmd_run(config: &ExperimentConfig, out_dir: &Path) -> Result<CommandReport> {
    config.validate()?;
    ensure_dir(out_dir)?;
    match config.mode {
        Mode::Filter => run_filter(config, out_dir),
        Mode::Baseline => run_baseline(config, out_dir),
        Mode::Adaptive => run_adaptive_cmd(config, out_dir),
        Mode::Sweep => cmd_sweep(config, out_dir),
    }
}

fn run_filter(config: &ExperimentConfig, out_dir: &Path) -> Result<CommandReport> {
    let mut report = CommandReport::default();
    let points = config.locations.build(config.seed)?;
    let model = build_model(config, points.clone())?;
    let dataset = read_dataset(&data_path(config, out_dir, "dataset.csv"))?;
    let batches = batches_from_dataset(&dataset, model.locations())?;

    let trajectory = run_stream(Arc::clone(&model), &batches, &config.queries.times)?;

    // Dedicated timing pass: same updates, no trajectory assembly, so the
    // recorded cost is the filter step itself.
    let mut timings = Vec::with_capacity(batches.len());
    if let Some(first) = batches.first() {
        let mut filter = StreamingFilter::new(Arc::clone(&model), first.time())?;
        for batch in &batches {
            let start = Instant::now();
            filter.update(batch)?;
            timings.push(start.elapsed().as_secs_f64());
        }
    }

    let query = if config.queries.points.is_empty() {
        None
    } else {
        Some(SpatialQuery::new(&model, config.queries.points.clone())?)
    };
    let mut rows = Vec::with_capacity(trajectory.len());
    for point in &trajectory {
        let mut row = TrajectoryRow::from_point(point);
        if let Some(q) = &query {
            row.query_f = Some(q.extend_estimate(&point.mean)?.iter().copied().collect());
            row.query_var = Some(q.extend_variance(&point.cov)?.iter().copied().collect());
        }
        rows.push(row);
    }
    let trajectory_file = out_dir.join("trajectory.jsonl");
    write_json_lines(&trajectory_file, &rows)?;
    report.wrote(&trajectory_file);

    // Score update steps against the full batch GP at the same times.
    let reference = batch_reference(&dataset, &config.kernel, model.locations().points())?;
    let update_rows: Vec<&TrajectoryRow> = rows.iter().filter(|r| r.is_update).collect();
    if update_rows.len() != reference.len() {
        return Err(Error::InvalidInput(format!(
            "trajectory has {} update steps, dataset has {} times",
            update_rows.len(),
            reference.len()
        )));
    }
    // Per-step fit against the full batch GP measures convergence: interior
    // filter steps only see past data, so they approach the batch estimate
    // and coincide with it at the final step (exactly, for exact
    // realizations). The headline metric is that end-of-run fit.
    let mut summary_rows = Vec::with_capacity(update_rows.len());
    let mut end_fit = f64::NAN;
    for (k, (row, (t, ref_means))) in update_rows.iter().zip(&reference).enumerate() {
        let fit = fit_percent(&row.f, ref_means)?;
        end_fit = fit;
        summary_rows.push(vec![
            k.to_string(),
            format_float(*t),
            format_float(row.ell),
            format_float(timings[k]),
            format_float(fit),
        ]);
    }
    let summary_file = out_dir.join("summary.csv");
    write_summary_csv(&summary_file, &["step", "time", "ell", "seconds", "fit"], &summary_rows)?;
    report.wrote(&summary_file);

    let final_nll = rows.iter().filter(|r| r.is_update).map(|r| r.ell).next_back().unwrap_or(0.0);
    let mut metrics = BTreeMap::new();
    metrics.insert("fit_percent".into(), end_fit);
    metrics.insert("final_nll".into(), final_nll);
    metrics.insert("records".into(), dataset.len() as f64);
    metrics.insert("steps".into(), reference.len() as f64);
    report.say(format!(
        "filter run over {} steps: end-of-run fit {end_fit:.4}% vs full batch, final nll {final_nll:.6}",
        reference.len()
    ));

    let meta_file = out_dir.join("run_meta.json");
    RunMeta {
        command: "run".into(),
        config: config.clone(),
        warnings: report.warnings.clone(),
        metrics,
    }
    .write(&meta_file)?;
    report.wrote(&meta_file);
    Ok(report)
}

/// Trajectory row for the sliding-window baseline (no likelihood recursion).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BaselineRow {
    pub t: f64,
    pub f: Vec<f64>,
    pub var: Vec<f64>,
}

fn run_baseline(config: &ExperimentConfig, out_dir: &Path) -> Result<CommandReport> {
    let mut report = CommandReport::default();
    let spec = config.baseline.as_ref().expect("validated baseline section");
    let points = config.locations.build(config.seed)?;
    let dataset = read_dataset(&data_path(config, out_dir, "dataset.csv"))?;
    let steps = dataset.time_steps()?;

    let mut rows = Vec::with_capacity(steps.len());
    let mut timings = Vec::with_capacity(steps.len());
    for k in 0..steps.len() {
        let start = Instant::now();
        let estimate = truncated_gp_at(&dataset, &config.kernel, spec.buffer, k, &points)?;
        timings.push(start.elapsed().as_secs_f64());
        rows.push(BaselineRow { t: estimate.time, f: estimate.mean, var: estimate.variance });
    }
    let trajectory_file = out_dir.join("trajectory.jsonl");
    write_json_lines(&trajectory_file, &rows)?;
    report.wrote(&trajectory_file);

    let reference = batch_reference(&dataset, &config.kernel, &points)?;
    let mut summary_rows = Vec::with_capacity(rows.len());
    let mut end_fit = f64::NAN;
    for (k, (row, (t, ref_means))) in rows.iter().zip(&reference).enumerate() {
        let fit = fit_percent(&row.f, ref_means)?;
        end_fit = fit;
        summary_rows.push(vec![
            k.to_string(),
            format_float(*t),
            format_float(timings[k]),
            format_float(fit),
        ]);
    }
    let summary_file = out_dir.join("summary.csv");
    write_summary_csv(&summary_file, &["step", "time", "seconds", "fit"], &summary_rows)?;
    report.wrote(&summary_file);

    let mut metrics = BTreeMap::new();
    metrics.insert("fit_percent".into(), end_fit);
    metrics.insert("buffer".into(), spec.buffer as f64);
    metrics.insert("records".into(), dataset.len() as f64);
    metrics.insert("steps".into(), steps.len() as f64);
    report.say(format!(
        "windowed baseline (buffer {}) over {} steps: end-of-run fit {end_fit:.4}% vs full batch",
        spec.buffer,
        steps.len()
    ));

    let meta_file = out_dir.join("run_meta.json");
    RunMeta {
        command: "run".into(),
        config: config.clone(),
        warnings: report.warnings.clone(),
        metrics,
    }
    .write(&meta_file)?;
    report.wrote(&meta_file);
    Ok(report)
}

/// Per-step adaptive replay with timing. Matches [`run_adaptive`] point for
/// point (a unit test pins the equivalence); timing is the only addition.
fn timed_adaptive(
    model: Arc<JointModel>,
    scenario: &[ScenarioStep],
    capacity: usize,
    freeze_time: Option<f64>,
) -> Result<(Vec<AdaptiveTrajectoryPoint>, Vec<f64>)> {
    for pair in scenario.windows(2) {
        if !(pair[0].time < pair[1].time) {
            return Err(Error::TimeOrder(format!(
                "scenario times must be strictly increasing, got {} then {}",
                pair[0].time, pair[1].time
            )));
        }
    }
    let start = scenario.first().map(|s| s.time).unwrap_or(0.0);
    let mut estimator =
        AdaptiveEstimator::new(model, capacity, DiscardPolicy::OldestFirst, start)?;
    let mut points = Vec::with_capacity(scenario.len());
    let mut timings = Vec::with_capacity(scenario.len());
    for step in scenario {
        let clock = Instant::now();
        let mut visits = step.visits.clone();
        let mut skipped_new = 0;
        if freeze_time.is_some_and(|t| step.time >= t) {
            let before = visits.len();
            visits.retain(|v| !v.is_new);
            skipped_new = before - visits.len();
        }
        let report = estimator.step(&ScenarioStep { time: step.time, visits })?;
        timings.push(clock.elapsed().as_secs_f64());
        let (mean, cov) = estimator.field_estimate();
        points.push(AdaptiveTrajectoryPoint {
            time: step.time,
            locations: estimator.locations().to_vec(),
            mean: mean.clone(),
            cov: cov.clone(),
            nll: estimator.filter().state().nll,
            report,
            skipped_new,
        });
    }
    Ok((points, timings))
}

fn run_adaptive_cmd(config: &ExperimentConfig, out_dir: &Path) -> Result<CommandReport> {
    let mut report = CommandReport::default();
    let spec = config.adaptive.as_ref().expect("validated adaptive section");
    let points = config.locations.build(config.seed)?;
    let model = build_model(config, points)?;
    let scenario = read_scenario(&data_path(config, out_dir, "scenario.csv"))?;
    if scenario.is_empty() {
        report.warn("scenario is empty; nothing to run");
    }

    let (trajectory, timings) =
        timed_adaptive(model, &scenario, spec.capacity, spec.freeze_time)?;
    let rows: Vec<AdaptiveRow> = trajectory.iter().map(AdaptiveRow::from_point).collect();
    let trajectory_file = out_dir.join("trajectory.jsonl");
    write_json_lines(&trajectory_file, &rows)?;
    report.wrote(&trajectory_file);

    let mut summary_rows = Vec::with_capacity(rows.len());
    for (k, row) in rows.iter().enumerate() {
        summary_rows.push(vec![
            k.to_string(),
            format_float(row.t),
            format_float(row.ell),
            format_float(timings[k]),
            row.locations.len().to_string(),
            row.expanded.to_string(),
            row.dropped.to_string(),
            row.skipped_new.to_string(),
        ]);
    }
    let summary_file = out_dir.join("summary.csv");
    write_summary_csv(
        &summary_file,
        &["step", "time", "ell", "seconds", "locations", "expanded", "dropped", "skipped_new"],
        &summary_rows,
    )?;
    report.wrote(&summary_file);

    let mut metrics = BTreeMap::new();
    if let Some(last) = trajectory.last() {
        metrics.insert("final_nll".into(), last.nll);
        metrics.insert("final_locations".into(), last.locations.len() as f64);
        report.say(format!(
            "adaptive run over {} steps: final set holds {} locations (capacity {})",
            trajectory.len(),
            last.locations.len(),
            spec.capacity
        ));
    }
    metrics.insert("steps".into(), trajectory.len() as f64);

    let meta_file = out_dir.join("run_meta.json");
    RunMeta {
        command: "run".into(),
        config: config.clone(),
        warnings: report.warnings.clone(),
        metrics,
    }
    .write(&meta_file)?;
    report.wrote(&meta_file);
    Ok(report)
}

fn kernel_with(base: &SeparableKernel, ls: f64, ts: f64, td: f64) -> SeparableKernel {
    let spatial = match base.spatial {
        SpatialKernel::SquaredExponential { amplitude, .. } => {
            SpatialKernel::SquaredExponential { length_scale: ls, amplitude }
        }
        SpatialKernel::Exponential { amplitude, .. } => {
            SpatialKernel::Exponential { length_scale: ls, amplitude }
        }
    };
    let temporal = match base.temporal {
        TemporalKernel::Exponential { .. } => TemporalKernel::Exponential { scale: ts, decay: td },
        TemporalKernel::PeriodicExponential { frequency, .. } => {
            TemporalKernel::PeriodicExponential { scale: ts, decay: td, frequency }
        }
        TemporalKernel::SquaredExponential { .. } => {
            TemporalKernel::SquaredExponential { scale: ts, decay: td }
        }
    };
    SeparableKernel { spatial, temporal }
}

fn base_length_scale(kernel: &SpatialKernel) -> f64 {
    match kernel {
        SpatialKernel::SquaredExponential { length_scale, .. }
        | SpatialKernel::Exponential { length_scale, .. } => *length_scale,
    }
}

#[derive(Clone, Debug)]
struct SweepCell {
    length_scale: f64,
    scale: f64,
    decay: f64,
    nll: Option<f64>,
    error: Option<String>,
}

/// Evaluates the negative log marginal likelihood over a hyperparameter
/// grid, one filter pass per cell, in parallel. Failed cells are marked and
/// reported, not fatal.
pub fn cmd_sweep(config: &ExperimentConfig, out_dir: &Path) -> Result<CommandReport> {
    config.validate()?;
    ensure_dir(out_dir)?;
    let mut report = CommandReport::default();
    let spec = config.sweep.as_ref().expect("validated sweep section");
    let points = config.locations.build(config.seed)?;
    let dataset = read_dataset(&data_path(config, out_dir, "dataset.csv"))?;

    // Location indices do not depend on the kernel, so the batches are
    // shared across cells.
    let base_set = LocationSet::build(points.clone(), &config.kernel.spatial, config.root_method)?;
    let batches = batches_from_dataset(&dataset, &base_set)?;

    let axis = |values: &[f64], fallback: f64| {
        if values.is_empty() {
            vec![fallback]
        } else {
            values.to_vec()
        }
    };
    let ls_axis = axis(&spec.spatial_length_scales, base_length_scale(&config.kernel.spatial));
    let ts_axis = axis(&spec.temporal_scales, config.kernel.temporal.scale());
    let td_axis = axis(&spec.temporal_decays, config.kernel.temporal.decay());
    let mut grid = Vec::with_capacity(ls_axis.len() * ts_axis.len() * td_axis.len());
    for &ls in &ls_axis {
        for &ts in &ts_axis {
            for &td in &td_axis {
                grid.push((ls, ts, td));
            }
        }
    }

    let cells: Vec<SweepCell> = grid
        .par_iter()
        .map(|&(ls, ts, td)| {
            let kernel = kernel_with(&config.kernel, ls, ts, td);
            let outcome = (|| -> Result<f64> {
                let realization =
                    build_realization(&kernel.temporal, &config.realization, config.seed)?;
                let set =
                    LocationSet::build(points.clone(), &kernel.spatial, config.root_method)?;
                let model = Arc::new(JointModel::new(set, realization));
                let start = batches.first().map(MeasurementBatch::time).unwrap_or(0.0);
                let mut filter = StreamingFilter::new(model, start)?;
                for batch in &batches {
                    filter.update(batch)?;
                }
                Ok(filter.state().nll)
            })();
            match outcome {
                Ok(nll) => {
                    SweepCell { length_scale: ls, scale: ts, decay: td, nll: Some(nll), error: None }
                }
                Err(e) => SweepCell {
                    length_scale: ls,
                    scale: ts,
                    decay: td,
                    nll: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    let mut rows = Vec::with_capacity(cells.len());
    for cell in &cells {
        rows.push(vec![
            format_float(cell.length_scale),
            format_float(cell.scale),
            format_float(cell.decay),
            cell.nll.map(format_float).unwrap_or_default(),
            cell.error.clone().unwrap_or_default(),
        ]);
    }
    let sweep_file = out_dir.join("sweep.csv");
    write_summary_csv(
        &sweep_file,
        &["spatial_length_scale", "temporal_scale", "temporal_decay", "nll", "error"],
        &rows,
    )?;
    report.wrote(&sweep_file);

    let failed = cells.iter().filter(|c| c.error.is_some()).count();
    if failed > 0 {
        report.warn(format!("{failed} of {} sweep cells failed", cells.len()));
    }
    let best = cells
        .iter()
        .filter_map(|c| c.nll.map(|nll| (c, nll)))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    let mut metrics = BTreeMap::new();
    metrics.insert("cells".into(), cells.len() as f64);
    metrics.insert("failed_cells".into(), failed as f64);
    match best {
        Some((cell, nll)) => {
            metrics.insert("best_nll".into(), nll);
            metrics.insert("best_spatial_length_scale".into(), cell.length_scale);
            metrics.insert("best_temporal_scale".into(), cell.scale);
            metrics.insert("best_temporal_decay".into(), cell.decay);
            report.say(format!(
                "minimum nll {nll:.6} at length_scale {}, scale {}, decay {}",
                cell.length_scale, cell.scale, cell.decay
            ));
        }
        None => report.warn("no sweep cell finished; nll surface is empty"),
    }

    let meta_file = out_dir.join("sweep_meta.json");
    RunMeta {
        command: "sweep".into(),
        config: config.clone(),
        warnings: report.warnings.clone(),
        metrics,
    }
    .write(&meta_file)?;
    report.wrote(&meta_file);
    Ok(report)
}

/// Output of an explicit spectral-density fit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PsdFitReport {
    pub order: usize,
    pub objective: f64,
    pub factor: SpectralFactor,
}

/// Fits a rational spectral factor to the configured temporal kernel and
/// writes the factor plus a density comparison table.
pub fn cmd_approx_psd(config: &ExperimentConfig, out_dir: &Path) -> Result<CommandReport> {
    config.validate()?;
    ensure_dir(out_dir)?;
    let mut report = CommandReport::default();
    let RealizationSpec::Approximate { order, grid_points } = config.realization else {
        return Err(Error::Config(
            "approx-psd needs realization.kind = \"approximate\" with an order".into(),
        ));
    };
    let temporal = &config.kernel.temporal;
    let grid = default_frequency_grid(temporal.decay(), grid_points);
    let target = |w: f64| temporal.psd(w);
    let fit = approximate_psd(&target, order, &grid, derive(config.seed, "psd-fit"))?;

    let fit_file = out_dir.join("psd_fit.json");
    let text = serde_json::to_string_pretty(&PsdFitReport {
        order: fit.factor.order(),
        objective: fit.objective,
        factor: fit.factor.clone(),
    })
    .map_err(|e| Error::Config(format!("fit serialization failed: {e}")))?;
    std::fs::write(&fit_file, text + "\n")?;
    report.wrote(&fit_file);

    let mut rows = Vec::with_capacity(grid.len());
    for &w in &grid {
        rows.push(vec![format_float(w), format_float(target(w)), format_float(fit.factor.psd(w))]);
    }
    let density_file = out_dir.join("density.csv");
    write_summary_csv(&density_file, &["omega", "target", "fitted"], &rows)?;
    report.wrote(&density_file);

    report.say(format!(
        "order-{} spectral fit: weighted squared density error {:.6e}",
        fit.factor.order(),
        fit.objective
    ));
    let meta_file = out_dir.join("approx_psd_meta.json");
    RunMeta {
        command: "approx-psd".into(),
        config: config.clone(),
        warnings: report.warnings.clone(),
        metrics: BTreeMap::from([("objective".into(), fit.objective)]),
    }
    .write(&meta_file)?;
    report.wrote(&meta_file);
    Ok(report)
}

/// The fields shared by every trajectory flavor, for cross-run comparison.
#[derive(Clone, Debug, Deserialize)]
struct CompareRow {
    t: f64,
    f: Vec<f64>,
}

/// Scores trajectory files against a reference trajectory: rows are aligned
/// by time, and the fit metric is computed over the concatenated estimates.
pub fn cmd_compare(
    reference: &Path,
    trajectories: &[PathBuf],
    out_dir: &Path,
) -> Result<CommandReport> {
    ensure_dir(out_dir)?;
    let mut report = CommandReport::default();
    let ref_rows: Vec<CompareRow> = read_json_lines(reference)?;
    if ref_rows.is_empty() {
        return Err(Error::InvalidInput(format!(
            "reference trajectory {} is empty",
            reference.display()
        )));
    }

    let mut rows = Vec::with_capacity(trajectories.len());
    for path in trajectories {
        let candidate: Vec<CompareRow> = read_json_lines(path)?;
        let mut estimate_all = Vec::new();
        let mut reference_all = Vec::new();
        let mut matched = 0usize;
        for row in &candidate {
            if let Some(ref_row) = ref_rows.iter().find(|r| r.t == row.t && r.f.len() == row.f.len())
            {
                estimate_all.extend_from_slice(&row.f);
                reference_all.extend_from_slice(&ref_row.f);
                matched += 1;
            }
        }
        let fit = if matched == 0 {
            report.warn(format!("{}: no rows align with the reference", path.display()));
            f64::NAN
        } else {
            fit_percent(&estimate_all, &reference_all)?
        };
        let name = path.display().to_string();
        if matched > 0 {
            report.say(format!("{name}: fit {fit:.4}% over {matched} aligned rows"));
        }
        rows.push(vec![
            name,
            candidate.len().to_string(),
            matched.to_string(),
            if matched == 0 { String::new() } else { format_float(fit) },
        ]);
    }
    let compare_file = out_dir.join("compare.csv");
    write_summary_csv(&compare_file, &["trajectory", "rows", "matched", "fit"], &rows)?;
    report.wrote(&compare_file);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptive::run_adaptive;
    use crate::config::{
        AdaptiveSpec, BaselineSpec, LocationSpec, QuerySpec, ScheduleSpec, SweepSpec,
        CONFIG_VERSION,
    };
    use crate::baseline::NoiseModel;
    use crate::statespace::RootMethod;
    use approx::assert_abs_diff_eq;
    use tempfile::tempdir;

    fn small_config(mode: Mode) -> ExperimentConfig {
        ExperimentConfig {
            version: CONFIG_VERSION,
            kernel: SeparableKernel {
                spatial: SpatialKernel::SquaredExponential { length_scale: 8.0, amplitude: 1.0 },
                temporal: TemporalKernel::Exponential { scale: 1.0, decay: 0.5 },
            },
            locations: LocationSpec::Grid1d { count: 4, start: 0.0, end: 6.0 },
            schedule: ScheduleSpec { start: 0.0, step: 0.25, count: 8 },
            noise: NoiseModel::Homogeneous { sd: 0.3 },
            realization: RealizationSpec::Exact,
            queries: QuerySpec { points: vec![vec![1.3]], times: vec![1.125] },
            mode,
            seed: 11,
            root_method: RootMethod::default(),
            data: None,
            output: None,
            adaptive: None,
            baseline: None,
            sweep: None,
        }
    }

    #[test]
    fn generate_then_filter_run_produces_consistent_outputs() {
        let dir = tempdir().unwrap();
        let out = dir.path();
        let config = small_config(Mode::Filter);
        cmd_generate(&config, out).unwrap();
        let report = cmd_run(&config, out).unwrap();
        assert!(report.warnings.is_empty());

        let rows: Vec<TrajectoryRow> =
            read_json_lines(&out.join("trajectory.jsonl")).unwrap();
        assert_eq!(rows.len(), 8 + 1);
        assert_eq!(rows.iter().filter(|r| r.is_update).count(), 8);
        let queried = rows.iter().find(|r| !r.is_update).unwrap();
        assert_eq!(queried.t, 1.125);
        assert_eq!(queried.query_f.as_ref().unwrap().len(), 1);

        let meta = RunMeta::load(&out.join("run_meta.json")).unwrap();
        assert_eq!(meta.config, config);
        // Exact realization: the filter matches the batch GP, so fit is 100.
        assert_abs_diff_eq!(meta.metrics["fit_percent"], 100.0, epsilon = 1e-6);
    }

    #[test]
    fn generate_is_deterministic_per_seed() {
        let dir = tempdir().unwrap();
        let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
        let config = small_config(Mode::Filter);
        cmd_generate(&config, &a).unwrap();
        cmd_generate(&config, &b).unwrap();
        let mut other = config.clone();
        other.seed = 12;
        cmd_generate(&other, &c).unwrap();
        let bytes_a = std::fs::read(a.join("dataset.csv")).unwrap();
        let bytes_b = std::fs::read(b.join("dataset.csv")).unwrap();
        let bytes_c = std::fs::read(c.join("dataset.csv")).unwrap();
        assert_eq!(bytes_a, bytes_b);
        assert_ne!(bytes_a, bytes_c);
    }

    #[test]
    fn zero_duration_generate_warns_and_writes_empty_dataset() {
        let dir = tempdir().unwrap();
        let mut config = small_config(Mode::Filter);
        config.schedule.count = 0;
        let report = cmd_generate(&config, dir.path()).unwrap();
        assert_eq!(report.warnings.len(), 1);
        assert!(report.warnings[0].contains("empty dataset"));
        let text = std::fs::read_to_string(dir.path().join("dataset.csv")).unwrap();
        assert_eq!(text.lines().count(), 1);
    }

    #[test]
    fn baseline_run_scores_below_batch_but_emits_rows() {
        let dir = tempdir().unwrap();
        let out = dir.path();
        let mut config = small_config(Mode::Baseline);
        config.baseline = Some(BaselineSpec { buffer: 2 });
        cmd_generate(&config, out).unwrap();
        let report = cmd_run(&config, out).unwrap();
        let rows: Vec<BaselineRow> = read_json_lines(&out.join("trajectory.jsonl")).unwrap();
        assert_eq!(rows.len(), 8);
        assert!(rows.iter().all(|r| r.f.len() == 4 && r.var.len() == 4));
        let meta = RunMeta::load(&out.join("run_meta.json")).unwrap();
        assert!(meta.metrics["fit_percent"] <= 100.0);
        assert!(!report.summary.is_empty());
    }

    #[test]
    fn timed_adaptive_matches_library_replay() {
        let dir = tempdir().unwrap();
        let out = dir.path();
        let mut config = small_config(Mode::Adaptive);
        config.locations = LocationSpec::Explicit { points: vec![vec![0.0], vec![2.0]] };
        config.adaptive = Some(AdaptiveSpec {
            capacity: 3,
            freeze_time: Some(1.5),
            candidates: Some(LocationSpec::Uniform1d { count: 6, start: 0.0, end: 6.0 }),
            visits_per_step: 2,
        });
        cmd_generate(&config, out).unwrap();
        let scenario = read_scenario(&out.join("scenario.csv")).unwrap();
        assert_eq!(scenario.len(), 8);

        let points = config.locations.build(config.seed).unwrap();
        let model = build_model(&config, points).unwrap();
        let (timed, timings) =
            timed_adaptive(Arc::clone(&model), &scenario, 3, Some(1.5)).unwrap();
        let replay = run_adaptive(model, &scenario, 3, DiscardPolicy::OldestFirst, Some(1.5))
            .unwrap();
        assert_eq!(timings.len(), scenario.len());
        assert_eq!(timed.len(), replay.len());
        for (a, b) in timed.iter().zip(&replay) {
            assert_eq!(a.time, b.time);
            assert_eq!(a.locations, b.locations);
            assert_eq!(a.mean, b.mean);
            assert_eq!(a.cov, b.cov);
            assert_eq!(a.nll, b.nll);
            assert_eq!(a.skipped_new, b.skipped_new);
        }

        let report = cmd_run(&config, out).unwrap();
        let rows: Vec<AdaptiveRow> = read_json_lines(&out.join("trajectory.jsonl")).unwrap();
        assert_eq!(rows.len(), 8);
        assert!(rows.iter().all(|r| r.locations.len() <= 3));
        assert!(rows.iter().any(|r| r.expanded > 0));
        assert!(!report.summary.is_empty());
    }

    #[test]
    fn single_point_sweep_equals_filter_likelihood() {
        let dir = tempdir().unwrap();
        let out = dir.path();
        let mut config = small_config(Mode::Sweep);
        config.sweep = Some(SweepSpec::default());
        cmd_generate(&config, out).unwrap();
        let sweep_report = cmd_sweep(&config, out).unwrap();
        assert!(sweep_report.warnings.is_empty());
        let sweep_meta = RunMeta::load(&out.join("sweep_meta.json")).unwrap();

        let mut filter_config = config.clone();
        filter_config.mode = Mode::Filter;
        cmd_run(&filter_config, out).unwrap();
        let run_meta = RunMeta::load(&out.join("run_meta.json")).unwrap();
        assert_eq!(sweep_meta.metrics["best_nll"], run_meta.metrics["final_nll"]);
        assert_eq!(sweep_meta.metrics["cells"], 1.0);
    }

    #[test]
    fn sweep_marks_failed_cells_and_finds_minimum() {
        let dir = tempdir().unwrap();
        let out = dir.path();
        let mut config = small_config(Mode::Sweep);
        // Zero-measure temporal scale cells cannot be factorized; they must
        // be marked, not fatal.
        config.sweep = Some(SweepSpec {
            spatial_length_scales: vec![],
            temporal_scales: vec![0.5, 1.0, 2.0],
            temporal_decays: vec![0.25, 0.5],
        });
        cmd_generate(&config, out).unwrap();
        let report = cmd_sweep(&config, out).unwrap();
        let meta = RunMeta::load(&out.join("sweep_meta.json")).unwrap();
        assert_eq!(meta.metrics["cells"], 6.0);
        assert_eq!(meta.metrics["failed_cells"], 0.0);
        let best_nll = meta.metrics["best_nll"];
        // The generating point should be competitive on its own data.
        assert!(best_nll.is_finite());
        assert!(!report.summary.is_empty());

        let text = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn approx_psd_writes_fit_and_density_table() {
        let dir = tempdir().unwrap();
        let out = dir.path();
        let mut config = small_config(Mode::Filter);
        config.kernel.temporal = TemporalKernel::SquaredExponential { scale: 1.0, decay: 1.0 };
        config.realization = RealizationSpec::Approximate { order: 2, grid_points: 120 };
        cmd_approx_psd(&config, out).unwrap();
        let text = std::fs::read_to_string(out.join("psd_fit.json")).unwrap();
        let parsed: PsdFitReport = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed.order, 2);
        assert!(parsed.objective.is_finite());
        let density = std::fs::read_to_string(out.join("density.csv")).unwrap();
        assert_eq!(density.lines().count(), 121);

        config.realization = RealizationSpec::Exact;
        assert!(matches!(cmd_approx_psd(&config, out), Err(Error::Config(_))));
    }

    #[test]
    fn compare_scores_trajectories_against_reference() {
        let dir = tempdir().unwrap();
        let out = dir.path();
        let config = small_config(Mode::Filter);
        cmd_generate(&config, out).unwrap();
        cmd_run(&config, out).unwrap();
        let reference = out.join("trajectory.jsonl");

        let compare_out = out.join("compare");
        let report =
            cmd_compare(&reference, &[reference.clone()], &compare_out).unwrap();
        assert!(report.warnings.is_empty());
        let text = std::fs::read_to_string(compare_out.join("compare.csv")).unwrap();
        let last = text.lines().last().unwrap();
        let fit: f64 = last.rsplit(',').next().unwrap().parse().unwrap();
        assert_abs_diff_eq!(fit, 100.0, epsilon = 1e-12);
    }

    #[test]
    fn exit_codes_split_input_from_numerical_failures() {
        assert_eq!(exit_code_for(&Error::InvalidInput("x".into())), 2);
        assert_eq!(exit_code_for(&Error::Config("x".into())), 2);
        assert_eq!(exit_code_for(&Error::Parse { line: 3, message: "x".into() }), 2);
        assert_eq!(exit_code_for(&Error::Conditioning("x".into())), 3);
        assert_eq!(exit_code_for(&Error::Unstable("x".into())), 3);
        assert_eq!(exit_code_for(&Error::ApproximationFailed("x".into())), 3);
    }

    #[test]
    fn scenario_generation_respects_capacity_mirror() {
        let dir = tempdir().unwrap();
        let mut config = small_config(Mode::Adaptive);
        config.locations = LocationSpec::Explicit { points: vec![vec![0.0]] };
        config.schedule = ScheduleSpec { start: 0.0, step: 0.2, count: 20 };
        config.adaptive = Some(AdaptiveSpec {
            capacity: 2,
            freeze_time: Some(2.0),
            candidates: Some(LocationSpec::Uniform1d { count: 10, start: 0.0, end: 6.0 }),
            visits_per_step: 1,
        });
        cmd_generate(&config, dir.path()).unwrap();
        let scenario = read_scenario(&dir.path().join("scenario.csv")).unwrap();
        // The replay must accept every is_new flag the generator emitted.
        let points = config.locations.build(config.seed).unwrap();
        let model = build_model(&config, points).unwrap();
        let trajectory =
            run_adaptive(model, &scenario, 2, DiscardPolicy::OldestFirst, Some(2.0)).unwrap();
        assert!(trajectory.iter().all(|p| p.locations.len() <= 2));
        let frozen_steps: Vec<_> =
            scenario.iter().filter(|s| s.time >= 2.0).collect();
        assert!(!frozen_steps.is_empty());
        assert!(frozen_steps.iter().all(|s| s.visits.iter().all(|v| !v.is_new)));
    }
}
