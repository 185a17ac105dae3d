//! C ABI for the streaming spatio-temporal Gaussian process estimator.
//!
//! The surface follows common C library conventions:
//!
//! - **Opaque handles** ([`StgpModel`], [`StgpFilter`], [`StgpQuery`],
//!   [`StgpAdaptive`]) created by `*_create*` functions and released by the
//!   matching `*_free`. Handles are not thread-safe; share them across
//!   threads only behind external synchronization.
//! - **Status codes** ([`StgpStatus`]) returned by every fallible call;
//!   `STGP_STATUS_OK` is zero. On failure a human-readable message is
//!   stored per thread and can be read with [`stgp_last_error_message`].
//! - **Caller-allocated buffers** for all array outputs, with explicit
//!   lengths validated against the handle's dimensions.
//!
//! The generated header is written to `include/stgp.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use serde::Deserialize;

use stgp::adaptive::{AdaptiveEstimator, DiscardPolicy, ScenarioStep, VisitRecord};
use stgp::cli::build_realization;
use stgp::config::RealizationSpec;
use stgp::filter::{MeasurementBatch, StreamingFilter};
use stgp::kernel::SeparableKernel;
use stgp::representer::SpatialQuery;
use stgp::statespace::{JointModel, LocationSet, RootMethod};
use stgp::Error;

/// ABI revision reported by [`stgp_abi_version`]; bumped on any breaking
/// change to this header.
pub const STGP_ABI_VERSION: u32 = 1;

/// Status code returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StgpStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Arguments were structurally invalid (bad JSON, wrong lengths,
    /// out-of-range indices, non-finite numbers, ...).
    InvalidArgument = 2,
    /// The computation failed numerically (loss of positive definiteness,
    /// unstable realization, approximation failure).
    NumericalFailure = 3,
    /// An unexpected internal failure; the process state is still sound.
    InternalError = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_for(error: &Error) -> StgpStatus {
    if error.is_input_error() {
        StgpStatus::InvalidArgument
    } else {
        StgpStatus::NumericalFailure
    }
}

fn fail(error: &Error) -> StgpStatus {
    set_error(&error.to_string());
    status_for(error)
}

fn invalid(message: &str) -> StgpStatus {
    set_error(message);
    StgpStatus::InvalidArgument
}

fn null_arg(name: &str) -> StgpStatus {
    set_error(&format!("{name} must not be null"));
    StgpStatus::NullPointer
}

/// Runs a fallible body, translating panics into `InternalError` so they
/// never unwind across the C boundary.
fn guarded(body: impl FnOnce() -> StgpStatus) -> StgpStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            StgpStatus::InternalError
        }
    }
}

/// Joint space-time model over a fixed location set (opaque).
pub struct StgpModel {
    inner: Arc<JointModel>,
}

/// Streaming estimator state (opaque).
pub struct StgpFilter {
    inner: StreamingFilter,
}

/// Prediction weights for a fixed set of off-grid points (opaque).
pub struct StgpQuery {
    inner: SpatialQuery,
    model_locations: usize,
}

/// Streaming estimator with an adaptive location set (opaque).
pub struct StgpAdaptive {
    inner: AdaptiveEstimator,
}

/// JSON specification accepted by [`stgp_model_create_json`].
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSpec {
    kernel: SeparableKernel,
    points: Vec<Vec<f64>>,
    #[serde(default)]
    realization: RealizationSpec,
    #[serde(default)]
    root_method: RootMethod,
    #[serde(default)]
    seed: u64,
}

/// Returns the ABI revision of this library.
#[no_mangle]
pub extern "C" fn stgp_abi_version() -> u32 {
    STGP_ABI_VERSION
}

/// Returns the error message of the most recent failing call on this
/// thread, as a NUL-terminated UTF-8 string.
///
/// The pointer stays valid until the next failing call on the same thread;
/// it must not be freed. Returns an empty string if no error occurred yet.
#[no_mangle]
pub extern "C" fn stgp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Creates a model from a JSON specification.
///
/// The document must be a JSON object with:
///
/// - `"kernel"`: `{"spatial": {...}, "temporal": {...}}` kernel description,
/// - `"points"`: array of equal-length coordinate arrays (the location set),
/// - `"realization"` (optional): `{"kind": "exact"}` (default) or
///   `{"kind": "approximate", "order": r, "grid_points": n}` for kernels
///   without an exact finite-order representation,
/// - `"root_method"` (optional): spatial factor method, default
///   `"symmetric_eigen"`,
/// - `"seed"` (optional): seed for the approximation fit, default 0.
///
/// On success writes a handle to `out_model`; release it with
/// [`stgp_model_free`].
///
/// # Safety
/// `spec_json` must point to a valid NUL-terminated string and `out_model`
/// to writable space for one pointer; both stay borrowed only for the call.
#[no_mangle]
pub unsafe extern "C" fn stgp_model_create_json(
    spec_json: *const c_char,
    out_model: *mut *mut StgpModel,
) -> StgpStatus {
    guarded(|| {
        if spec_json.is_null() {
            return null_arg("spec_json");
        }
        if out_model.is_null() {
            return null_arg("out_model");
        }
        let text = match unsafe { CStr::from_ptr(spec_json) }.to_str() {
            Ok(text) => text,
            Err(_) => return invalid("specification must be valid UTF-8"),
        };
        let spec: ModelSpec = match serde_json::from_str(text) {
            Ok(spec) => spec,
            Err(e) => return invalid(&format!("specification does not parse: {e}")),
        };
        let realization =
            match build_realization(&spec.kernel.temporal, &spec.realization, spec.seed) {
                Ok(r) => r,
                Err(e) => return fail(&e),
            };
        let set = match LocationSet::build(spec.points, &spec.kernel.spatial, spec.root_method) {
            Ok(set) => set,
            Err(e) => return fail(&e),
        };
        let model = Arc::new(JointModel::new(set, realization));
        unsafe { out_model.write(Box::into_raw(Box::new(StgpModel { inner: model }))) };
        StgpStatus::Ok
    })
}

/// Releases a model handle. Passing null is a no-op.
///
/// # Safety
/// `model` must be a pointer returned by [`stgp_model_create_json`] that has
/// not been freed yet, or null.
#[no_mangle]
pub unsafe extern "C" fn stgp_model_free(model: *mut StgpModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Number of locations in the model's set, or 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle from [`stgp_model_create_json`] or null.
#[no_mangle]
pub unsafe extern "C" fn stgp_model_num_locations(model: *const StgpModel) -> usize {
    if model.is_null() {
        return 0;
    }
    unsafe { &*model }.inner.num_locations()
}

/// Spatial dimension of the model's locations, or 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle from [`stgp_model_create_json`] or null.
#[no_mangle]
pub unsafe extern "C" fn stgp_model_spatial_dim(model: *const StgpModel) -> usize {
    if model.is_null() {
        return 0;
    }
    unsafe { &*model }.inner.locations().dim()
}

/// Dimension of the estimator's internal state (locations x temporal
/// order), or 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle from [`stgp_model_create_json`] or null.
#[no_mangle]
pub unsafe extern "C" fn stgp_model_state_dim(model: *const StgpModel) -> usize {
    if model.is_null() {
        return 0;
    }
    unsafe { &*model }.inner.state_dim()
}

/// Creates a streaming estimator anchored at `start_time`, initialized with
/// the model's stationary prior.
///
/// The filter keeps its own reference to the model; the model handle may be
/// freed independently afterwards.
///
/// # Safety
/// `model` must be a live handle from [`stgp_model_create_json`];
/// `out_filter` must point to writable space for one pointer.
#[no_mangle]
pub unsafe extern "C" fn stgp_filter_create(
    model: *const StgpModel,
    start_time: f64,
    out_filter: *mut *mut StgpFilter,
) -> StgpStatus {
    guarded(|| {
        if model.is_null() {
            return null_arg("model");
        }
        if out_filter.is_null() {
            return null_arg("out_filter");
        }
        let model = unsafe { &*model };
        match StreamingFilter::new(Arc::clone(&model.inner), start_time) {
            Ok(filter) => {
                unsafe { out_filter.write(Box::into_raw(Box::new(StgpFilter { inner: filter }))) };
                StgpStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Releases a filter handle. Passing null is a no-op.
///
/// # Safety
/// `filter` must be a pointer returned by [`stgp_filter_create`] that has
/// not been freed yet, or null.
#[no_mangle]
pub unsafe extern "C" fn stgp_filter_free(filter: *mut StgpFilter) {
    if !filter.is_null() {
        drop(unsafe { Box::from_raw(filter) });
    }
}

/// Assimilates one measurement batch taken at `time`.
///
/// `indices[i]` is the measured location's index in the model's set,
/// `values[i]` the measurement, and `noise_sds[i]` its noise standard
/// deviation; all three arrays hold `count` entries. `time` must not
/// precede the filter's current time (equal is allowed, so one instant may
/// be split across batches), and indices must be unique. On failure the
/// filter is left unchanged.
///
/// # Safety
/// `filter` must be a live handle from [`stgp_filter_create`]; the three
/// arrays must be readable for `count` elements each.
#[no_mangle]
pub unsafe extern "C" fn stgp_filter_update(
    filter: *mut StgpFilter,
    time: f64,
    indices: *const usize,
    values: *const f64,
    noise_sds: *const f64,
    count: usize,
) -> StgpStatus {
    guarded(|| {
        if filter.is_null() {
            return null_arg("filter");
        }
        if indices.is_null() {
            return null_arg("indices");
        }
        if values.is_null() {
            return null_arg("values");
        }
        if noise_sds.is_null() {
            return null_arg("noise_sds");
        }
        if count == 0 {
            return invalid("measurement batch must hold at least one entry");
        }
        let filter = unsafe { &mut *filter };
        let indices = unsafe { std::slice::from_raw_parts(indices, count) };
        let values = unsafe { std::slice::from_raw_parts(values, count) };
        let noise_sds = unsafe { std::slice::from_raw_parts(noise_sds, count) };
        if let Some(bad) = noise_sds.iter().find(|sd| !sd.is_finite() || **sd <= 0.0) {
            return invalid(&format!("noise standard deviations must be positive, got {bad}"));
        }
        let locations = filter.inner.model().num_locations();
        if let Some(bad) = indices.iter().find(|&&i| i >= locations) {
            return invalid(&format!(
                "location index {bad} is out of range for {locations} locations"
            ));
        }
        let batch = match MeasurementBatch::new(
            time,
            indices.to_vec(),
            values.to_vec(),
            noise_sds.iter().map(|sd| sd * sd).collect(),
        ) {
            Ok(batch) => batch,
            Err(e) => return fail(&e),
        };
        match filter.inner.update(&batch) {
            Ok(_) => StgpStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// Current filter time (time of the latest batch, or the anchor time).
/// Returns NaN for a null handle.
///
/// # Safety
/// `filter` must be a live handle from [`stgp_filter_create`] or null.
#[no_mangle]
pub unsafe extern "C" fn stgp_filter_time(filter: *const StgpFilter) -> f64 {
    if filter.is_null() {
        return f64::NAN;
    }
    unsafe { &*filter }.inner.state().time
}

/// Accumulated negative log marginal likelihood of all assimilated batches.
/// Returns NaN for a null handle.
///
/// # Safety
/// `filter` must be a live handle from [`stgp_filter_create`] or null.
#[no_mangle]
pub unsafe extern "C" fn stgp_filter_nll(filter: *const StgpFilter) -> f64 {
    if filter.is_null() {
        return f64::NAN;
    }
    unsafe { &*filter }.inner.state().nll
}

fn write_field_estimate(
    mean: nalgebra::DVector<f64>,
    cov: nalgebra::DMatrix<f64>,
    out_mean: *mut f64,
    out_variance: *mut f64,
    len: usize,
) -> StgpStatus {
    if mean.len() != len {
        return invalid(&format!("output length {len} does not match {} locations", mean.len()));
    }
    unsafe {
        for (i, value) in mean.iter().enumerate() {
            out_mean.add(i).write(*value);
        }
        for i in 0..len {
            out_variance.add(i).write(cov[(i, i)]);
        }
    }
    StgpStatus::Ok
}

/// Writes the field estimate at the filter's current time: posterior means
/// and variances per model location, each `len == num_locations` long.
///
/// # Safety
/// `filter` must be a live handle from [`stgp_filter_create`]; `out_mean`
/// and `out_variance` must be writable for `len` doubles each.
#[no_mangle]
pub unsafe extern "C" fn stgp_filter_estimate(
    filter: *const StgpFilter,
    out_mean: *mut f64,
    out_variance: *mut f64,
    len: usize,
) -> StgpStatus {
    guarded(|| {
        if filter.is_null() {
            return null_arg("filter");
        }
        if out_mean.is_null() {
            return null_arg("out_mean");
        }
        if out_variance.is_null() {
            return null_arg("out_variance");
        }
        let filter = unsafe { &*filter };
        let (mean, cov) = filter.inner.output();
        write_field_estimate(mean, cov, out_mean, out_variance, len)
    })
}

/// Writes the posterior field covariance at the filter's current time in
/// row-major order; `len` must equal `num_locations`, and the buffer must
/// hold `len * len` doubles.
///
/// # Safety
/// `filter` must be a live handle from [`stgp_filter_create`]; `out_cov`
/// must be writable for `len * len` doubles.
#[no_mangle]
pub unsafe extern "C" fn stgp_filter_covariance(
    filter: *const StgpFilter,
    out_cov: *mut f64,
    len: usize,
) -> StgpStatus {
    guarded(|| {
        if filter.is_null() {
            return null_arg("filter");
        }
        if out_cov.is_null() {
            return null_arg("out_cov");
        }
        let filter = unsafe { &*filter };
        let (_, cov) = filter.inner.output();
        if cov.nrows() != len {
            return invalid(&format!(
                "output length {len} does not match {} locations",
                cov.nrows()
            ));
        }
        unsafe {
            for r in 0..len {
                for c in 0..len {
                    out_cov.add(r * len + c).write(cov[(r, c)]);
                }
            }
        }
        StgpStatus::Ok
    })
}

/// Writes the predicted field estimate at `time`, which must not precede
/// the filter's current time. The filter itself is not modified.
///
/// # Safety
/// `filter` must be a live handle from [`stgp_filter_create`]; `out_mean`
/// and `out_variance` must be writable for `len` doubles each.
#[no_mangle]
pub unsafe extern "C" fn stgp_filter_predict(
    filter: *const StgpFilter,
    time: f64,
    out_mean: *mut f64,
    out_variance: *mut f64,
    len: usize,
) -> StgpStatus {
    guarded(|| {
        if filter.is_null() {
            return null_arg("filter");
        }
        if out_mean.is_null() {
            return null_arg("out_mean");
        }
        if out_variance.is_null() {
            return null_arg("out_variance");
        }
        let filter = unsafe { &*filter };
        let state = match filter.inner.predicted_state(time) {
            Ok(state) => state,
            Err(e) => return fail(&e),
        };
        let (mean, cov) = filter.inner.model().output_estimate(&state.mean, &state.cov);
        write_field_estimate(mean, cov, out_mean, out_variance, len)
    })
}

/// Creates prediction weights for `count` off-grid points with coordinates
/// in `points`, flattened row-major (`count * dim` doubles, `dim` matching
/// the model's spatial dimension).
///
/// The query borrows nothing: the model handle may be freed afterwards. Use
/// only with filters built from a model with the same location set.
///
/// # Safety
/// `model` must be a live handle from [`stgp_model_create_json`]; `points`
/// must be readable for `count * dim` doubles; `out_query` must be writable
/// for one pointer.
#[no_mangle]
pub unsafe extern "C" fn stgp_query_create(
    model: *const StgpModel,
    points: *const f64,
    count: usize,
    dim: usize,
    out_query: *mut *mut StgpQuery,
) -> StgpStatus {
    guarded(|| {
        if model.is_null() {
            return null_arg("model");
        }
        if points.is_null() {
            return null_arg("points");
        }
        if out_query.is_null() {
            return null_arg("out_query");
        }
        if count == 0 || dim == 0 {
            return invalid("query needs at least one point and one dimension");
        }
        let model = unsafe { &*model };
        if dim != model.inner.locations().dim() {
            return invalid(&format!(
                "query dimension {dim} does not match the model dimension {}",
                model.inner.locations().dim()
            ));
        }
        let flat = unsafe { std::slice::from_raw_parts(points, count * dim) };
        let points: Vec<Vec<f64>> = flat.chunks(dim).map(<[f64]>::to_vec).collect();
        match SpatialQuery::new(&model.inner, points) {
            Ok(query) => {
                let handle =
                    StgpQuery { inner: query, model_locations: model.inner.num_locations() };
                unsafe { out_query.write(Box::into_raw(Box::new(handle))) };
                StgpStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Releases a query handle. Passing null is a no-op.
///
/// # Safety
/// `query` must be a pointer returned by [`stgp_query_create`] that has not
/// been freed yet, or null.
#[no_mangle]
pub unsafe extern "C" fn stgp_query_free(query: *mut StgpQuery) {
    if !query.is_null() {
        drop(unsafe { Box::from_raw(query) });
    }
}

/// Extends the filter's current field estimate to the query's points:
/// writes predictive means and variances, `len` matching the query's point
/// count. The filter must come from a model with the same location set the
/// query was created with.
///
/// # Safety
/// `query` and `filter` must be live handles; `out_mean` and `out_variance`
/// must be writable for `len` doubles each.
#[no_mangle]
pub unsafe extern "C" fn stgp_query_extend(
    query: *const StgpQuery,
    filter: *const StgpFilter,
    out_mean: *mut f64,
    out_variance: *mut f64,
    len: usize,
) -> StgpStatus {
    guarded(|| {
        if query.is_null() {
            return null_arg("query");
        }
        if filter.is_null() {
            return null_arg("filter");
        }
        if out_mean.is_null() {
            return null_arg("out_mean");
        }
        if out_variance.is_null() {
            return null_arg("out_variance");
        }
        let query = unsafe { &*query };
        let filter = unsafe { &*filter };
        if filter.inner.model().num_locations() != query.model_locations {
            return invalid(&format!(
                "filter has {} locations but the query was built for {}",
                filter.inner.model().num_locations(),
                query.model_locations
            ));
        }
        let (field_mean, field_cov) = filter.inner.output();
        let mean = match query.inner.extend_estimate(&field_mean) {
            Ok(mean) => mean,
            Err(e) => return fail(&e),
        };
        let variance = match query.inner.extend_variance(&field_cov) {
            Ok(variance) => variance,
            Err(e) => return fail(&e),
        };
        if mean.len() != len {
            return invalid(&format!(
                "output length {len} does not match {} query points",
                mean.len()
            ));
        }
        unsafe {
            for i in 0..len {
                out_mean.add(i).write(mean[i]);
                out_variance.add(i).write(variance[i]);
            }
        }
        StgpStatus::Ok
    })
}

/// Creates an adaptive estimator that starts from the model's location set
/// and may grow to at most `capacity` locations, anchored at `start_time`.
///
/// When a step would exceed capacity, the location with the oldest most
/// recent measurement is discarded (never-measured locations first, ties
/// toward the lowest index).
///
/// # Safety
/// `model` must be a live handle from [`stgp_model_create_json`];
/// `out_adaptive` must be writable for one pointer.
#[no_mangle]
pub unsafe extern "C" fn stgp_adaptive_create(
    model: *const StgpModel,
    capacity: usize,
    start_time: f64,
    out_adaptive: *mut *mut StgpAdaptive,
) -> StgpStatus {
    guarded(|| {
        if model.is_null() {
            return null_arg("model");
        }
        if out_adaptive.is_null() {
            return null_arg("out_adaptive");
        }
        let model = unsafe { &*model };
        match AdaptiveEstimator::new(
            Arc::clone(&model.inner),
            capacity,
            DiscardPolicy::OldestFirst,
            start_time,
        ) {
            Ok(estimator) => {
                unsafe {
                    out_adaptive.write(Box::into_raw(Box::new(StgpAdaptive { inner: estimator })))
                };
                StgpStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Releases an adaptive-estimator handle. Passing null is a no-op.
///
/// # Safety
/// `adaptive` must be a pointer returned by [`stgp_adaptive_create`] that
/// has not been freed yet, or null.
#[no_mangle]
pub unsafe extern "C" fn stgp_adaptive_free(adaptive: *mut StgpAdaptive) {
    if !adaptive.is_null() {
        drop(unsafe { Box::from_raw(adaptive) });
    }
}

/// Processes one step of `count` visits at `time`: measurements on known
/// locations update the estimate, visits flagged new expand the set, and
/// the set is contracted back to capacity afterwards.
///
/// `points` holds the visited coordinates flattened row-major
/// (`count * dim` doubles); `values` and `noise_sds` hold one entry per
/// visit; `is_new[i]` must be true exactly when the visited point is not in
/// the current set (query the set with [`stgp_adaptive_locations`]). On
/// failure the estimator is left unchanged.
///
/// # Safety
/// `adaptive` must be a live handle from [`stgp_adaptive_create`]; `points`
/// must be readable for `count * dim` doubles; `values`, `noise_sds`, and
/// `is_new` for `count` elements each.
#[no_mangle]
pub unsafe extern "C" fn stgp_adaptive_step(
    adaptive: *mut StgpAdaptive,
    time: f64,
    points: *const f64,
    values: *const f64,
    noise_sds: *const f64,
    is_new: *const bool,
    count: usize,
    dim: usize,
) -> StgpStatus {
    guarded(|| {
        if adaptive.is_null() {
            return null_arg("adaptive");
        }
        if points.is_null() {
            return null_arg("points");
        }
        if values.is_null() {
            return null_arg("values");
        }
        if noise_sds.is_null() {
            return null_arg("noise_sds");
        }
        if is_new.is_null() {
            return null_arg("is_new");
        }
        if count == 0 {
            return invalid("step must hold at least one visit");
        }
        let adaptive = unsafe { &mut *adaptive };
        if dim != adaptive.inner.model().locations().dim() {
            return invalid(&format!(
                "visit dimension {dim} does not match the model dimension {}",
                adaptive.inner.model().locations().dim()
            ));
        }
        let flat = unsafe { std::slice::from_raw_parts(points, count * dim) };
        let values = unsafe { std::slice::from_raw_parts(values, count) };
        let noise_sds = unsafe { std::slice::from_raw_parts(noise_sds, count) };
        let is_new = unsafe { std::slice::from_raw_parts(is_new, count) };
        let visits: Vec<VisitRecord> = flat
            .chunks(dim)
            .zip(values.iter().zip(noise_sds.iter().zip(is_new)))
            .map(|(point, (&value, (&noise_sd, &new)))| VisitRecord {
                point: point.to_vec(),
                value,
                noise_sd,
                is_new: new,
            })
            .collect();
        // Validate against a copy first so a failed step cannot leave the
        // estimator half-updated.
        let mut attempt = adaptive.inner.clone();
        match attempt.step(&ScenarioStep { time, visits }) {
            Ok(_) => {
                adaptive.inner = attempt;
                StgpStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Number of locations currently in the adaptive set, or 0 for a null
/// handle.
///
/// # Safety
/// `adaptive` must be a live handle from [`stgp_adaptive_create`] or null.
#[no_mangle]
pub unsafe extern "C" fn stgp_adaptive_num_locations(adaptive: *const StgpAdaptive) -> usize {
    if adaptive.is_null() {
        return 0;
    }
    unsafe { &*adaptive }.inner.model().num_locations()
}

/// Writes the coordinates of the current location set, flattened row-major
/// into `out_points` (`count * dim` doubles). `count` must equal
/// [`stgp_adaptive_num_locations`] and `dim` the model's spatial dimension.
///
/// # Safety
/// `adaptive` must be a live handle from [`stgp_adaptive_create`];
/// `out_points` must be writable for `count * dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn stgp_adaptive_locations(
    adaptive: *const StgpAdaptive,
    out_points: *mut f64,
    count: usize,
    dim: usize,
) -> StgpStatus {
    guarded(|| {
        if adaptive.is_null() {
            return null_arg("adaptive");
        }
        if out_points.is_null() {
            return null_arg("out_points");
        }
        let adaptive = unsafe { &*adaptive };
        let locations = adaptive.inner.locations();
        let model_dim = adaptive.inner.model().locations().dim();
        if count != locations.len() || dim != model_dim {
            return invalid(&format!(
                "buffer shape {count}x{dim} does not match the set shape {}x{model_dim}",
                locations.len()
            ));
        }
        unsafe {
            for (i, point) in locations.iter().enumerate() {
                for (j, coordinate) in point.iter().enumerate() {
                    out_points.add(i * dim + j).write(*coordinate);
                }
            }
        }
        StgpStatus::Ok
    })
}

/// Writes the adaptive estimator's current field estimate: posterior means
/// and variances per location in set order, each `len` long with `len`
/// equal to [`stgp_adaptive_num_locations`].
///
/// # Safety
/// `adaptive` must be a live handle from [`stgp_adaptive_create`];
/// `out_mean` and `out_variance` must be writable for `len` doubles each.
#[no_mangle]
pub unsafe extern "C" fn stgp_adaptive_estimate(
    adaptive: *const StgpAdaptive,
    out_mean: *mut f64,
    out_variance: *mut f64,
    len: usize,
) -> StgpStatus {
    guarded(|| {
        if adaptive.is_null() {
            return null_arg("adaptive");
        }
        if out_mean.is_null() {
            return null_arg("out_mean");
        }
        if out_variance.is_null() {
            return null_arg("out_variance");
        }
        let adaptive = unsafe { &*adaptive };
        let (mean, cov) = adaptive.inner.field_estimate();
        write_field_estimate(mean.clone(), cov.clone(), out_mean, out_variance, len)
    })
}

/// Accumulated negative log marginal likelihood of the adaptive estimator's
/// assimilated measurements. Returns NaN for a null handle.
///
/// # Safety
/// `adaptive` must be a live handle from [`stgp_adaptive_create`] or null.
#[no_mangle]
pub unsafe extern "C" fn stgp_adaptive_nll(adaptive: *const StgpAdaptive) -> f64 {
    if adaptive.is_null() {
        return f64::NAN;
    }
    unsafe { &*adaptive }.inner.filter().state().nll
}
