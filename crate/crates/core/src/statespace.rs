//! Location sets and the joint state-space model over them.
//!
//! Stacking one temporal realization per monitored location and coloring the
//! outputs with a square root of the spatial Gram matrix gives the joint
//! model
//!
//! ```text
//! s(k+1) = (I (x) e^{F T_k}) s(k) + w(k),   w ~ N(0, I (x) Qd(T_k))
//! y(k)   = C(k) s(k) + v(k),                C(k) = I_k Kroot (I (x) H)
//! ```
//!
//! whose outputs over the set are exactly the separable-kernel field. The
//! Kronecker blocks are never materialized: transitions and process noise are
//! applied block by block.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::audit;
use crate::error::{Error, Result};
use crate::kernel::SpatialKernel;
use crate::spectral::TemporalRealization;

/// How the spatial Gram root is factored.
///
/// The symmetric eigendecomposition root is the default: it exists for any
/// positive semidefinite Gram matrix and degrades gracefully near rank
/// deficiency. Cholesky is cheaper and triangular but fails earlier.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootMethod {
    #[default]
    SymmetricEigen,
    Cholesky,
}

/// Jitter ladder applied to the Gram diagonal on factorization failure,
/// as multiples of `trace / M`.
const JITTER_LADDER: [f64; 5] = [0.0, 1e-12, 1e-10, 1e-8, 1e-6];

/// Acceptance floor for factored eigenvalues, as a multiple of `trace / M`.
const EIGEN_FLOOR: f64 = 1e-14;

#[derive(Clone, Debug)]
enum GramFactor {
    Eigen { vectors: DMatrix<f64>, values: DVector<f64> },
    Cholesky { lower: DMatrix<f64> },
}

/// An ordered set of distinct monitored locations with its spatial Gram
/// matrix and a usable square-root factorization.
#[derive(Clone, Debug)]
pub struct LocationSet {
    points: Vec<Vec<f64>>,
    dim: usize,
    kernel: SpatialKernel,
    gram: DMatrix<f64>,
    factor: GramFactor,
    root: DMatrix<f64>,
    jitter: f64,
}

impl LocationSet {
    /// Validates the points, assembles the Gram matrix, and factors it,
    /// escalating diagonal jitter on failure.
    pub fn build(
        points: Vec<Vec<f64>>,
        kernel: &SpatialKernel,
        method: RootMethod,
    ) -> Result<Self> {
        kernel.validate()?;
        if points.is_empty() {
            return Err(Error::InvalidInput("location set must be nonempty".into()));
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(Error::InvalidInput("locations must have dimension >= 1".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "location {i} has dimension {}, expected {dim}",
                    p.len()
                )));
            }
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidInput(format!("location {i} has non-finite coordinate")));
            }
        }
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                if points[i] == points[j] {
                    return Err(Error::DuplicateLocation(format!(
                        "locations {i} and {j} coincide"
                    )));
                }
            }
        }
        let m = points.len();
        let mut gram = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let v = kernel.eval(&points[i], &points[j])?;
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }
        let unit = gram.trace() / m as f64;
        let (factor, jitter) = Self::factor_with_ladder(&gram, unit, method)?;
        let root = match &factor {
            GramFactor::Eigen { vectors, values } => {
                let sq = DMatrix::from_diagonal(&values.map(f64::sqrt));
                vectors * sq * vectors.transpose()
            }
            GramFactor::Cholesky { lower } => lower.clone(),
        };
        Ok(LocationSet { points, dim, kernel: kernel.clone(), gram, factor, root, jitter })
    }

    fn factor_with_ladder(
        gram: &DMatrix<f64>,
        unit: f64,
        method: RootMethod,
    ) -> Result<(GramFactor, f64)> {
        let floor = EIGEN_FLOOR * unit;
        match method {
            RootMethod::SymmetricEigen => {
                let eig = gram.clone().symmetric_eigen();
                for mult in JITTER_LADDER {
                    let jitter = mult * unit;
                    let min = eig.eigenvalues.min() + jitter;
                    if min >= floor {
                        let values = eig.eigenvalues.map(|v| v + jitter);
                        return Ok((
                            GramFactor::Eigen { vectors: eig.eigenvectors.clone(), values },
                            jitter,
                        ));
                    }
                }
            }
            RootMethod::Cholesky => {
                for mult in JITTER_LADDER {
                    let jitter = mult * unit;
                    let mut shifted = gram.clone();
                    for d in 0..gram.nrows() {
                        shifted[(d, d)] += jitter;
                    }
                    if let Some(ch) = shifted.cholesky() {
                        return Ok((GramFactor::Cholesky { lower: ch.l() }, jitter));
                    }
                }
            }
        }
        Err(Error::Conditioning(
            "spatial Gram matrix not factorable within the jitter ladder".into(),
        ))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn kernel(&self) -> &SpatialKernel {
        &self.kernel
    }

    /// Raw spatial Gram matrix (without jitter).
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Square-root factor: `root * root' = gram + jitter I`.
    pub fn root(&self) -> &DMatrix<f64> {
        &self.root
    }

    /// Diagonal jitter the factorization settled on (usually zero).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Factorization method this set was built with.
    pub fn root_method(&self) -> RootMethod {
        match self.factor {
            GramFactor::Eigen { .. } => RootMethod::SymmetricEigen,
            GramFactor::Cholesky { .. } => RootMethod::Cholesky,
        }
    }

    /// Solves `(gram + jitter I) X = rhs` through the stored factorization.
    pub fn solve_gram(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rhs.nrows() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "right-hand side has {} rows, expected {}",
                rhs.nrows(),
                self.len()
            )));
        }
        match &self.factor {
            GramFactor::Eigen { vectors, values } => {
                let projected = vectors.transpose() * rhs;
                let mut scaled = projected;
                for i in 0..scaled.nrows() {
                    for j in 0..scaled.ncols() {
                        scaled[(i, j)] /= values[i];
                    }
                }
                Ok(vectors * scaled)
            }
            GramFactor::Cholesky { lower } => {
                let mut x = rhs.clone();
                let ch = nalgebra::Cholesky::pack_dirty(lower.clone());
                ch.solve_mut(&mut x);
                Ok(x)
            }
        }
    }

    /// Kernel row `K_s(x, set)` for an arbitrary point.
    pub fn cross_row(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "query point has dimension {}, expected {}",
                x.len(),
                self.dim
            )));
        }
        let mut row = DVector::<f64>::zeros(self.len());
        for (i, p) in self.points.iter().enumerate() {
            row[i] = self.kernel.eval(x, p)?;
        }
        Ok(row)
    }

    /// Index of an exactly matching point, if present.
    pub fn index_of(&self, x: &[f64]) -> Option<usize> {
        self.points.iter().position(|p| p.as_slice() == x)
    }
}

/// Joint model: a location set, a temporal realization shared by all
/// locations, and the precomputed output map `Kroot (I (x) H)`.
#[derive(Clone, Debug)]
pub struct JointModel {
    locations: LocationSet,
    realization: TemporalRealization,
    output_map: DMatrix<f64>,
}

impl JointModel {
    pub fn new(locations: LocationSet, realization: TemporalRealization) -> Self {
        let m = locations.len();
        let r = realization.order();
        let root = locations.root();
        let h = realization.output();
        let mut output_map = DMatrix::<f64>::zeros(m, m * r);
        for i in 0..m {
            for j in 0..m {
                for c in 0..r {
                    output_map[(i, j * r + c)] = root[(i, j)] * h[c];
                }
            }
        }
        JointModel { locations, realization, output_map }
    }

    pub fn locations(&self) -> &LocationSet {
        &self.locations
    }

    pub fn realization(&self) -> &TemporalRealization {
        &self.realization
    }

    pub fn num_locations(&self) -> usize {
        self.locations.len()
    }

    pub fn order(&self) -> usize {
        self.realization.order()
    }

    pub fn state_dim(&self) -> usize {
        self.num_locations() * self.order()
    }

    /// Full output map `Kroot (I (x) H)`, one row per location.
    pub fn output_map(&self) -> &DMatrix<f64> {
        &self.output_map
    }

    /// Stationary variance of each field component implied by the
    /// realization; equals the temporal kernel variance for exact factors.
    pub fn effective_variance(&self) -> f64 {
        self.realization.output_variance()
    }

    /// Zero mean and block-diagonal stationary covariance `I (x) X0`.
    pub fn stationary_prior(&self) -> (DVector<f64>, DMatrix<f64>) {
        let mean = DVector::zeros(self.state_dim());
        let mut cov = DMatrix::zeros(self.state_dim(), self.state_dim());
        kron_add_block_diag(&mut cov, self.realization.stationary_cov(), self.num_locations());
        (mean, cov)
    }

    /// Field estimate implied by state statistics: `Phi s`, `Phi S Phi'`.
    pub fn output_estimate(&self, mean: &DVector<f64>, cov: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let f = &self.output_map * mean;
        let mut fc = &self.output_map * cov * self.output_map.transpose();
        audit::symmetrize(&mut fc);
        (f, fc)
    }

    /// Discretizes the shared temporal block over a step and assembles the
    /// measurement model for the active location indices.
    pub fn discretize(
        &self,
        step: f64,
        active: &[usize],
        noise_variances: &[f64],
    ) -> Result<DiscreteModel> {
        let (transition_block, noise_block) = discretize_block(&self.realization, step)?;
        if active.len() != noise_variances.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} active indices but {} noise variances",
                active.len(),
                noise_variances.len()
            )));
        }
        for pair in active.windows(2) {
            if pair[0] >= pair[1] {
                return Err(Error::InvalidInput(
                    "active indices must be strictly increasing".into(),
                ));
            }
        }
        if let Some(&last) = active.last() {
            if last >= self.num_locations() {
                return Err(Error::InvalidInput(format!(
                    "active index {last} out of range for {} locations",
                    self.num_locations()
                )));
            }
        }
        for &v in noise_variances {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "noise variance must be positive and finite, got {v}"
                )));
            }
        }
        let mut output_rows = DMatrix::zeros(active.len(), self.state_dim());
        for (row, &loc) in active.iter().enumerate() {
            output_rows.row_mut(row).copy_from(&self.output_map.row(loc));
        }
        Ok(DiscreteModel {
            transition_block,
            noise_block,
            output_rows,
            active: active.to_vec(),
            noise_variances: DVector::from_column_slice(noise_variances),
            step,
        })
    }
}

/// One discretized step of the joint model.
#[derive(Clone, Debug)]
pub struct DiscreteModel {
    /// `e^{F T}`, shared by every location block.
    pub transition_block: DMatrix<f64>,
    /// `Qd(T)`, shared by every location block.
    pub noise_block: DMatrix<f64>,
    /// Measurement matrix rows for the active locations.
    pub output_rows: DMatrix<f64>,
    /// Active location indices, strictly increasing.
    pub active: Vec<usize>,
    /// Measurement noise variances, one per active location.
    pub noise_variances: DVector<f64>,
    /// Step length the transition was computed for.
    pub step: f64,
}

/// Matrix-exponential discretization of one temporal block: returns
/// `(e^{F T}, integral_0^T e^{F tau} G G' e^{F' tau} dtau)` through the
/// doubled-size augmented exponential.
pub fn discretize_block(
    realization: &TemporalRealization,
    step: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !step.is_finite() || step < 0.0 {
        return Err(Error::TimeOrder(format!("step must be nonnegative and finite, got {step}")));
    }
    let r = realization.order();
    if step == 0.0 {
        return Ok((DMatrix::identity(r, r), DMatrix::zeros(r, r)));
    }
    let f = realization.dynamics();
    let g = realization.noise_input();
    let diffusion = g * g.transpose();
    let mut aug = DMatrix::<f64>::zeros(2 * r, 2 * r);
    for i in 0..r {
        for j in 0..r {
            aug[(i, j)] = -f[(i, j)] * step;
            aug[(i, r + j)] = diffusion[(i, j)] * step;
            aug[(r + i, r + j)] = f[(j, i)] * step;
        }
    }
    let e = aug.exp();
    let e22 = e.view((r, r), (r, r));
    let e12 = e.view((0, r), (r, r));
    let transition = e22.transpose();
    let mut noise = &transition * e12;
    audit::symmetrize(&mut noise);
    Ok((transition, noise))
}

/// `y = (I_m (x) B) x` without forming the Kronecker product.
pub fn kron_apply(block: &DMatrix<f64>, x: &DVector<f64>, m: usize) -> DVector<f64> {
    let r = block.ncols();
    debug_assert_eq!(x.len(), m * r);
    let mut y = DVector::zeros(m * block.nrows());
    for i in 0..m {
        let seg = x.rows(i * r, r);
        y.rows_mut(i * block.nrows(), block.nrows()).copy_from(&(block * seg));
    }
    y
}

/// `S' = (I_m (x) B) S (I_m (x) B)'` block by block.
pub fn kron_sandwich(block: &DMatrix<f64>, s: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    let r = block.ncols();
    debug_assert_eq!(s.nrows(), m * r);
    debug_assert_eq!(s.ncols(), m * r);
    let n = block.nrows();
    let mut out = DMatrix::zeros(m * n, m * n);
    let bt = block.transpose();
    for i in 0..m {
        for j in 0..m {
            let sij = s.view((i * r, j * r), (r, r));
            let prod = block * sij * &bt;
            out.view_mut((i * n, j * n), (n, n)).copy_from(&prod);
        }
    }
    out
}

/// `S += I_m (x) B` in place.
pub fn kron_add_block_diag(s: &mut DMatrix<f64>, block: &DMatrix<f64>, m: usize) {
    let r = block.nrows();
    for i in 0..m {
        for a in 0..r {
            for b in 0..r {
                s[(i * r + a, i * r + b)] += block[(a, b)];
            }
        }
    }
}

/// Dense `I_m (x) B`, for small verification cases.
pub fn kron_dense(block: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    DMatrix::identity(m, m).kronecker(block)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::TemporalKernel;
    use crate::spectral::{factorize, realize};
    use approx::assert_relative_eq;

    fn se_kernel() -> SpatialKernel {
        SpatialKernel::SquaredExponential { length_scale: 5.0, amplitude: 1.0 }
    }

    fn line_points(m: usize) -> Vec<Vec<f64>> {
        (0..m).map(|i| vec![i as f64]).collect()
    }

    fn exp_realization() -> TemporalRealization {
        realize(&factorize(&TemporalKernel::Exponential { scale: 1.0, decay: 1.0 }).unwrap())
            .unwrap()
    }

    #[test]
    fn build_rejects_duplicates() {
        let pts = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![0.0, 1.0]];
        let err = LocationSet::build(pts, &se_kernel(), RootMethod::SymmetricEigen).unwrap_err();
        assert!(matches!(err, Error::DuplicateLocation(_)));
    }

    #[test]
    fn build_rejects_mixed_dimensions() {
        let pts = vec![vec![0.0], vec![1.0, 2.0]];
        let err = LocationSet::build(pts, &se_kernel(), RootMethod::SymmetricEigen).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn root_roundtrip_both_methods() {
        for method in [RootMethod::SymmetricEigen, RootMethod::Cholesky] {
            let set = LocationSet::build(line_points(6), &se_kernel(), method).unwrap();
            let rebuilt = set.root() * set.root().transpose();
            let err = (&rebuilt - set.gram()).amax() / set.gram().amax();
            assert!(err < 1e-10, "roundtrip error {err:.3e} for {method:?}");
            assert_eq!(set.jitter(), 0.0);
        }
    }

    #[test]
    fn solve_gram_inverts() {
        let set =
            LocationSet::build(line_points(5), &se_kernel(), RootMethod::SymmetricEigen).unwrap();
        let rhs = DMatrix::<f64>::identity(5, 5);
        let inv = set.solve_gram(&rhs).unwrap();
        let eye = set.gram() * inv;
        assert!((eye - DMatrix::<f64>::identity(5, 5)).amax() < 1e-10);
    }

    #[test]
    fn near_singular_set_escalates_jitter() {
        let pts = vec![vec![0.0], vec![1e-9], vec![1.0]];
        let set = LocationSet::build(pts, &se_kernel(), RootMethod::SymmetricEigen).unwrap();
        assert!(set.jitter() > 0.0);
        let rhs = DMatrix::<f64>::identity(3, 3);
        assert!(set.solve_gram(&rhs).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn cross_row_and_index_of() {
        let set =
            LocationSet::build(line_points(4), &se_kernel(), RootMethod::SymmetricEigen).unwrap();
        let row = set.cross_row(&[2.0]).unwrap();
        assert_relative_eq!(row[2], 1.0);
        assert_relative_eq!(row[1], (-0.2f64).exp(), max_relative = 1e-12);
        assert_eq!(set.index_of(&[3.0]), Some(3));
        assert_eq!(set.index_of(&[3.5]), None);
        assert!(set.cross_row(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn exponential_discretization_closed_form() {
        let real = exp_realization();
        for step in [0.05f64, 0.2, 1.0, 3.0] {
            let (a, q) = discretize_block(&real, step).unwrap();
            assert_relative_eq!(a[(0, 0)], (-step).exp(), max_relative = 1e-12);
            assert_relative_eq!(
                q[(0, 0)],
                0.5 * (1.0 - (-2.0 * step).exp()),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn discretization_zero_step_is_identity() {
        let real = exp_realization();
        let (a, q) = discretize_block(&real, 0.0).unwrap();
        assert_relative_eq!(a[(0, 0)], 1.0);
        assert_relative_eq!(q[(0, 0)], 0.0);
        assert!(discretize_block(&real, -0.1).is_err());
    }

    /// Simpson quadrature oracle for the process-noise integral.
    fn quadrature_noise(real: &TemporalRealization, step: f64, n: usize) -> DMatrix<f64> {
        let r = real.order();
        let g = real.noise_input();
        let diffusion = g * g.transpose();
        let h = step / n as f64;
        let mut acc = DMatrix::<f64>::zeros(r, r);
        for i in 0..=n {
            let tau = i as f64 * h;
            let e = (real.dynamics() * tau).exp();
            let term = &e * &diffusion * e.transpose();
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += term * w;
        }
        acc * h / 3.0
    }

    #[test]
    fn noise_integral_matches_quadrature() {
        let periodic =
            TemporalKernel::PeriodicExponential { scale: 2e3, decay: 5.0, frequency: 1.0 / 12.0 };
        let real = realize(&factorize(&periodic).unwrap()).unwrap();
        let (_, q) = discretize_block(&real, 0.3).unwrap();
        let oracle = quadrature_noise(&real, 0.3, 4000);
        assert!((&q - &oracle).amax() / oracle.amax() < 1e-9);
    }

    #[test]
    fn transition_semigroup_and_noise_recursion() {
        let periodic =
            TemporalKernel::PeriodicExponential { scale: 1.0, decay: 2.0, frequency: 0.3 };
        let real = realize(&factorize(&periodic).unwrap()).unwrap();
        let (a1, q1) = discretize_block(&real, 0.4).unwrap();
        let (a2, q2) = discretize_block(&real, 0.9).unwrap();
        let (a12, q12) = discretize_block(&real, 1.3).unwrap();
        assert!((&a2 * &a1 - &a12).amax() < 1e-12);
        let composed = &a2 * &q1 * a2.transpose() + &q2;
        assert!((&composed - &q12).amax() / q12.amax() < 1e-10);
    }

    #[test]
    fn long_step_noise_converges_to_stationary() {
        let real = exp_realization();
        let (_, q) = discretize_block(&real, 50.0).unwrap();
        let err = (&q - real.stationary_cov()).amax() / real.stationary_cov().amax();
        assert!(err < 1e-6);
    }

    #[test]
    fn kron_helpers_match_dense() {
        let block = DMatrix::from_row_slice(2, 2, &[0.3, -1.0, 0.7, 0.2]);
        let m = 3;
        let dense = kron_dense(&block, m);
        let x = DVector::from_fn(6, |i, _| (i as f64 + 1.0) * 0.5);
        assert!((kron_apply(&block, &x, m) - &dense * &x).amax() < 1e-14);
        let mut s = DMatrix::from_fn(6, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.25);
        s = &s * s.transpose();
        let expected = &dense * &s * dense.transpose();
        assert!((kron_sandwich(&block, &s, m) - expected).amax() < 1e-12);
        let mut added = s.clone();
        kron_add_block_diag(&mut added, &block, m);
        assert!((added - (&s + kron_dense(&block, m))).amax() < 1e-14);
    }

    #[test]
    fn stationary_prior_output_variance() {
        let set =
            LocationSet::build(line_points(5), &se_kernel(), RootMethod::SymmetricEigen).unwrap();
        let model = JointModel::new(set, exp_realization());
        let (mean, cov) = model.stationary_prior();
        assert!(mean.amax() == 0.0);
        let (f, fc) = model.output_estimate(&mean, &cov);
        assert!(f.amax() == 0.0);
        let expected = model.locations().gram() * 1.0;
        assert!((&fc - &expected).amax() / expected.amax() < 1e-8);
        crate::audit::check_covariance(&fc, "prior output").unwrap();
    }

    #[test]
    fn discretize_validates_active_and_noise() {
        let set =
            LocationSet::build(line_points(4), &se_kernel(), RootMethod::SymmetricEigen).unwrap();
        let model = JointModel::new(set, exp_realization());
        assert!(model.discretize(0.1, &[1, 1], &[0.1, 0.1]).is_err());
        assert!(model.discretize(0.1, &[2, 1], &[0.1, 0.1]).is_err());
        assert!(model.discretize(0.1, &[5], &[0.1]).is_err());
        assert!(model.discretize(0.1, &[1], &[0.0]).is_err());
        assert!(model.discretize(0.1, &[1], &[0.1, 0.2]).is_err());
        let ok = model.discretize(0.1, &[0, 2], &[0.1, 0.2]).unwrap();
        assert_eq!(ok.output_rows.nrows(), 2);
        assert_eq!(ok.output_rows.ncols(), 4);
    }

    #[test]
    fn output_rows_select_locations() {
        let set =
            LocationSet::build(line_points(3), &se_kernel(), RootMethod::SymmetricEigen).unwrap();
        let model = JointModel::new(set, exp_realization());
        let d = model.discretize(0.1, &[0, 1, 2], &[1.0, 1.0, 1.0]).unwrap();
        assert!((d.output_rows.clone() - model.output_map()).amax() < 1e-15);
        let d2 = model.discretize(0.1, &[2], &[1.0]).unwrap();
        assert!((d2.output_rows.row(0) - model.output_map().row(2)).amax() < 1e-15);
    }
}
