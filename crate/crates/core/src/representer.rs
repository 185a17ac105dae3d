//! Extension of on-grid field estimates to arbitrary spatial points.
//!
//! The posterior at any query point is a linear function of the on-grid
//! posterior: weights solve the spatial Gram system against the cached
//! factorization, so a P-point extension costs O(P M^2) after the one-off
//! O(M^3) setup. Variances combine the prior at the query with the on-grid
//! posterior covariance through the same weights.

use nalgebra::{DMatrix, DVector};

use crate::audit;
use crate::error::{Error, Result};
use crate::statespace::JointModel;

/// A fixed set of spatial query points bound to one model's location set.
///
/// Weights are precomputed against the location-set factorization; rebuild
/// the query whenever the location set changes.
#[derive(Clone, Debug)]
pub struct SpatialQuery {
    points: Vec<Vec<f64>>,
    /// Cross-kernel rows `K_s(x*_p, X)`, one row per query point.
    cross: DMatrix<f64>,
    /// Weight rows `K_s(x*_p, X) K_s(X, X)^{-1}`.
    weights: DMatrix<f64>,
    /// Spatial prior at each query point, `K_s(x*_p, x*_p)`.
    prior: DVector<f64>,
    /// Stationary variance of the field implied by the model's realization.
    field_variance: f64,
    locations: usize,
}

impl SpatialQuery {
    pub fn new(model: &JointModel, points: Vec<Vec<f64>>) -> Result<Self> {
        let set = model.locations();
        let m = set.len();
        let p = points.len();
        let mut cross = DMatrix::zeros(p, m);
        let mut prior = DVector::zeros(p);
        for (row, point) in points.iter().enumerate() {
            cross.row_mut(row).tr_copy_from(&set.cross_row(point)?);
            prior[row] = set.kernel().eval(point, point)?;
        }
        // The h(0) factor cancels between the cross covariance and the grid
        // prior, so the weights solve the plain spatial Gram system.
        let weights = set.solve_gram(&cross.transpose())?.transpose();
        Ok(Self {
            points,
            cross,
            weights,
            prior,
            field_variance: model.effective_variance(),
            locations: m,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Weight rows mapping the on-grid estimate to the query points.
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Posterior mean at every query point given the on-grid posterior mean.
    pub fn extend_estimate(&self, field_mean: &DVector<f64>) -> Result<DVector<f64>> {
        if field_mean.len() != self.locations {
            return Err(Error::DimensionMismatch(format!(
                "field mean has {} entries for {} locations",
                field_mean.len(),
                self.locations
            )));
        }
        Ok(&self.weights * field_mean)
    }

    /// Posterior variance at every query point given the on-grid posterior
    /// covariance. Nonnegative by construction (tiny negative rounding
    /// residues are clamped).
    pub fn extend_variance(&self, field_cov: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_cov(field_cov)?;
        let mut out = DVector::zeros(self.len());
        for p in 0..self.len() {
            let w = self.weights.row(p);
            let explained = w.dot(&self.cross.row(p));
            let posterior = (w * field_cov * w.transpose())[(0, 0)];
            out[p] = (self.field_variance * (self.prior[p] - explained) + posterior).max(0.0);
        }
        Ok(out)
    }

    /// Joint covariance of the on-grid field and one query point, as an
    /// (M+1) x (M+1) matrix with the query in the last row and column.
    pub fn joint_covariance(&self, field_cov: &DMatrix<f64>, index: usize) -> Result<DMatrix<f64>> {
        self.check_cov(field_cov)?;
        if index >= self.len() {
            return Err(Error::InvalidInput(format!(
                "query index {index} out of range for {} points",
                self.len()
            )));
        }
        let m = self.locations;
        let w = self.weights.row(index);
        let cross_post = field_cov * w.transpose();
        let variance = self.extend_variance(field_cov)?[index];
        let mut joint = DMatrix::zeros(m + 1, m + 1);
        joint.view_mut((0, 0), (m, m)).copy_from(field_cov);
        for i in 0..m {
            joint[(i, m)] = cross_post[i];
            joint[(m, i)] = cross_post[i];
        }
        joint[(m, m)] = variance;
        audit::symmetrize(&mut joint);
        Ok(joint)
    }

    fn check_cov(&self, field_cov: &DMatrix<f64>) -> Result<()> {
        if field_cov.nrows() != self.locations || field_cov.ncols() != self.locations {
            return Err(Error::DimensionMismatch(format!(
                "field covariance is {}x{} for {} locations",
                field_cov.nrows(),
                field_cov.ncols(),
                self.locations
            )));
        }
        Ok(())
    }
}
