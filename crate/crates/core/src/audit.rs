//! Numerical hygiene checks for covariance matrices.
//!
//! Covariances produced anywhere in the crate are expected to stay symmetric
//! to 1e-12 relative and positive semidefinite up to a -1e-9 * trace floor on
//! the smallest eigenvalue. The filter enforces symmetry after every update;
//! the test suites call [`check_covariance`] on everything they emit.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative symmetry tolerance.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Eigenvalue floor, as a multiple of the trace.
pub const PSD_FLOOR: f64 = -1e-9;

/// Largest relative asymmetry `|a_ij - a_ji| / scale` in `m`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax().max(1e-300);
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs() / scale);
        }
    }
    worst
}

/// Replaces `m` with its symmetric part.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Verifies symmetry and the eigenvalue floor; `label` names the offender in
/// the error message.
pub fn check_covariance(m: &DMatrix<f64>, label: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{label}: covariance must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let asym = asymmetry(m);
    if asym > SYMMETRY_TOL {
        return Err(Error::Conditioning(format!(
            "{label}: asymmetry {asym:.3e} exceeds {SYMMETRY_TOL:.0e}"
        )));
    }
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eigs = sym.symmetric_eigenvalues();
    let min_eig = eigs.min();
    let floor = PSD_FLOOR * m.trace().abs().max(1e-300);
    if min_eig < floor {
        return Err(Error::Conditioning(format!(
            "{label}: eigenvalue {min_eig:.3e} below floor {floor:.3e}"
        )));
    }
    Ok(())
}
