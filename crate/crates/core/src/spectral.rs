//! Spectral factorization of rational temporal spectra and their state-space
//! realizations.
//!
//! A temporal kernel with rational power spectral density
//! `S(w) = W(iw) W(-iw)` admits a stable causal factor
//!
//! ```text
//!            b_{r-1} (iw)^{r-1} + ... + b_1 (iw) + b_0
//! W(iw) = ---------------------------------------------
//!          (iw)^r + a_{r-1} (iw)^{r-1} + ... + a_0
//! ```
//!
//! realized in companion form as `ds = F s dt + G dw`, `z = H s`, where the
//! stationary state covariance solves the continuous Lyapunov equation
//! `F X + X F' + G G' = 0`. The exponential and periodic-exponential kernels
//! factor in closed form (orders 1 and 2); the squared-exponential has a
//! non-rational spectrum and must go through [`fit::approximate_psd`].

mod poly;

pub mod fit;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::TemporalKernel;

use poly::{eval_complex, roots, C64};

/// Margin used when classifying denominator roots as stable.
const STABILITY_TOL: f64 = 1e-9;

/// A stable rational spectral factor `W(iw)` with monic degree-`r`
/// denominator and degree-`< r` numerator, both in ascending coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpectralFactor", into = "RawSpectralFactor")]
pub struct SpectralFactor {
    numerator: Vec<f64>,
    denominator: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpectralFactor {
    numerator: Vec<f64>,
    denominator: Vec<f64>,
}

impl From<SpectralFactor> for RawSpectralFactor {
    fn from(f: SpectralFactor) -> Self {
        RawSpectralFactor { numerator: f.numerator, denominator: f.denominator }
    }
}

impl TryFrom<RawSpectralFactor> for SpectralFactor {
    type Error = Error;
    fn try_from(raw: RawSpectralFactor) -> Result<Self> {
        SpectralFactor::new(raw.numerator, raw.denominator)
    }
}

impl SpectralFactor {
    /// Builds and validates a factor. `numerator` holds `b_0..b_{r-1}`,
    /// `denominator` holds `a_0..a_{r-1}` of the monic denominator. The
    /// denominator must be Hurwitz; the numerator sign is normalized so that
    /// `W(0) >= 0`.
    pub fn new(numerator: Vec<f64>, denominator: Vec<f64>) -> Result<Self> {
        let r = denominator.len();
        if r == 0 {
            return Err(Error::InvalidInput("spectral factor must have order >= 1".into()));
        }
        if numerator.len() != r {
            return Err(Error::DimensionMismatch(format!(
                "numerator has {} coefficients, expected {} for order {}",
                numerator.len(),
                r,
                r
            )));
        }
        if !numerator.iter().chain(denominator.iter()).all(|c| c.is_finite()) {
            return Err(Error::InvalidInput("non-finite factor coefficient".into()));
        }
        let mut monic = denominator.clone();
        monic.push(1.0);
        let den_roots = roots(&monic)
            .ok_or_else(|| Error::InvalidInput("degenerate denominator".into()))?;
        let scale = denominator.iter().fold(1.0f64, |m, c| m.max(c.abs()));
        for root in &den_roots {
            if root.re >= -STABILITY_TOL * scale.max(1.0) {
                return Err(Error::Unstable(format!(
                    "denominator root {:.6e}{:+.6e}i is not in the open left half-plane",
                    root.re, root.im
                )));
            }
        }
        let mut numerator = numerator;
        if numerator[0] < 0.0 {
            for b in &mut numerator {
                *b = -*b;
            }
        }
        Ok(SpectralFactor { numerator, denominator })
    }

    pub fn order(&self) -> usize {
        self.denominator.len()
    }

    /// `b_0..b_{r-1}`.
    pub fn numerator(&self) -> &[f64] {
        &self.numerator
    }

    /// `a_0..a_{r-1}` of the monic denominator.
    pub fn denominator(&self) -> &[f64] {
        &self.denominator
    }

    /// Transfer function value `W(iw)`.
    pub fn transfer(&self, omega: f64) -> C64 {
        let s = C64::new(0.0, omega);
        let num = eval_complex(&self.numerator, s);
        let mut monic = self.denominator.clone();
        monic.push(1.0);
        num / eval_complex(&monic, s)
    }

    /// Spectral density `|W(iw)|^2` of the factor.
    pub fn psd(&self, omega: f64) -> f64 {
        self.transfer(omega).norm_sqr()
    }
}

/// Companion-form causal realization of a spectral factor, plus the
/// stationary covariance of its state.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalRealization {
    dynamics: DMatrix<f64>,
    noise_input: DVector<f64>,
    output: RowDVector<f64>,
    stationary_cov: DMatrix<f64>,
}

impl TemporalRealization {
    /// Validates shapes and stability, and solves for the stationary
    /// covariance.
    pub fn new(
        dynamics: DMatrix<f64>,
        noise_input: DVector<f64>,
        output: RowDVector<f64>,
    ) -> Result<Self> {
        let r = dynamics.nrows();
        if r == 0 || dynamics.ncols() != r {
            return Err(Error::DimensionMismatch(format!(
                "dynamics must be square and nonempty, got {}x{}",
                dynamics.nrows(),
                dynamics.ncols()
            )));
        }
        if noise_input.len() != r || output.len() != r {
            return Err(Error::DimensionMismatch(format!(
                "noise input ({}) and output ({}) must match state dimension {}",
                noise_input.len(),
                output.len(),
                r
            )));
        }
        let diffusion = &noise_input * noise_input.transpose();
        let stationary_cov = solve_lyapunov(&dynamics, &diffusion)?;
        Ok(TemporalRealization { dynamics, noise_input, output, stationary_cov })
    }

    /// State dimension `r`.
    pub fn order(&self) -> usize {
        self.dynamics.nrows()
    }

    pub fn dynamics(&self) -> &DMatrix<f64> {
        &self.dynamics
    }

    pub fn noise_input(&self) -> &DVector<f64> {
        &self.noise_input
    }

    pub fn output(&self) -> &RowDVector<f64> {
        &self.output
    }

    pub fn stationary_cov(&self) -> &DMatrix<f64> {
        &self.stationary_cov
    }

    /// Stationary variance of the scalar output, `H X H'`.
    pub fn output_variance(&self) -> f64 {
        (&self.output * &self.stationary_cov * self.output.transpose())[(0, 0)]
    }

    /// Stationary output autocovariance `H e^{F |tau|} X H'`.
    pub fn autocovariance(&self, tau: f64) -> f64 {
        let propagated = (self.dynamics.clone() * tau.abs()).exp() * &self.stationary_cov;
        (&self.output * propagated * self.output.transpose())[(0, 0)]
    }
}

/// Closed-form spectral factor for kernels with exactly rational spectra.
///
/// Exponential gives order 1; periodic-exponential gives order 2. The
/// squared-exponential spectrum is Gaussian-shaped, hence non-rational, and
/// is rejected here.
pub fn factorize(kernel: &TemporalKernel) -> Result<SpectralFactor> {
    kernel.validate()?;
    if kernel.scale() <= 0.0 {
        return Err(Error::InvalidInput(
            "spectral factorization requires a strictly positive temporal scale".into(),
        ));
    }
    match *kernel {
        TemporalKernel::Exponential { scale, decay } => {
            let gain = (2.0 * scale / decay).sqrt();
            SpectralFactor::new(vec![gain], vec![1.0 / decay])
        }
        TemporalKernel::PeriodicExponential { scale, decay, frequency } => {
            let alpha = 1.0 / decay;
            let beta = std::f64::consts::TAU * frequency;
            let corner2 = alpha * alpha + beta * beta;
            let gain = (2.0 * scale / decay).sqrt();
            SpectralFactor::new(vec![gain * corner2.sqrt(), gain], vec![corner2, 2.0 * alpha])
        }
        TemporalKernel::SquaredExponential { .. } => {
            Err(Error::UnsupportedExactFactorization("squared_exponential temporal kernel".into()))
        }
    }
}

/// Companion-form realization of a factor: superdiagonal ones, negated
/// denominator coefficients in the last row, unit noise input on the last
/// state, numerator coefficients as the output row.
pub fn realize(factor: &SpectralFactor) -> Result<TemporalRealization> {
    let r = factor.order();
    let mut dynamics = DMatrix::<f64>::zeros(r, r);
    for i in 0..r.saturating_sub(1) {
        dynamics[(i, i + 1)] = 1.0;
    }
    for (j, &a) in factor.denominator().iter().enumerate() {
        dynamics[(r - 1, j)] = -a;
    }
    let mut noise_input = DVector::<f64>::zeros(r);
    noise_input[r - 1] = 1.0;
    let output = RowDVector::from_row_slice(factor.numerator());
    TemporalRealization::new(dynamics, noise_input, output)
}

/// Solves the continuous Lyapunov equation `F X + X F' + Q = 0` for
/// symmetric `Q`, by vectorization: `(I (x) F + F (x) I) vec X = -vec Q`.
/// The dynamics must be Hurwitz. Intended for the small state dimensions of
/// temporal realizations; cost grows as the sixth power of the size.
pub fn solve_lyapunov(dynamics: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let r = dynamics.nrows();
    if dynamics.ncols() != r || q.nrows() != r || q.ncols() != r {
        return Err(Error::DimensionMismatch(format!(
            "lyapunov operands must be square of equal size, got {}x{} and {}x{}",
            dynamics.nrows(),
            dynamics.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    let scale = dynamics.amax().max(1.0);
    for eig in dynamics.complex_eigenvalues().iter() {
        if eig.re >= -STABILITY_TOL * scale {
            return Err(Error::Unstable(format!(
                "dynamics eigenvalue {:.6e}{:+.6e}i is not in the open left half-plane",
                eig.re, eig.im
            )));
        }
    }
    let eye = DMatrix::<f64>::identity(r, r);
    let system = eye.kronecker(dynamics) + dynamics.kronecker(&eye);
    let rhs = DVector::from_column_slice(q.as_slice());
    let solution = system
        .lu()
        .solve(&(-rhs))
        .ok_or_else(|| Error::Conditioning("singular Lyapunov system".into()))?;
    let mut x = DMatrix::from_column_slice(r, r, solution.as_slice());
    crate::audit::symmetrize(&mut x);
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn exponential() -> TemporalKernel {
        TemporalKernel::Exponential { scale: 1.0, decay: 1.0 }
    }

    fn periodic() -> TemporalKernel {
        TemporalKernel::PeriodicExponential { scale: 2e3, decay: 5.0, frequency: 1.0 / 12.0 }
    }

    #[test]
    fn exponential_factor_coefficients() {
        let f = factorize(&exponential()).unwrap();
        assert_eq!(f.order(), 1);
        assert_relative_eq!(f.denominator()[0], 1.0, max_relative = 1e-15);
        assert_relative_eq!(f.numerator()[0], 2.0f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn periodic_factor_coefficients() {
        let f = factorize(&periodic()).unwrap();
        assert_eq!(f.order(), 2);
        let alpha = 1.0 / 5.0;
        let beta = std::f64::consts::TAU / 12.0;
        let corner2 = alpha * alpha + beta * beta;
        let gain = (2.0 * 2e3 / 5.0f64).sqrt();
        assert_relative_eq!(f.denominator()[0], corner2, max_relative = 1e-14);
        assert_relative_eq!(f.denominator()[1], 2.0 * alpha, max_relative = 1e-14);
        assert_relative_eq!(f.numerator()[0], gain * corner2.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(f.numerator()[1], gain, max_relative = 1e-14);
    }

    #[test]
    fn factor_psd_matches_kernel_psd() {
        for kernel in [exponential(), periodic()] {
            let f = factorize(&kernel).unwrap();
            for &w in &[0.0, 0.01, 0.1, 0.5, 1.0, 3.0, 17.0] {
                assert_relative_eq!(f.psd(w), kernel.psd(w), max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn squared_exponential_has_no_exact_factor() {
        let err = factorize(&TemporalKernel::SquaredExponential { scale: 1.0, decay: 1.0 })
            .unwrap_err();
        assert!(matches!(err, Error::UnsupportedExactFactorization(_)));
    }

    #[test]
    fn zero_scale_rejected() {
        let err = factorize(&TemporalKernel::Exponential { scale: 0.0, decay: 1.0 }).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn factor_rejects_unstable_denominator() {
        // denominator s - 1
        let err = SpectralFactor::new(vec![1.0], vec![-1.0]).unwrap_err();
        assert!(matches!(err, Error::Unstable(_)));
    }

    #[test]
    fn factor_normalizes_sign() {
        let f = SpectralFactor::new(vec![-2.0], vec![1.0]).unwrap();
        assert_relative_eq!(f.numerator()[0], 2.0);
        assert!(f.transfer(0.0).re >= 0.0);
    }

    #[test]
    fn factor_serde_roundtrip_validates() {
        let f = factorize(&periodic()).unwrap();
        let json = serde_json::to_string(&f).unwrap();
        let back: SpectralFactor = serde_json::from_str(&json).unwrap();
        assert_eq!(f, back);
        let bad = r#"{"numerator":[1.0],"denominator":[-1.0]}"#;
        assert!(serde_json::from_str::<SpectralFactor>(bad).is_err());
    }

    #[test]
    fn exponential_realization_closed_form() {
        let real = realize(&factorize(&exponential()).unwrap()).unwrap();
        assert_eq!(real.order(), 1);
        assert_relative_eq!(real.dynamics()[(0, 0)], -1.0);
        assert_relative_eq!(real.noise_input()[0], 1.0);
        assert_relative_eq!(real.output()[0], 2.0f64.sqrt());
        assert_relative_eq!(real.stationary_cov()[(0, 0)], 0.5, max_relative = 1e-12);
    }

    #[test]
    fn companion_structure() {
        let real = realize(&factorize(&periodic()).unwrap()).unwrap();
        let f = real.dynamics();
        assert_relative_eq!(f[(0, 0)], 0.0);
        assert_relative_eq!(f[(0, 1)], 1.0);
        let alpha = 1.0 / 5.0;
        let beta = std::f64::consts::TAU / 12.0;
        assert_relative_eq!(f[(1, 0)], -(alpha * alpha + beta * beta), max_relative = 1e-14);
        assert_relative_eq!(f[(1, 1)], -2.0 * alpha, max_relative = 1e-14);
    }

    #[test]
    fn realization_matches_kernel_autocovariance() {
        for kernel in [exponential(), periodic()] {
            let real = realize(&factorize(&kernel).unwrap()).unwrap();
            let scale = kernel.scale();
            let decay = kernel.decay();
            let mut tau = 0.0;
            while tau <= 5.0 * decay {
                assert!(
                    (real.autocovariance(tau) - kernel.eval(tau)).abs() <= 1e-6 * scale,
                    "autocovariance mismatch at tau = {tau}"
                );
                tau += 0.25 * decay;
            }
        }
    }

    #[test]
    fn output_variance_matches_kernel_variance() {
        for kernel in [exponential(), periodic()] {
            let real = realize(&factorize(&kernel).unwrap()).unwrap();
            assert_relative_eq!(real.output_variance(), kernel.scale(), max_relative = 1e-8);
        }
    }

    #[test]
    fn lyapunov_scalar() {
        let f = DMatrix::from_row_slice(1, 1, &[-1.0]);
        let q = DMatrix::from_row_slice(1, 1, &[1.0]);
        let x = solve_lyapunov(&f, &q).unwrap();
        assert_relative_eq!(x[(0, 0)], 0.5, max_relative = 1e-14);
    }

    #[test]
    fn lyapunov_residual_and_positivity() {
        let f = DMatrix::from_row_slice(3, 3, &[-2.0, 1.0, 0.0, 0.0, -1.5, 0.5, -0.3, 0.0, -0.8]);
        let g = DVector::from_column_slice(&[0.2, -1.0, 0.7]);
        let q = &g * g.transpose();
        let x = solve_lyapunov(&f, &q).unwrap();
        let residual = &f * &x + &x * f.transpose() + &q;
        assert!(residual.amax() < 1e-12);
        assert!(x.clone().symmetric_eigenvalues().min() > 0.0);
        crate::audit::check_covariance(&x, "lyapunov").unwrap();
    }

    #[test]
    fn lyapunov_rejects_unstable() {
        let f = DMatrix::from_row_slice(1, 1, &[0.5]);
        let q = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert!(matches!(solve_lyapunov(&f, &q), Err(Error::Unstable(_))));
    }

    #[test]
    fn lyapunov_rejects_shape_mismatch() {
        let f = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]);
        let q = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert!(matches!(solve_lyapunov(&f, &q), Err(Error::DimensionMismatch(_))));
    }
}
