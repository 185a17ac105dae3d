//! Space/time-separable covariance kernels.
//!
//! A separable kernel is the product `K(x, x', t, t') = K_s(x, x') h(t - t')`
//! of a stationary spatial kernel and a stationary temporal kernel. The
//! temporal part carries the whole variance through its `scale` parameter
//! (`h(0) = scale`); spatial kernels are correlation-shaped with
//! `K_s(x, x) = amplitude`, default 1.
//!
//! Distance conventions differ per family and are fixed here once:
//! the spatial squared-exponential divides the *squared* distance by the
//! raw length scale, `exp(-||x - x'||^2 / length_scale)`, while the temporal
//! squared-exponential divides by the *squared* decay,
//! `exp(-|tau|^2 / decay^2)`. Spatial exponential uses
//! `exp(-||x - x'|| / length_scale)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_amplitude() -> f64 {
    1.0
}

/// Stationary spatial covariance over fixed-dimension points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpatialKernel {
    /// `amplitude * exp(-||x - x'||^2 / length_scale)`
    SquaredExponential {
        length_scale: f64,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
    },
    /// `amplitude * exp(-||x - x'|| / length_scale)`
    Exponential {
        length_scale: f64,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
    },
}

impl SpatialKernel {
    pub fn validate(&self) -> Result<()> {
        let (ls, amp) = match self {
            SpatialKernel::SquaredExponential { length_scale, amplitude }
            | SpatialKernel::Exponential { length_scale, amplitude } => (*length_scale, *amplitude),
        };
        if !(ls.is_finite() && ls > 0.0) {
            return Err(Error::InvalidInput(format!(
                "spatial length_scale must be positive and finite, got {ls}"
            )));
        }
        if !(amp.is_finite() && amp > 0.0) {
            return Err(Error::InvalidInput(format!(
                "spatial amplitude must be positive and finite, got {amp}"
            )));
        }
        Ok(())
    }

    pub fn amplitude(&self) -> f64 {
        match self {
            SpatialKernel::SquaredExponential { amplitude, .. }
            | SpatialKernel::Exponential { amplitude, .. } => *amplitude,
        }
    }

    /// Covariance between two points of equal dimension.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "spatial kernel arguments have dimensions {} and {}",
                x.len(),
                y.len()
            )));
        }
        if x.is_empty() {
            return Err(Error::InvalidInput("zero-dimensional point".into()));
        }
        let sq_dist: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(match self {
            SpatialKernel::SquaredExponential { length_scale, amplitude } => {
                amplitude * (-sq_dist / length_scale).exp()
            }
            SpatialKernel::Exponential { length_scale, amplitude } => {
                amplitude * (-sq_dist.sqrt() / length_scale).exp()
            }
        })
    }
}

/// Stationary temporal covariance `h(tau)`; even in `tau`, `h(0) = scale`.
///
/// `scale` of zero is admitted so degenerate (identically zero) processes can
/// be sampled; spectral factorization requires it positive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum TemporalKernel {
    /// `scale * exp(-|tau| / decay)`
    Exponential { scale: f64, decay: f64 },
    /// `scale * cos(2 pi frequency |tau|) * exp(-|tau| / decay)`
    PeriodicExponential { scale: f64, decay: f64, frequency: f64 },
    /// `scale * exp(-|tau|^2 / decay^2)`
    SquaredExponential { scale: f64, decay: f64 },
}

impl TemporalKernel {
    pub fn validate(&self) -> Result<()> {
        let (scale, decay) = (self.scale(), self.decay());
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "temporal scale must be nonnegative and finite, got {scale}"
            )));
        }
        if !(decay.is_finite() && decay > 0.0) {
            return Err(Error::InvalidInput(format!(
                "temporal decay must be positive and finite, got {decay}"
            )));
        }
        if let TemporalKernel::PeriodicExponential { frequency, .. } = self {
            if !(frequency.is_finite() && *frequency >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "temporal frequency must be nonnegative and finite, got {frequency}"
                )));
            }
        }
        Ok(())
    }

    /// Variance `h(0)`.
    pub fn scale(&self) -> f64 {
        match self {
            TemporalKernel::Exponential { scale, .. }
            | TemporalKernel::PeriodicExponential { scale, .. }
            | TemporalKernel::SquaredExponential { scale, .. } => *scale,
        }
    }

    /// Characteristic time constant.
    pub fn decay(&self) -> f64 {
        match self {
            TemporalKernel::Exponential { decay, .. }
            | TemporalKernel::PeriodicExponential { decay, .. }
            | TemporalKernel::SquaredExponential { decay, .. } => *decay,
        }
    }

    /// Whether a finite-order rational spectral factor exists in closed form.
    pub fn has_exact_factor(&self) -> bool {
        !matches!(self, TemporalKernel::SquaredExponential { .. })
    }

    /// Covariance at lag `tau`.
    pub fn eval(&self, tau: f64) -> f64 {
        let a = tau.abs();
        match self {
            TemporalKernel::Exponential { scale, decay } => scale * (-a / decay).exp(),
            TemporalKernel::PeriodicExponential { scale, decay, frequency } => {
                scale * (std::f64::consts::TAU * frequency * a).cos() * (-a / decay).exp()
            }
            TemporalKernel::SquaredExponential { scale, decay } => {
                scale * (-(a * a) / (decay * decay)).exp()
            }
        }
    }

    /// Power spectral density at angular frequency `omega`:
    /// the Fourier transform of `h`, so `h(0) = (1/2pi) integral S`.
    pub fn psd(&self, omega: f64) -> f64 {
        let w2 = omega * omega;
        match self {
            TemporalKernel::Exponential { scale, decay } => {
                2.0 * scale * decay / (1.0 + decay * decay * w2)
            }
            TemporalKernel::PeriodicExponential { scale, decay, frequency } => {
                let alpha2 = 1.0 / (decay * decay);
                let beta2 = {
                    let b = std::f64::consts::TAU * frequency;
                    b * b
                };
                let s = alpha2 + beta2;
                2.0 * (scale / decay) * (w2 + s) / (w2 * w2 + 2.0 * (alpha2 - beta2) * w2 + s * s)
            }
            TemporalKernel::SquaredExponential { scale, decay } => {
                scale * decay * std::f64::consts::PI.sqrt() * (-w2 * decay * decay / 4.0).exp()
            }
        }
    }
}

/// Product kernel over space-time records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparableKernel {
    pub spatial: SpatialKernel,
    pub temporal: TemporalKernel,
}

impl SeparableKernel {
    pub fn new(spatial: SpatialKernel, temporal: TemporalKernel) -> Result<Self> {
        spatial.validate()?;
        temporal.validate()?;
        Ok(SeparableKernel { spatial, temporal })
    }

    pub fn validate(&self) -> Result<()> {
        self.spatial.validate()?;
        self.temporal.validate()
    }

    /// `K_s(x, y) * h(t - u)`.
    pub fn eval(&self, x: &[f64], t: f64, y: &[f64], u: f64) -> Result<f64> {
        Ok(self.spatial.eval(x, y)? * self.temporal.eval(t - u))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn squared_exponential_spatial_value() {
        let k = SpatialKernel::SquaredExponential { length_scale: 5.0, amplitude: 1.0 };
        // squared distance 25 over raw length scale 5
        assert_relative_eq!(
            k.eval(&[0.0], &[5.0]).unwrap(),
            6.737946999085467e-3,
            max_relative = 1e-12
        );
        assert_relative_eq!(k.eval(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 1.0);
    }

    #[test]
    fn exponential_spatial_value() {
        let k = SpatialKernel::Exponential { length_scale: 2.0, amplitude: 1.0 };
        assert_relative_eq!(
            k.eval(&[0.0, 0.0], &[0.0, 2.0]).unwrap(),
            (-1.0f64).exp(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn spatial_dimension_mismatch() {
        let k = SpatialKernel::Exponential { length_scale: 1.0, amplitude: 1.0 };
        assert!(k.eval(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn spatial_validation() {
        assert!(SpatialKernel::SquaredExponential { length_scale: 0.0, amplitude: 1.0 }
            .validate()
            .is_err());
        assert!(SpatialKernel::SquaredExponential { length_scale: 1.0, amplitude: -1.0 }
            .validate()
            .is_err());
    }

    #[test]
    fn temporal_exponential_values() {
        let h = TemporalKernel::Exponential { scale: 1.0, decay: 1.0 };
        assert_relative_eq!(h.eval(0.0), 1.0);
        assert_relative_eq!(h.eval(2.0), (-2.0f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(h.eval(-2.0), h.eval(2.0));
    }

    #[test]
    fn temporal_periodic_values() {
        let h = TemporalKernel::PeriodicExponential { scale: 2e3, decay: 5.0, frequency: 1.0 / 12.0 };
        assert_relative_eq!(h.eval(0.0), 2e3);
        // quarter period: the cosine passes through zero
        assert!(h.eval(3.0).abs() < 1e-12);
        assert_relative_eq!(
            h.eval(6.0),
            2e3 * (-1.2f64).exp() * (std::f64::consts::PI).cos(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn temporal_squared_exponential_uses_squared_decay() {
        let h = TemporalKernel::SquaredExponential { scale: 1.0, decay: 2.0 };
        assert_relative_eq!(h.eval(2.0), (-1.0f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn exponential_psd_closed_form() {
        let h = TemporalKernel::Exponential { scale: 1.0, decay: 1.0 };
        assert_relative_eq!(h.psd(0.0), 2.0, max_relative = 1e-12);
        assert_relative_eq!(h.psd(1.0), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn periodic_psd_matches_rational_expression() {
        let (scale, decay, frequency) = (2e3, 5.0, 1.0 / 12.0);
        let h = TemporalKernel::PeriodicExponential { scale, decay, frequency };
        let alpha2 = 1.0 / (decay * decay);
        let beta2 = (std::f64::consts::TAU * frequency).powi(2);
        for &w in &[0.0, 0.1, 0.5, 1.0, 3.0, 10.0] {
            let w2: f64 = w * w;
            let expected = 2.0 * (scale / decay) * (w2 + alpha2 + beta2)
                / (w2 * w2 + 2.0 * (alpha2 - beta2) * w2 + (alpha2 + beta2).powi(2));
            assert_relative_eq!(h.psd(w), expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn squared_exponential_psd_at_zero() {
        let h = TemporalKernel::SquaredExponential { scale: 3.0, decay: 2.0 };
        assert_relative_eq!(h.psd(0.0), 6.0 * std::f64::consts::PI.sqrt(), max_relative = 1e-12);
    }

    /// `(1/pi) * integral_0^inf S(w) dw` recovers `h(0)`: composite Simpson on
    /// a fine head interval plus a `c / w^2` tail extrapolation.
    fn psd_mass(h: &TemporalKernel) -> f64 {
        let head_end = 2000.0 / h.decay();
        let n = 400_000;
        let step = head_end / n as f64;
        let mut acc = h.psd(0.0) + h.psd(head_end);
        for i in 1..n {
            let w = i as f64 * step;
            acc += h.psd(w) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let head = acc * step / 3.0;
        let tail = h.psd(head_end) * head_end;
        (head + tail) / std::f64::consts::PI
    }

    #[test]
    fn psd_integrates_to_variance() {
        let kernels = [
            TemporalKernel::Exponential { scale: 1.0, decay: 1.0 },
            TemporalKernel::PeriodicExponential { scale: 2e3, decay: 5.0, frequency: 1.0 / 12.0 },
            TemporalKernel::SquaredExponential { scale: 2.5, decay: 1.4142135623730951 },
        ];
        for h in kernels {
            let mass = psd_mass(&h);
            assert_relative_eq!(mass, h.scale(), max_relative = 1e-3);
        }
    }

    #[test]
    fn temporal_validation() {
        assert!(TemporalKernel::Exponential { scale: -1.0, decay: 1.0 }.validate().is_err());
        assert!(TemporalKernel::Exponential { scale: 1.0, decay: 0.0 }.validate().is_err());
        assert!(TemporalKernel::PeriodicExponential { scale: 1.0, decay: 1.0, frequency: -0.1 }
            .validate()
            .is_err());
        assert!(TemporalKernel::Exponential { scale: 0.0, decay: 1.0 }.validate().is_ok());
    }

    #[test]
    fn separable_product() {
        let k = SeparableKernel::new(
            SpatialKernel::SquaredExponential { length_scale: 5.0, amplitude: 1.0 },
            TemporalKernel::Exponential { scale: 2.0, decay: 1.0 },
        )
        .unwrap();
        let v = k.eval(&[0.0], 0.0, &[5.0], 1.0).unwrap();
        assert_relative_eq!(v, 6.737946999085467e-3 * 2.0 * (-1.0f64).exp(), max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn temporal_even_and_bounded(
            tau in -50.0f64..50.0,
            scale in 0.1f64..10.0,
            decay in 0.1f64..10.0,
            freq in 0.0f64..2.0,
        ) {
            let kernels = [
                TemporalKernel::Exponential { scale, decay },
                TemporalKernel::PeriodicExponential { scale, decay, frequency: freq },
                TemporalKernel::SquaredExponential { scale, decay },
            ];
            for h in kernels {
                let v = h.eval(tau);
                prop_assert!((v - h.eval(-tau)).abs() <= 1e-12 * scale);
                prop_assert!(v.abs() <= h.scale() + 1e-12 * scale);
            }
        }

        #[test]
        fn psd_nonnegative(
            w in 0.0f64..100.0,
            scale in 0.1f64..10.0,
            decay in 0.1f64..10.0,
            freq in 0.0f64..2.0,
        ) {
            let kernels = [
                TemporalKernel::Exponential { scale, decay },
                TemporalKernel::PeriodicExponential { scale, decay, frequency: freq },
                TemporalKernel::SquaredExponential { scale, decay },
            ];
            for h in kernels {
                prop_assert!(h.psd(w) >= 0.0);
            }
        }
    }
}
