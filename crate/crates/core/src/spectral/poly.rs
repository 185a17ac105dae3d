//! Small real-polynomial utilities shared by the spectral routines.
//!
//! Polynomials are coefficient vectors in ascending powers: `p[k]` multiplies
//! `s^k`.

use nalgebra::{Complex, DMatrix};

pub type C64 = Complex<f64>;

/// Evaluates `p` at a complex argument by Horner's rule.
pub fn eval_complex(p: &[f64], s: C64) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for &c in p.iter().rev() {
        acc = acc * s + C64::new(c, 0.0);
    }
    acc
}

/// Product of two polynomials.
pub fn multiply(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Roots of the polynomial with the given ascending coefficients, via the
/// eigenvalues of its companion matrix. The leading coefficient must be
/// nonzero; returns `None` for degree-0 input or a vanishing leading term.
pub fn roots(p: &[f64]) -> Option<Vec<C64>> {
    let deg = p.len().checked_sub(1)?;
    if deg == 0 {
        return Some(Vec::new());
    }
    let lead = p[deg];
    if lead == 0.0 || !lead.is_finite() {
        return None;
    }
    let mut companion = DMatrix::<f64>::zeros(deg, deg);
    for i in 1..deg {
        companion[(i, i - 1)] = 1.0;
    }
    for k in 0..deg {
        companion[(0, deg - 1 - k)] = -p[k] / lead;
    }
    // companion here is in "top-row" orientation: char poly = monic p
    let mut fixed = DMatrix::<f64>::zeros(deg, deg);
    for i in 0..deg {
        for j in 0..deg {
            fixed[(i, j)] = companion[(deg - 1 - i, deg - 1 - j)];
        }
    }
    Some(fixed.complex_eigenvalues().iter().copied().collect())
}
