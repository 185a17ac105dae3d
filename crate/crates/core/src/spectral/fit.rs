//! Rational approximation of non-rational temporal spectra.
//!
//! Fits a stable order-`r` spectral factor to a target density `S` by
//! weighted nonlinear least squares on a discrete frequency grid,
//!
//! ```text
//! minimize  sum_i (|W(i w_i)|^2 - S(w_i))^2 / (S(w_i) + e * max S)
//! ```
//!
//! with `e = 1e-6`. The density is the variance density of the process, so
//! inverse-variance weighting makes the error relative wherever the target
//! has mass, while the floor keeps far-tail deviations penalized in absolute
//! terms; without it, a fit can hide spurious mass at frequencies where the
//! target underflows, which inflates the realized process variance.
//!
//! The denominator is parameterized as a product of damped second-order
//! sections (plus one first-order section for odd orders) with positive
//! coefficients stored in log space, so every iterate is Hurwitz by
//! construction. The numerator coefficients are free; the final sign is
//! normalized so `W(0) >= 0`.
//!
//! Orders above two are fitted as a ladder: the order `r - 2` solution is
//! refitted with an extra cancelling pole-zero section among the candidate
//! starts, which reproduces its objective exactly, so the achieved objective
//! is non-increasing in the order. Five seeded random restarts plus a
//! deterministic inverse-spectrum start round out the candidate set.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::rng::substream;

use super::poly::{eval_complex, multiply, roots, C64};
use super::SpectralFactor;

/// Default fitting grid: `points` log-spaced angular frequencies spanning
/// `[1e-3, 1e3] / decay`.
pub fn default_frequency_grid(decay: f64, points: usize) -> Vec<f64> {
    let lo = 1e-3 / decay;
    let hi = 1e3 / decay;
    log_spaced(lo, hi, points)
}

pub const DEFAULT_GRID_POINTS: usize = 400;

fn log_spaced(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| (llo + (lhi - llo) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

/// Result of a spectral-density fit.
#[derive(Clone, Debug)]
pub struct PsdFit {
    pub factor: SpectralFactor,
    /// Achieved weighted sum of squared density errors.
    pub objective: f64,
}

/// Fits an order-`order` stable spectral factor to the target density over
/// the grid. Deterministic for a fixed `(target, order, grid, seed)`.
pub fn approximate_psd(
    target: &dyn Fn(f64) -> f64,
    order: usize,
    grid: &[f64],
    seed: u64,
) -> Result<PsdFit> {
    if order == 0 {
        return Err(Error::InvalidInput("approximation order must be >= 1".into()));
    }
    if grid.is_empty() {
        return Err(Error::InvalidInput("frequency grid must be nonempty".into()));
    }
    let values: Vec<f64> = grid.iter().map(|&w| target(w)).collect();
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidInput(
            "target density must be finite and nonnegative on the grid".into(),
        ));
    }
    if values.iter().all(|v| *v == 0.0) {
        return Err(Error::InvalidInput("target density vanishes on the whole grid".into()));
    }

    let problem = Problem::new(grid.to_vec(), values, order);
    let mut rng = substream(seed, &format!("psd-fit-order-{order}"));

    let mut candidates: Vec<DVector<f64>> = Vec::new();
    if order > 2 {
        // Ladder: refit the lower-order solution with a cancelling section.
        let lower = approximate_psd(target, order - 2, grid, seed)?;
        if let Some(x) = problem.embed_lower_order(&lower.factor) {
            candidates.push(x);
        }
    }
    if let Some(x) = problem.inverse_spectrum_start() {
        candidates.push(x);
    }
    for _ in 0..5 {
        candidates.push(problem.random_start(&mut rng));
    }

    let mut best: Option<(DVector<f64>, f64)> = None;
    for x0 in candidates {
        let (x, cost) = levenberg_marquardt(|x| problem.residuals(x), x0, 200);
        if cost.is_finite() && best.as_ref().map_or(true, |(_, c)| cost < *c) {
            best = Some((x, cost));
        }
    }
    let (x, objective) =
        best.ok_or_else(|| Error::ApproximationFailed("no restart produced a finite fit".into()))?;
    let factor = problem.factor_from_params(&x)?;
    Ok(PsdFit { factor, objective })
}

/// Fit problem: grid, target values, weights, and the section layout.
/// Relative share of the peak density added to every weight denominator.
const WEIGHT_FLOOR: f64 = 1e-6;

struct Problem {
    grid: Vec<f64>,
    values: Vec<f64>,
    /// Square roots of the inverse-variance weights.
    root_weights: Vec<f64>,
    order: usize,
    pairs: usize,
    has_linear: bool,
    /// Characteristic frequency used to scale initializers.
    bandwidth: f64,
}

impl Problem {
    fn new(grid: Vec<f64>, values: Vec<f64>, order: usize) -> Self {
        let peak = values.iter().cloned().fold(0.0f64, f64::max);
        let bandwidth = grid
            .iter()
            .zip(&values)
            .filter(|(_, v)| **v >= 1e-3 * peak)
            .map(|(w, _)| *w)
            .fold(0.0f64, f64::max)
            .max(grid[0]);
        let root_weights =
            values.iter().map(|v| 1.0 / (v + WEIGHT_FLOOR * peak).sqrt()).collect();
        Problem {
            grid,
            values,
            root_weights,
            order,
            pairs: order / 2,
            has_linear: order % 2 == 1,
            bandwidth,
        }
    }

    fn param_len(&self) -> usize {
        self.order + 2 * self.pairs + usize::from(self.has_linear)
    }

    /// Monic denominator coefficients (ascending, implicit leading 1) from
    /// the log-section parameters.
    fn denominator(&self, x: &DVector<f64>) -> Vec<f64> {
        let mut poly = vec![1.0];
        let mut k = self.order;
        for _ in 0..self.pairs {
            let p1 = x[k].clamp(-60.0, 60.0).exp();
            let p0 = x[k + 1].clamp(-60.0, 60.0).exp();
            poly = multiply(&poly, &[p0, p1, 1.0]);
            k += 2;
        }
        if self.has_linear {
            let d = x[k].clamp(-60.0, 60.0).exp();
            poly = multiply(&poly, &[d, 1.0]);
        }
        poly
    }

    fn density(&self, x: &DVector<f64>, omega: f64) -> f64 {
        let s = C64::new(0.0, omega);
        let num = eval_complex(x.as_slice().get(..self.order).unwrap_or(&[]), s);
        let den = eval_complex(&self.denominator(x), s);
        num.norm_sqr() / den.norm_sqr()
    }

    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.grid.len(),
            self.grid
                .iter()
                .zip(self.values.iter().zip(&self.root_weights))
                .map(|(&w, (&s, &rw))| rw * (self.density(x, w) - s)),
        )
    }

    fn factor_from_params(&self, x: &DVector<f64>) -> Result<SpectralFactor> {
        let numerator: Vec<f64> = x.as_slice()[..self.order].to_vec();
        let mut denominator = self.denominator(x);
        denominator.pop();
        SpectralFactor::new(numerator, denominator)
    }

    /// Parameters reproducing a lower-order factor exactly, with one extra
    /// pole-zero-cancelling section at the grid's log-midpoint.
    fn embed_lower_order(&self, lower: &SpectralFactor) -> Option<DVector<f64>> {
        if lower.order() + 2 != self.order {
            return None;
        }
        let mid = (self.grid[0].ln() + self.grid[self.grid.len() - 1].ln()) / 2.0;
        let wc = mid.exp();
        let section = [wc * wc, 2.0 * wc, 1.0];
        let numerator = multiply(lower.numerator(), &section);
        let mut den_monic = lower.denominator().to_vec();
        den_monic.push(1.0);
        let denominator = multiply(&den_monic, &section);
        let sections = sections_from_monic(&denominator)?;
        self.params_from_parts(&numerator, &sections)
    }

    /// Deterministic start: fit an even polynomial to the inverse target
    /// density, spectrally factor it into a stable denominator, then fit the
    /// numerator against that denominator by linear least squares.
    fn inverse_spectrum_start(&self) -> Option<DVector<f64>> {
        let r = self.order;
        let scale = self.bandwidth;
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for (&w, &s) in self.grid.iter().zip(&self.values) {
            if s <= 1e-280 {
                continue;
            }
            let weight = s;
            let u2 = (w / scale) * (w / scale);
            let mut row = Vec::with_capacity(r + 1);
            let mut p = 1.0;
            for _ in 0..=r {
                row.push(weight * p);
                p *= u2;
            }
            rows.push(row);
            rhs.push(weight / s);
        }
        if rows.len() < r + 1 {
            return None;
        }
        let coeffs = linear_least_squares(&rows, &rhs)?;
        let lead = coeffs[r];
        if lead <= 0.0 {
            return None;
        }
        let monic: Vec<f64> = coeffs.iter().map(|c| c / lead).collect();
        let den_u = factor_even_poly(&monic)?;
        if den_u.len() != r + 1 {
            return None;
        }
        // map A_u(s / bandwidth) back to angular frequency, keeping it monic
        let denominator: Vec<f64> = den_u
            .iter()
            .enumerate()
            .map(|(k, c)| c * scale.powi((r - k) as i32) / den_u[r])
            .collect();
        let sections = sections_from_monic(&denominator)?;
        let numerator = self.numerator_least_squares(&denominator)?;
        self.params_from_parts(&numerator, &sections)
    }

    /// Weighted linear least squares for the squared numerator against a
    /// fixed denominator, followed by spectral factorization.
    fn numerator_least_squares(&self, den_monic: &[f64]) -> Option<Vec<f64>> {
        let r = self.order;
        let scale = self.bandwidth;
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for (&w, &s) in self.grid.iter().zip(&self.values) {
            let a2 = eval_complex(den_monic, C64::new(0.0, w)).norm_sqr();
            if !a2.is_finite() || a2 == 0.0 {
                continue;
            }
            let weight = s.sqrt();
            let u2 = (w / scale) * (w / scale);
            let mut row = Vec::with_capacity(r);
            let mut p = 1.0;
            for _ in 0..r {
                row.push(weight * p / a2);
                p *= u2;
            }
            rows.push(row);
            rhs.push(weight * s);
        }
        if rows.len() < r {
            return None;
        }
        let beta = linear_least_squares(&rows, &rhs)?;
        let num_u = factor_even_poly(&beta)?;
        if num_u.len() > r {
            return None;
        }
        // map B_u(s / bandwidth) back to angular frequency
        let mut b: Vec<f64> =
            num_u.iter().enumerate().map(|(k, c)| c / scale.powi(k as i32)).collect();
        b.resize(r, 0.0);
        Some(b)
    }

    fn random_start(&self, rng: &mut ChaCha12Rng) -> DVector<f64> {
        let lo = (self.grid[0].max(self.bandwidth * 1e-2)).ln();
        let hi = (self.bandwidth * 3.0).ln();
        let mut x = DVector::zeros(self.param_len());
        let mut k = self.order;
        for _ in 0..self.pairs {
            let wn = (lo + (hi - lo) * rng.gen::<f64>()).exp();
            let zeta = 0.4 + 0.9 * rng.gen::<f64>();
            x[k] = (2.0 * zeta * wn).ln();
            x[k + 1] = (wn * wn).ln();
            k += 2;
        }
        if self.has_linear {
            let d = (lo + (hi - lo) * rng.gen::<f64>()).exp();
            x[k] = d.ln();
        }
        let den_monic = self.denominator(&x);
        if let Some(b) = self.numerator_least_squares(&den_monic) {
            for (i, v) in b.iter().enumerate() {
                x[i] = *v;
            }
        } else {
            let s0 = self.values.iter().cloned().fold(0.0f64, f64::max);
            let a0 = den_monic[0];
            x[0] = (s0.max(1e-300) * a0 * a0).sqrt();
        }
        x
    }

    fn params_from_parts(
        &self,
        numerator: &[f64],
        sections: &(Vec<(f64, f64)>, Option<f64>),
    ) -> Option<DVector<f64>> {
        if numerator.len() != self.order || sections.0.len() != self.pairs {
            return None;
        }
        if self.has_linear != sections.1.is_some() {
            return None;
        }
        let mut x = DVector::zeros(self.param_len());
        for (i, b) in numerator.iter().enumerate() {
            x[i] = *b;
        }
        let mut k = self.order;
        for (p1, p0) in &sections.0 {
            if *p1 <= 0.0 || *p0 <= 0.0 {
                return None;
            }
            x[k] = p1.ln();
            x[k + 1] = p0.ln();
            k += 2;
        }
        if let Some(d) = sections.1 {
            if d <= 0.0 {
                return None;
            }
            x[k] = d.ln();
        }
        Some(x)
    }
}

/// Dense weighted linear least squares via SVD.
fn linear_least_squares(rows: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let m = rows.len();
    let n = rows[0].len();
    let a = DMatrix::from_fn(m, n, |i, j| rows[i][j]);
    let b = DVector::from_column_slice(rhs);
    let svd = a.svd(true, true);
    svd.solve(&b, 1e-12 * svd.singular_values.max()).ok().map(|x| x.as_slice().to_vec())
}

/// Splits a monic Hurwitz polynomial (ascending coefficients, trailing 1)
/// into positive-coefficient second-order sections `(p1, p0)` plus an
/// optional first-order constant.
fn sections_from_monic(monic: &[f64]) -> Option<(Vec<(f64, f64)>, Option<f64>)> {
    let deg = monic.len() - 1;
    let rts = roots(monic)?;
    let scale = rts.iter().map(|r| r.norm()).fold(1.0f64, f64::max);
    if rts.iter().any(|r| r.re >= 0.0) {
        return None;
    }
    let mut complex: Vec<C64> = rts.iter().filter(|r| r.im > 1e-9 * scale).copied().collect();
    let mut real: Vec<f64> =
        rts.iter().filter(|r| r.im.abs() <= 1e-9 * scale).map(|r| r.re).collect();
    if 2 * complex.len() + real.len() != deg {
        return None;
    }
    complex.sort_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap());
    real.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut pairs = Vec::new();
    for c in &complex {
        pairs.push((-2.0 * c.re, c.norm_sqr()));
    }
    let mut linear = None;
    if real.len() % 2 == 1 {
        linear = Some(-real.pop().unwrap());
    }
    for chunk in real.chunks(2) {
        let (x, y) = (-chunk[0], -chunk[1]);
        pairs.push((x + y, x * y));
    }
    Some((pairs, linear))
}

/// Spectral factorization of a nonnegative even polynomial: given
/// `P(z) = sum p_k z^k` with `z` standing for `omega^2` and `P >= 0` on
/// `z >= 0`, returns a real polynomial `B(s)` with `|B(i w)|^2 = P(w^2)`,
/// roots in the closed left half-plane. Returns `None` when `P` is not
/// factorable (negative leading coefficient, odd boundary zeros, numerical
/// breakdown); callers fall back to cruder starts.
fn factor_even_poly(p: &[f64]) -> Option<Vec<f64>> {
    let mut p = p.to_vec();
    let peak = p.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if peak == 0.0 {
        return None;
    }
    while p.len() > 1 && p.last().unwrap().abs() <= 1e-13 * peak {
        p.pop();
    }
    let deg = p.len() - 1;
    let lead = p[deg];
    if lead <= 0.0 {
        return None;
    }
    if deg == 0 {
        return Some(vec![lead.sqrt()]);
    }
    let z_roots = roots(&p)?;
    let mut s_roots: Vec<C64> = Vec::with_capacity(deg);
    let mut boundary: Vec<usize> = Vec::new();
    for z in &z_roots {
        let s = (-z).sqrt();
        let s = if s.re > 0.0 { -s } else { s };
        if s.re.abs() <= 1e-7 * (s.norm() + 1.0) {
            boundary.push(s_roots.len());
        }
        s_roots.push(s);
    }
    // boundary (imaginary-axis) roots must pair up with alternating signs
    if boundary.len() % 2 == 1 {
        return None;
    }
    boundary.sort_by(|&a, &b| s_roots[a].im.abs().partial_cmp(&s_roots[b].im.abs()).unwrap());
    for (n, &idx) in boundary.iter().enumerate() {
        let mag = s_roots[idx].im.abs();
        s_roots[idx] = C64::new(0.0, if n % 2 == 0 { mag } else { -mag });
    }
    let mut coeffs = vec![C64::new(lead.sqrt(), 0.0)];
    for s in &s_roots {
        let mut next = vec![C64::new(0.0, 0.0); coeffs.len() + 1];
        for (i, c) in coeffs.iter().enumerate() {
            next[i] -= c * s;
            next[i + 1] += c;
        }
        coeffs = next;
    }
    let max_abs = coeffs.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
    if coeffs.iter().any(|c| c.im.abs() > 1e-6 * max_abs) {
        return None;
    }
    let b: Vec<f64> = coeffs.iter().map(|c| c.re).collect();
    // sanity: the factorization must reproduce P at a couple of points
    for z in [0.1f64, 1.0, 7.3] {
        let w = z.sqrt();
        let val = eval_complex(&b, C64::new(0.0, w)).norm_sqr();
        let want = p.iter().rev().fold(0.0, |acc, c| acc * z + c);
        if !(val.is_finite() && (val - want).abs() <= 0.2 * want.abs().max(1e-12)) {
            return None;
        }
    }
    Some(b)
}

/// Dense Levenberg-Marquardt with forward-difference Jacobians. Only
/// cost-decreasing steps are accepted, so the final cost never exceeds the
/// initial one. Returns the best parameters and the objective
/// `sum residuals^2`.
fn levenberg_marquardt(
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
    x0: DVector<f64>,
    max_iter: usize,
) -> (DVector<f64>, f64) {
    let cost_of = |r: &DVector<f64>| {
        let c = r.norm_squared();
        if c.is_finite() {
            c
        } else {
            f64::INFINITY
        }
    };
    let mut x = x0;
    let mut res = f(&x);
    let mut cost = cost_of(&res);
    if !cost.is_finite() {
        return (x, cost);
    }
    let n = x.len();
    let mut mu = 1e-3;
    let mut stalled = 0;
    for _ in 0..max_iter {
        // forward-difference Jacobian
        let mut jac = DMatrix::<f64>::zeros(res.len(), n);
        for j in 0..n {
            let h = 1e-6 * (1.0 + x[j].abs());
            let mut xp = x.clone();
            xp[j] += h;
            let rp = f(&xp);
            if rp.len() != res.len() {
                return (x, cost);
            }
            for i in 0..res.len() {
                jac[(i, j)] = (rp[i] - res[i]) / h;
            }
        }
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &res;
        if grad.amax() <= 1e-14 * (1.0 + cost) {
            break;
        }
        let mut accepted = false;
        for _ in 0..25 {
            let mut system = jtj.clone();
            let floor = 1e-14 * (jtj.trace() / n as f64).max(1e-300);
            for d in 0..n {
                system[(d, d)] += mu * jtj[(d, d)].max(floor) + floor;
            }
            let step = match system.cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    mu *= 4.0;
                    continue;
                }
            };
            let xc = &x + &step;
            let rc = f(&xc);
            let cc = cost_of(&rc);
            if cc < cost {
                let improvement = (cost - cc) / cost.max(1e-300);
                x = xc;
                res = rc;
                cost = cc;
                mu = (mu / 3.0).max(1e-12);
                accepted = true;
                if improvement < 1e-13 {
                    stalled += 1;
                } else {
                    stalled = 0;
                }
                break;
            }
            mu *= 4.0;
            if mu > 1e14 {
                break;
            }
        }
        if !accepted || stalled >= 3 {
            break;
        }
    }
    (x, cost)
}
