//! Single-particle tube probabilities: the exact fixed-width eigenseries and
//! the shape predictions for moving tubes.
//!
//! Apart from [`feller_tube_exact`], every value here is a prediction up to
//! multiplicative constants that are never materialised. Consumers compare
//! shapes, ratios and bands, not absolute levels.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::curves::{self, Curve, Exceedance};
use crate::error::{Error, Result};

/// Smallest time for which the eigenseries is summed.
pub const MIN_SERIES_TIME: f64 = 1e-4;
/// Maximum number of eigenmodes.
pub const MAX_SERIES_TERMS: usize = 10_000;

/// Probability that `y + ξ` stays in `(−1, 1)` up to time `t` and ends in `(p, q)`.
///
/// Sums `Σ e^{−n²π²t/8} φ_n(y) ∫_p^q φ_n` with `φ_n(x) = sin(nπ(x+1)/2)`
/// until the remaining tail is below `tol` relative to the partial sum.
pub fn feller_tube_exact(y: f64, t: f64, p: f64, q: f64, tol: f64) -> Result<f64> {
    if !(y > -1.0 && y < 1.0) {
        return Err(Error::Param(format!("start y = {y} must lie in (-1, 1)")));
    }
    if !(p >= -1.0 && q <= 1.0 && p <= q) {
        return Err(Error::Param(format!("window ({p}, {q}) must satisfy -1 ≤ p ≤ q ≤ 1")));
    }
    if !(tol > 0.0) {
        return Err(Error::Param(format!("tolerance must be positive, got {tol}")));
    }
    if !(t > 0.0) {
        return Err(Error::Param(format!("time must be positive, got {t}")));
    }
    if p == q {
        return Ok(0.0);
    }
    if t < MIN_SERIES_TIME {
        return Err(Error::SeriesDivergenceGuard { t, terms: 0 });
    }

    let rate = PI * PI * t / 8.0;
    let width = q - p;
    let mut sum = 0.0;
    for n in 1..=MAX_SERIES_TERMS {
        let k = n as f64 * PI / 2.0;
        let mode = (k * (y + 1.0)).sin();
        let integral = ((k * (p + 1.0)).cos() - (k * (q + 1.0)).cos()) / k;
        sum += (-((n * n) as f64) * rate).exp() * mode * integral;

        // Bound the remaining tail by a geometric series in the decay factor.
        let m = (n + 1) as f64;
        let amplitude = width.min(2.0 / k);
        let ratio = (-(2.0 * m + 1.0) * rate).exp();
        let tail = (-m * m * rate).exp() * amplitude / (1.0 - ratio);
        if tail < tol * sum.abs().max(1e-30) {
            return Ok(sum.clamp(0.0, 1.0));
        }
    }
    Err(Error::SeriesDivergenceGuard { t, terms: MAX_SERIES_TERMS })
}

/// Leading eigenmode `e^{−π²t/8} cos(πy/2) ∫_p^q cos(πν/2) dν` of [`feller_tube_exact`].
pub fn feller_leading_term(y: f64, t: f64, p: f64, q: f64) -> f64 {
    let integral = (2.0 / PI) * ((PI * q / 2.0).sin() - (PI * p / 2.0).sin());
    (-PI * PI * t / 8.0).exp() * (PI * y / 2.0).cos() * integral
}

/// A window `(pL, qL)` inside a tube of width `L`, as fractions of the width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub p: f64,
    pub q: f64,
    /// Whether the window is `[pL, qL)` rather than `(pL, qL)`; only matters for discrete counts.
    pub half_open: bool,
}

impl WindowSpec {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&q) || p > q {
            return Err(Error::Param(format!("window fractions must satisfy 0 ≤ p ≤ q ≤ 1, got ({p}, {q})")));
        }
        Ok(WindowSpec { p, q, half_open: false })
    }

    /// `∫_p^q sin(πν) dν`.
    pub fn sine_mass(&self) -> f64 {
        ((PI * self.p).cos() - (PI * self.q).cos()) / PI
    }
}

/// The two envelope expressions of the moving-tube estimate.
///
/// `lower` carries the `(1 − q)` exponent and `upper` the `(1 − p)` one.
/// When `direction_swapped` is set (the lower curve is not increasing at
/// the horizon) their roles as bounds are exchanged, so `lower ≥ upper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopePair {
    pub lower: f64,
    pub upper: f64,
    pub direction_swapped: bool,
}

impl EnvelopePair {
    /// The envelope as an ordered `(min, max)` pair.
    pub fn ordered(&self) -> (f64, f64) {
        (self.lower.min(self.upper), self.lower.max(self.upper))
    }
}

fn check_start(f: &Curve, l: &Curve, x: f64) -> Result<(f64, f64)> {
    let f0 = f.eval(0.0)?;
    let l0 = l.eval(0.0)?;
    if (f0 + x).abs() > 1e-9 * (1.0 + x.abs()) {
        return Err(Error::Param(format!("f(0) = {f0} must equal -x = {}", -x)));
    }
    if !(f0 < 0.0 && f0 + l0 > 0.0) {
        return Err(Error::Param(format!("need f(0) < 0 < f(0) + L(0), got f(0) = {f0}, L(0) = {l0}")));
    }
    Ok((f0, l0))
}

/// Envelope for `P(ξ_s − f(s) ∈ (0, L(s)) ∀s ≤ t, ξ_t − f(t) ∈ (pL(t), qL(t)))`:
/// `e^{−ε(f,L,t) + (1−q)f′(t)L(t)} sin(πx/L(0)) ∫_p^q sin(πν)dν` and the same
/// with `(1 − p)`. Valid for `t ≥ ρ_L(eps)`.
pub fn tube_envelope(f: &Curve, l: &Curve, t: f64, x: f64, window: WindowSpec, eps: f64) -> Result<EnvelopePair> {
    let (_, l0) = check_start(f, l, x)?;
    match curves::rho_l(l, eps)? {
        Exceedance::At(rho) if t >= rho => {}
        Exceedance::At(rho) => {
            return Err(Error::Param(format!(
                "t = {t} is below rho_L({eps}) = {rho}; use short_time_bound instead"
            )))
        }
        Exceedance::Never => {
            return Err(Error::Param(format!("rho_L({eps}) is never reached; use short_time_bound instead")))
        }
    }
    let energy = curves::energy_functional(f, l, t, crate::quadrature::DEFAULT_ABS_TOL)?;
    let push = f.deriv(t, 1)? * l.eval(t)?;
    let common = (PI * x / l0).sin() * window.sine_mass();
    Ok(EnvelopePair {
        lower: (-energy + (1.0 - window.q) * push).exp() * common,
        upper: (-energy + (1.0 - window.p) * push).exp() * common,
        direction_swapped: f.deriv(t, 1)? <= 0.0,
    })
}

/// Upper-bound shape for short times (before `ρ_L(eps)`):
/// `e^{−½∫f′² − f′(0)f(0) − p f′(t)L(t)} · min(x(q²−p²)L(t)²/t^{3/2}, (L(0)+f(0))((1−p)²−(1−q)²)L(t)²/t^{3/2}, 1)`.
pub fn short_time_bound(f: &Curve, l: &Curve, t: f64, x: f64, window: WindowSpec) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Param(format!("time must be positive, got {t}")));
    }
    let f0 = f.eval(0.0)?;
    if (f0 + x).abs() > 1e-9 * (1.0 + x.abs()) || !(f0 < 0.0) {
        return Err(Error::Param(format!("need f(0) = -x < 0, got f(0) = {f0}, x = {x}")));
    }
    let slope_t = f.deriv(t, 1)?;
    if slope_t < 0.0 {
        return Err(Error::Param(format!("need f'(t) ≥ 0, got {slope_t}")));
    }
    let (p, q) = (window.p, window.q);
    let lt = l.eval(t)?;
    let l0 = l.eval(0.0)?;
    let scale = lt * lt / t.powf(1.5);
    let bottom = x * (q * q - p * p) * scale;
    let top = (l0 + f0) * ((1.0 - p).powi(2) - (1.0 - q).powi(2)) * scale;
    let tol = crate::quadrature::DEFAULT_ABS_TOL;
    let drift = crate::quadrature::integrate(
        |u| f.deriv(u, 1).map(|d| d * d).unwrap_or(f64::NAN),
        0.0,
        t,
        tol,
        crate::quadrature::DEFAULT_BUDGET,
    )?
    .value;
    if !drift.is_finite() {
        return Err(Error::Domain(format!("f' is not finite on [0, {t}]")));
    }
    let exponent = -0.5 * drift - f.deriv(0.0, 1)? * f0 - p * slope_t * lt;
    Ok(exponent.exp() * bottom.min(top).min(1.0))
}

/// `q(t,z;s,y) = yz e^{−s−√2z+√2y} t^{−1/2} (t+1−s)^{−1/2}`.
pub fn q_formula(t: f64, z: f64, s: f64, y: f64) -> f64 {
    y * z * (-s - SQRT_2 * z + SQRT_2 * y).exp() / (t.sqrt() * (t + 1.0 - s).sqrt())
}

/// `q̃(z;s,y) = e^{−s−√2z+√2y} min(yz s^{−3/2}, 1)`.
pub fn q_tilde(z: f64, s: f64, y: f64) -> f64 {
    (-s - SQRT_2 * z + SQRT_2 * y).exp() * (y * z / s.powf(1.5)).min(1.0)
}

/// Shape of the expected number of particles near the top of the shrinking
/// tube at time `u`: `z e^{−√2z} t^{−1/2} (t+1−u)^{−1/2}`.
pub fn predicted_top_count(t: f64, z: f64, u: f64) -> Result<f64> {
    let a = curves::a_c();
    if !(u >= t.powf(2.0 / 3.0) && u <= t) {
        return Err(Error::Param(format!("u = {u} must lie in [t^(2/3), t] = [{}, {t}]", t.powf(2.0 / 3.0))));
    }
    let z_max = a * t.cbrt() / 2.0;
    if !(z >= 1.0 && z <= z_max) {
        return Err(Error::Param(format!("z = {z} must lie in [1, a_c t^(1/3)/2] = [1, {z_max}]")));
    }
    Ok(z * (-SQRT_2 * z).exp() / (t.sqrt() * (t + 1.0 - u).sqrt()))
}

/// Tail shape `z e^{−√2z}` of `P(Λ(t) ≤ a_c t^{1/3} − z)`, returned with its logarithm.
pub fn predicted_tail(z: f64) -> Result<(f64, f64)> {
    if !(z >= 1.0) {
        return Err(Error::Param(format!("tail shape is stated for z ≥ 1, got {z}")));
    }
    let log_shape = z.ln() - SQRT_2 * z;
    Ok((log_shape.exp(), log_shape))
}
