//! Boundary curves as sums of analytic terms, with exact first and second
//! derivatives, and the tube functionals built on them.
//!
//! A tube is described by a lower curve `f` and a positive width `L`; a path
//! is inside the tube at time `u` when `0 < ξ(u) − f(u) < L(u)`.

use std::cell::Cell;
use std::f64::consts::{E, PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{self, SINGULAR_MARGIN};

/// The critical constants governing consistent maximal displacement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalConstants {
    /// Critical coefficient of the `t^{1/3}` correction for a fixed barrier, `3^{4/3} π^{2/3} 2^{-7/6}`.
    pub big_a_c: f64,
    /// Critical coefficient for the recentred minimum, `3^{1/3} π^{2/3} 2^{-1/2}`.
    pub a_c: f64,
    /// Width coefficients of the log-corrected tube around the critical barrier, `3^{1/3} π^{2/3} 2^{-1/6}`.
    pub alpha_beta: f64,
    /// Growth exponent of the first moment of the top-of-tube count, `2^{1/3} 3^{1/3} 11 π^{2/3}`.
    pub gamma: f64,
    pub sqrt2: f64,
}

impl CriticalConstants {
    pub fn new() -> Self {
        let pi23 = PI.powf(2.0 / 3.0);
        let cbrt3 = 3f64.cbrt();
        CriticalConstants {
            big_a_c: 3f64.powf(4.0 / 3.0) * pi23 * 2f64.powf(-7.0 / 6.0),
            a_c: cbrt3 * pi23 / SQRT_2,
            alpha_beta: cbrt3 * pi23 * 2f64.powf(-1.0 / 6.0),
            gamma: 2f64.cbrt() * cbrt3 * 11.0 * pi23,
            sqrt2: SQRT_2,
        }
    }
}

impl Default for CriticalConstants {
    fn default() -> Self {
        Self::new()
    }
}

/// `a_c = 3^{1/3} π^{2/3} 2^{-1/2}`.
pub fn a_c() -> f64 {
    CriticalConstants::new().a_c
}

/// `A_c = 3^{4/3} π^{2/3} 2^{-7/6}`.
pub fn big_a_c() -> f64 {
    CriticalConstants::new().big_a_c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TermKind {
    Constant,
    Linear,
    /// `(u + shift)^exponent`
    PowerForward { exponent: f64, shift: f64 },
    /// `(horizon + shift − u)^exponent`
    PowerBackward { exponent: f64, horizon: f64, shift: f64 },
    /// `(u + shift)^exponent / log^log_power(u + log_shift)`
    LogPowerForward {
        exponent: f64,
        log_power: f64,
        shift: f64,
        log_shift: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveTerm {
    pub coefficient: f64,
    pub kind: TermKind,
}

/// `k`-th derivative of `w^p` (k ≤ 2), up to the chain-rule sign.
fn power_derivative(p: f64, w: f64, order: u8) -> f64 {
    match order {
        0 => w.powf(p),
        1 => p * w.powf(p - 1.0),
        _ => p * (p - 1.0) * w.powf(p - 2.0),
    }
}

impl CurveTerm {
    pub fn new(coefficient: f64, kind: TermKind) -> Self {
        CurveTerm { coefficient, kind }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(c, TermKind::Constant)
    }

    pub fn linear(slope: f64) -> Self {
        Self::new(slope, TermKind::Linear)
    }

    pub fn power_forward(coefficient: f64, exponent: f64, shift: f64) -> Self {
        Self::new(coefficient, TermKind::PowerForward { exponent, shift })
    }

    pub fn power_backward(coefficient: f64, exponent: f64, horizon: f64, shift: f64) -> Self {
        Self::new(coefficient, TermKind::PowerBackward { exponent, horizon, shift })
    }

    pub fn log_power_forward(coefficient: f64, exponent: f64, log_power: f64, shift: f64, log_shift: f64) -> Self {
        Self::new(
            coefficient,
            TermKind::LogPowerForward { exponent, log_power, shift, log_shift },
        )
    }

    /// Value (order 0) or derivative (order 1, 2) at `u`, without domain checks on `u`.
    fn component(&self, u: f64, order: u8) -> Result<f64> {
        let raw = match self.kind {
            TermKind::Constant => {
                if order == 0 {
                    1.0
                } else {
                    0.0
                }
            }
            TermKind::Linear => match order {
                0 => u,
                1 => 1.0,
                _ => 0.0,
            },
            TermKind::PowerForward { exponent, shift } => {
                let w = u + shift;
                if w < 0.0 {
                    return Err(Error::Domain(format!("power base u + {shift} = {w} is negative at u = {u}")));
                }
                power_derivative(exponent, w, order)
            }
            TermKind::PowerBackward { exponent, horizon, shift } => {
                let w = horizon + shift - u;
                if w < 0.0 {
                    return Err(Error::Domain(format!(
                        "power base {horizon} + {shift} − u = {w} is negative at u = {u}"
                    )));
                }
                let sign = if order == 1 { -1.0 } else { 1.0 };
                sign * power_derivative(exponent, w, order)
            }
            TermKind::LogPowerForward { exponent: p, log_power: k, shift, log_shift } => {
                let w = u + shift;
                let v = u + log_shift;
                if w < 0.0 {
                    return Err(Error::Domain(format!("power base u + {shift} = {w} is negative at u = {u}")));
                }
                let l = v.ln();
                if !(l > 0.0) && k != 0.0 {
                    return Err(Error::Domain(format!("log(u + {log_shift}) = {l} is not positive at u = {u}")));
                }
                match order {
                    0 => w.powf(p) * l.powf(-k),
                    1 => p * w.powf(p - 1.0) * l.powf(-k) - k * w.powf(p) * l.powf(-k - 1.0) / v,
                    _ => {
                        p * (p - 1.0) * w.powf(p - 2.0) * l.powf(-k)
                            - 2.0 * p * k * w.powf(p - 1.0) * l.powf(-k - 1.0) / v
                            + k * w.powf(p) * l.powf(-k - 1.0) / (v * v)
                            + k * (k + 1.0) * w.powf(p) * l.powf(-k - 2.0) / (v * v)
                    }
                }
            }
        };
        let value = self.coefficient * raw;
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::Domain(format!("term {:?} has no finite order-{order} value at u = {u}", self.kind)))
        }
    }

    /// Points where the term's base vanishes, which quadrature should avoid.
    fn singular_point(&self) -> Option<f64> {
        match self.kind {
            TermKind::PowerBackward { horizon, shift, .. } => Some(horizon + shift),
            TermKind::PowerForward { shift, .. } | TermKind::LogPowerForward { shift, .. } => Some(-shift),
            _ => None,
        }
    }
}

/// A curve on `[0, t_max]` given as a sum of analytic terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    terms: Vec<CurveTerm>,
    t_max: f64,
}

impl Curve {
    /// `t_max` may be `f64::INFINITY` for curves defined on the whole half-line.
    pub fn new(terms: Vec<CurveTerm>, t_max: f64) -> Result<Self> {
        if !(t_max >= 0.0) {
            return Err(Error::Param(format!("curve domain end must be nonnegative, got {t_max}")));
        }
        let curve = Curve { terms, t_max };
        // Every base must be nonnegative on the closed domain; checking the
        // endpoints suffices because each base is monotone in u.
        curve.eval(0.0)?;
        if t_max.is_finite() {
            curve.eval(t_max)?;
        }
        Ok(curve)
    }

    pub fn zero(t_max: f64) -> Self {
        Curve { terms: Vec::new(), t_max }
    }

    pub fn constant(c: f64, t_max: f64) -> Self {
        Curve { terms: vec![CurveTerm::constant(c)], t_max }
    }

    /// `slope · u + intercept`.
    pub fn line(slope: f64, intercept: f64, t_max: f64) -> Self {
        Curve { terms: vec![CurveTerm::linear(slope), CurveTerm::constant(intercept)], t_max }
    }

    pub fn terms(&self) -> &[CurveTerm] {
        &self.terms
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    /// Pointwise sum; the domain is the intersection of the two domains.
    pub fn plus(&self, other: &Curve) -> Curve {
        let mut terms = self.terms.clone();
        terms.extend_from_slice(&other.terms);
        Curve { terms, t_max: self.t_max.min(other.t_max) }
    }

    /// Restricts the domain to `[0, t_max]`.
    pub fn truncated(&self, t_max: f64) -> Result<Curve> {
        if t_max > self.t_max {
            return Err(Error::Domain(format!("cannot extend domain from {} to {t_max}", self.t_max)));
        }
        Ok(Curve { terms: self.terms.clone(), t_max })
    }

    fn check_domain(&self, u: f64) -> Result<()> {
        let slack = 1e-12 * (1.0 + self.t_max.min(1e300));
        if u.is_nan() || u < -slack || u > self.t_max + slack {
            return Err(Error::Domain(format!("u = {u} outside the curve domain [0, {}]", self.t_max)));
        }
        Ok(())
    }

    fn sum(&self, u: f64, order: u8) -> Result<f64> {
        self.check_domain(u)?;
        let u = u.max(0.0);
        self.terms.iter().try_fold(0.0, |acc, term| Ok(acc + term.component(u, order)?))
    }

    pub fn eval(&self, u: f64) -> Result<f64> {
        self.sum(u, 0)
    }

    /// Exact first (`order = 1`) or second (`order = 2`) derivative.
    pub fn deriv(&self, u: f64, order: u8) -> Result<f64> {
        if order != 1 && order != 2 {
            return Err(Error::Param(format!("derivative order must be 1 or 2, got {order}")));
        }
        self.sum(u, order)
    }

    /// Quadrature breakpoints for `[0, t]`: just inside each singular point
    /// of a term, plus decade marks on long ranges.
    fn breakpoints(&self, t: f64) -> Vec<f64> {
        let mut breaks: Vec<f64> = self
            .terms
            .iter()
            .filter_map(CurveTerm::singular_point)
            .map(|s| s - SINGULAR_MARGIN)
            .filter(|&s| s > 0.0 && s < t)
            .collect();
        let mut mark = 1.0;
        while mark < t {
            breaks.push(mark);
            mark *= 10.0;
        }
        breaks
    }
}

/// Integrates a fallible integrand over `[0, t]`, surfacing the first error.
fn integrate_fallible<F>(integrand: F, t: f64, breaks: &[f64], tol: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let failure: Cell<Option<Error>> = Cell::new(None);
    let result = quadrature::integrate_with_breaks(
        |u| match integrand(u) {
            Ok(v) => v,
            Err(e) => {
                let prev = failure.take();
                failure.set(Some(prev.unwrap_or(e)));
                0.0
            }
        },
        0.0,
        t,
        breaks,
        tol,
        quadrature::DEFAULT_BUDGET,
    );
    if let Some(e) = failure.take() {
        return Err(e);
    }
    Ok(result?.value)
}

fn positive_width(l: &Curve, u: f64) -> Result<f64> {
    let w = l.eval(u)?;
    if w > 0.0 {
        Ok(w)
    } else {
        Err(Error::Domain(format!("tube width L({u}) = {w} is not positive")))
    }
}

fn check_horizon(f: &Curve, l: &Curve, t: f64) -> Result<()> {
    if !(t >= 0.0) || t > f.t_max() || t > l.t_max() {
        return Err(Error::Domain(format!(
            "t = {t} outside the common curve domain [0, {}]",
            f.t_max().min(l.t_max())
        )));
    }
    Ok(())
}

/// The tube energy
/// `½∫₀ᵗ f′² + ∫₀ᵗ π²/(2L²) + f′(t)L(t) + f′(0)f(0) + ½ log L(0) − ½ log L(t)`.
///
/// Each integral is computed to absolute accuracy `quad_tol`.
pub fn energy_functional(f: &Curve, l: &Curve, t: f64, quad_tol: f64) -> Result<f64> {
    if !(quad_tol > 0.0) {
        return Err(Error::Param(format!("quadrature tolerance must be positive, got {quad_tol}")));
    }
    check_horizon(f, l, t)?;
    let l0 = positive_width(l, 0.0)?;
    let lt = positive_width(l, t)?;
    let mut breaks = f.breakpoints(t);
    breaks.extend(l.breakpoints(t));

    let drift = integrate_fallible(|u| f.deriv(u, 1).map(|d| d * d), t, &breaks, quad_tol)?;
    let squeeze = integrate_fallible(
        |u| {
            let w = positive_width(l, u)?;
            Ok(PI * PI / (2.0 * w * w))
        },
        t,
        &breaks,
        quad_tol,
    )?;
    Ok(0.5 * drift + squeeze + f.deriv(t, 1)? * lt + f.deriv(0.0, 1)? * f.eval(0.0)? + 0.5 * l0.ln() - 0.5 * lt.ln())
}

/// The curvature bound
/// `|L′(0)|L(0) + |L′(t)|L(t) + ∫₀ᵗ |L″|L + ∫₀ᵗ |f″|L − |L′(0)| f(0)`,
/// whose supremum over `t` must be finite for the tube estimates to apply.
pub fn assumption_a_bound(f: &Curve, l: &Curve, t: f64) -> Result<f64> {
    check_horizon(f, l, t)?;
    let l0 = positive_width(l, 0.0)?;
    let lt = positive_width(l, t)?;
    let mut breaks = f.breakpoints(t);
    breaks.extend(l.breakpoints(t));
    let tol = quadrature::DEFAULT_ABS_TOL.max(1e-12 * (1.0 + t));
    let curvature = integrate_fallible(
        |u| {
            let w = positive_width(l, u)?;
            Ok((l.deriv(u, 2)?.abs() + f.deriv(u, 2)?.abs()) * w)
        },
        t,
        &breaks,
        tol,
    )?;
    let dl0 = l.deriv(0.0, 1)?.abs();
    Ok(dl0 * l0 + l.deriv(t, 1)?.abs() * lt + curvature - dl0 * f.eval(0.0)?)
}

/// `∫₀ᵗ 1/L(s)² ds`.
pub fn inv_l2_integral(l: &Curve, t: f64) -> Result<f64> {
    if !(t >= 0.0) || t > l.t_max() {
        return Err(Error::Domain(format!("t = {t} outside [0, {}]", l.t_max())));
    }
    inv_l2_between(l, 0.0, t)
}

fn inv_l2_between(l: &Curve, a: f64, b: f64) -> Result<f64> {
    let breaks: Vec<f64> = l.breakpoints(b).into_iter().filter(|&x| x > a).collect();
    let failure: Cell<Option<Error>> = Cell::new(None);
    let r = quadrature::integrate_with_breaks(
        |u| match positive_width(l, u) {
            Ok(w) => 1.0 / (w * w),
            Err(e) => {
                failure.set(Some(e));
                0.0
            }
        },
        a,
        b,
        &breaks,
        quadrature::DEFAULT_ABS_TOL,
        quadrature::DEFAULT_BUDGET,
    );
    if let Some(e) = failure.take() {
        return Err(e);
    }
    Ok(r?.value)
}

/// Result of [`rho_l`]: the first time the inverse-square integral exceeds
/// the threshold, or `Never` when it stays below it on the whole domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Exceedance {
    At(f64),
    Never,
}

impl Exceedance {
    pub fn time(self) -> Option<f64> {
        match self {
            Exceedance::At(t) => Some(t),
            Exceedance::Never => None,
        }
    }
}

/// Largest horizon searched when the curve is defined on the whole half-line.
const RHO_SEARCH_LIMIT: f64 = 1e15;

/// `inf { t > 0 : ∫₀ᵗ 1/L(s)² ds > eps }`.
pub fn rho_l(l: &Curve, eps: f64) -> Result<Exceedance> {
    if !(eps > 0.0) {
        return Err(Error::Param(format!("eps must be positive, got {eps}")));
    }
    let end = l.t_max().min(RHO_SEARCH_LIMIT);

    // Bracket the crossing by doubling, accumulating the integral piecewise.
    let mut lo = 0.0;
    let mut acc = 0.0;
    let mut hi = end.min(1.0);
    loop {
        let piece = inv_l2_between(l, lo, hi)?;
        if acc + piece > eps {
            break;
        }
        acc += piece;
        if hi >= end {
            return Ok(Exceedance::Never);
        }
        lo = hi;
        hi = (2.0 * hi).min(end);
    }

    // Bisect on [lo, hi] with F(lo) = acc ≤ eps < F(hi).
    for _ in 0..200 {
        if hi - lo <= 1e-13 * (1.0 + hi) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let piece = inv_l2_between(l, lo, mid)?;
        if acc + piece > eps {
            hi = mid;
        } else {
            acc += piece;
            lo = mid;
        }
    }
    Ok(Exceedance::At(hi))
}

/// Four-term large-`t` expansion of `∫₀ᵗ 1/L²` for the log-corrected tube
/// `L(u) = α(u+e)^{1/3} + β(u+e)^{1/3}/log(u+e)` with `α = β`.
pub fn log_tube_expansion(t: f64) -> Result<f64> {
    if !(t >= 2.0) {
        return Err(Error::Param(format!("the expansion needs t ≥ 2, got {t}")));
    }
    let c = CriticalConstants::new();
    let (a, b) = (c.alpha_beta, c.alpha_beta);
    let root = t.cbrt();
    let lg = t.ln();
    Ok(3.0 / (a * a) * root - 6.0 * b / a.powi(3) * root / lg + 9.0 * b / a.powi(4) * (b - 2.0 * a) * root / lg.powi(2)
        - 6.0 * b / a.powi(5) * (2.0 * b * b - 9.0 * a * b + 18.0 * a * a) * root / lg.powi(3))
}

/// The named curve families used by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CurveFamily {
    /// The barrier `g(u) = √2u − A_c u^{1/3} + A_c u^{1/3}/log²(u+e) − 1`; no upper curve.
    Jaffuel,
    /// The log-corrected tube around the critical barrier,
    /// `f(u) = √2(u+e) − A_c(u+e)^{1/3} + A_c(u+e)^{1/3}/log²(u+e) − C` and
    /// `L(u) = α(u+e)^{1/3} + β(u+e)^{1/3}/log(u+e)` with `α = β`.
    /// `C = None` starts the particle in the middle of the tube.
    JaffuelTube { c: Option<f64> },
    /// `f(u) = √2u − a_c(t+1)^{1/3} + z`, `L(u) = a_c(t+1−u)^{1/3}` on `[0, t]`.
    ShrinkingTube { t: f64, z: f64 },
    /// `f(u) = √2u − a_c t^{1/3} + log(t)/(3√2)` on `[0, t]`; no upper curve.
    LogShiftedLine { t: f64 },
}

/// A lower curve together with an optional tube width.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePair {
    pub lower: Curve,
    pub width: Option<Curve>,
}

impl CurvePair {
    /// The upper boundary `lower + width`, when a width is present.
    pub fn upper(&self) -> Option<Curve> {
        self.width.as_ref().map(|w| self.lower.plus(w))
    }
}

pub fn make_curves(family: CurveFamily) -> Result<CurvePair> {
    let c = CriticalConstants::new();
    match family {
        CurveFamily::Jaffuel => {
            let lower = Curve::new(
                vec![
                    CurveTerm::linear(SQRT_2),
                    CurveTerm::power_forward(-c.big_a_c, 1.0 / 3.0, 0.0),
                    CurveTerm::log_power_forward(c.big_a_c, 1.0 / 3.0, 2.0, 0.0, E),
                    CurveTerm::constant(-1.0),
                ],
                f64::INFINITY,
            )?;
            Ok(CurvePair { lower, width: None })
        }
        CurveFamily::JaffuelTube { c: offset } => {
            let (a, b) = (c.alpha_beta, c.alpha_beta);
            let width = Curve::new(
                vec![
                    CurveTerm::power_forward(a, 1.0 / 3.0, E),
                    CurveTerm::log_power_forward(b, 1.0 / 3.0, 1.0, E, E),
                ],
                f64::INFINITY,
            )?;
            let l0 = width.eval(0.0)?;
            let offset = offset.unwrap_or(SQRT_2 * E + 0.5 * l0);
            let lower = Curve::new(
                vec![
                    CurveTerm::linear(SQRT_2),
                    CurveTerm::constant(SQRT_2 * E - offset),
                    CurveTerm::power_forward(-c.big_a_c, 1.0 / 3.0, E),
                    CurveTerm::log_power_forward(c.big_a_c, 1.0 / 3.0, 2.0, E, E),
                ],
                f64::INFINITY,
            )?;
            let f0 = lower.eval(0.0)?;
            if !(f0 < 0.0 && f0 + l0 > 0.0) {
                return Err(Error::Param(format!(
                    "C = {offset} gives f(0) = {f0}, need f(0) < 0 < f(0) + L(0) = {}",
                    f0 + l0
                )));
            }
            Ok(CurvePair { lower, width: Some(width) })
        }
        CurveFamily::ShrinkingTube { t, z } => {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::Param(format!("tube horizon must be positive and finite, got {t}")));
            }
            let top = c.a_c * (t + 1.0).cbrt();
            if !(z > 0.0 && z < top) {
                return Err(Error::Param(format!("need 0 < z < a_c (t+1)^(1/3) = {top}, got z = {z}")));
            }
            let lower = Curve::new(vec![CurveTerm::linear(SQRT_2), CurveTerm::constant(z - top)], t)?;
            let width = Curve::new(vec![CurveTerm::power_backward(c.a_c, 1.0 / 3.0, t, 1.0)], t)?;
            Ok(CurvePair { lower, width: Some(width) })
        }
        CurveFamily::LogShiftedLine { t } => {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::Param(format!("horizon must be positive and finite, got {t}")));
            }
            let shift = -c.a_c * t.cbrt() + t.ln() / (3.0 * SQRT_2);
            let lower = Curve::new(vec![CurveTerm::linear(SQRT_2), CurveTerm::constant(shift)], t)?;
            Ok(CurvePair { lower, width: None })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn shrinking(t: f64, z: f64) -> CurvePair {
        make_curves(CurveFamily::ShrinkingTube { t, z }).unwrap()
    }

    #[test]
    fn constants_match_closed_forms() {
        let c = CriticalConstants::new();
        assert_abs_diff_eq!(c.big_a_c, 4.134_216_917_542_667, epsilon = 1e-13);
        assert_abs_diff_eq!(c.a_c, 2.187_553_427_990_652, epsilon = 1e-13);
        assert_abs_diff_eq!(c.alpha_beta, 2.756_144_611_695_111, epsilon = 1e-13);
        assert_abs_diff_eq!(c.gamma, 42.875_547_986_928_29, epsilon = 1e-11);
        assert_abs_diff_eq!(c.big_a_c / c.a_c, 3.0 * 2f64.powf(-2.0 / 3.0), epsilon = 4.0 * f64::EPSILON);
    }

    #[test]
    fn eval_basic_terms() {
        let lin = Curve::new(vec![CurveTerm::linear(SQRT_2)], 10.0).unwrap();
        assert_abs_diff_eq!(lin.eval(3.0).unwrap(), 4.242_641, epsilon = 1e-6);
        assert_eq!(Curve::zero(5.0).eval(2.5).unwrap(), 0.0);
        assert_abs_diff_eq!(lin.deriv(7.0, 1).unwrap(), SQRT_2, epsilon = 1e-15);
        assert_eq!(Curve::constant(3.0, 1.0).deriv(0.5, 2).unwrap(), 0.0);
    }

    #[test]
    fn shrinking_tube_start_and_slope() {
        let pair = shrinking(10.0, 1.0);
        let top = a_c() * 11f64.cbrt();
        assert_abs_diff_eq!(pair.lower.eval(0.0).unwrap(), -3.865_075_270_907_867, epsilon = 1e-12);
        assert_abs_diff_eq!(pair.lower.eval(0.0).unwrap(), 1.0 - top, epsilon = 1e-12);
        let width = pair.width.unwrap();
        assert_abs_diff_eq!(width.eval(0.0).unwrap(), top, epsilon = 1e-12);
        assert_abs_diff_eq!(width.deriv(5.0, 1).unwrap(), -0.220_836_021_217_908_5, epsilon = 1e-12);
    }

    #[test]
    fn jaffuel_barrier_starts_at_minus_one() {
        let g = make_curves(CurveFamily::Jaffuel).unwrap();
        assert!(g.width.is_none());
        assert_abs_diff_eq!(g.lower.eval(0.0).unwrap(), -1.0, epsilon = 1e-15);
        // u^{1/3} has no finite slope at the origin
        assert!(matches!(g.lower.deriv(0.0, 1), Err(Error::Domain(_))));
        assert!(g.lower.deriv(1.0, 1).is_ok());
    }

    #[test]
    fn log_shifted_line_correction() {
        let pair = make_curves(CurveFamily::LogShiftedLine { t: E }).unwrap();
        let expected = -a_c() * E.cbrt() + 0.235_702_260_395_515_84;
        assert_abs_diff_eq!(pair.lower.eval(0.0).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn jaffuel_tube_default_offset_is_admissible() {
        let pair = make_curves(CurveFamily::JaffuelTube { c: None }).unwrap();
        let f0 = pair.lower.eval(0.0).unwrap();
        let l0 = pair.width.as_ref().unwrap().eval(0.0).unwrap();
        assert!(f0 < 0.0 && f0 + l0 > 0.0);
        assert_abs_diff_eq!(f0, -0.5 * l0, epsilon = 1e-12);
        // offsets outside (√2e, √2e + L(0)) are rejected
        assert!(make_curves(CurveFamily::JaffuelTube { c: Some(1.0) }).is_err());
    }

    #[test]
    fn out_of_domain_is_an_error() {
        let pair = shrinking(10.0, 1.0);
        assert!(matches!(pair.lower.eval(10.5), Err(Error::Domain(_))));
        assert!(matches!(pair.lower.eval(-0.1), Err(Error::Domain(_))));
        assert!(matches!(pair.lower.deriv(1.0, 3), Err(Error::Param(_))));
        assert!(Curve::new(vec![CurveTerm::power_backward(1.0, 0.5, 1.0, 0.0)], 2.0).is_err());
    }

    #[test]
    fn shrinking_tube_rejects_bad_z() {
        assert!(make_curves(CurveFamily::ShrinkingTube { t: 10.0, z: 5.0 }).is_err());
        assert!(make_curves(CurveFamily::ShrinkingTube { t: 10.0, z: 0.0 }).is_err());
    }

    #[test]
    fn energy_of_shrinking_tube() {
        let pair = shrinking(10.0, 1.0);
        let eps = energy_functional(&pair.lower, pair.width.as_ref().unwrap(), 5.0, 1e-12).unwrap();
        assert_abs_diff_eq!(eps, 6.515_236_196_301_481, epsilon = 1e-9);
    }

    #[test]
    fn energy_of_flat_tubes() {
        let eps = energy_functional(&Curve::zero(10.0), &Curve::constant(2.0, 10.0), 3.0, 1e-12).unwrap();
        assert_abs_diff_eq!(eps, PI * PI * 3.0 / 8.0, epsilon = 1e-11);
        let f = Curve::line(SQRT_2, -1.0, 10.0);
        let eps = energy_functional(&f, &Curve::constant(1.0, 10.0), 1.0, 1e-12).unwrap();
        assert_abs_diff_eq!(eps, 5.934_802_200_544_679, epsilon = 1e-11);
    }

    #[test]
    fn energy_rejects_nonpositive_width() {
        let l = Curve::line(-1.0, 1.0, 5.0);
        assert!(matches!(energy_functional(&Curve::zero(5.0), &l, 2.0, 1e-10), Err(Error::Domain(_))));
    }

    #[test]
    fn assumption_a_trivial_and_convergent() {
        let bound = assumption_a_bound(&Curve::line(1.0, -1.0, 100.0), &Curve::constant(3.0, 100.0), 50.0).unwrap();
        assert_eq!(bound, 0.0);

        // L = (u+1)^{2/3}, f linear: every piece has a closed form.
        let l = Curve::new(vec![CurveTerm::power_forward(1.0, 2.0 / 3.0, 1.0)], f64::INFINITY).unwrap();
        let f = Curve::line(1.0, -1.0, f64::INFINITY);
        let t = 26.0;
        let closed = 2.0 / 3.0 + (2.0 / 3.0) * 27f64.cbrt() + (2.0 / 3.0) * (27f64.cbrt() - 1.0) + 2.0 / 3.0;
        assert_abs_diff_eq!(assumption_a_bound(&f, &l, t).unwrap(), closed, epsilon = 1e-9);
    }

    #[test]
    fn assumption_a_bounded_for_jaffuel_tube() {
        let pair = make_curves(CurveFamily::JaffuelTube { c: None }).unwrap();
        let l = pair.width.as_ref().unwrap();
        let mut sup: f64 = 0.0;
        for t in [1.0, 10.0, 100.0, 1e3, 1e4, 1e5, 1e6] {
            let b = assumption_a_bound(&pair.lower, l, t).unwrap();
            assert!(b.is_finite());
            sup = sup.max(b);
        }
        assert!(sup < 100.0, "sup = {sup}");
    }

    #[test]
    fn rho_examples() {
        assert_abs_diff_eq!(rho_l(&Curve::constant(1.0, 10.0), 2.0).unwrap().time().unwrap(), 2.0, epsilon = 1e-10);
        let l = shrinking(100.0, 1.0).width.unwrap();
        assert_abs_diff_eq!(rho_l(&l, 0.1).unwrap().time().unwrap(), 10.027_002_556_354_117, epsilon = 1e-8);
        assert_eq!(rho_l(&Curve::constant(1.0, 10.0), 11.0).unwrap(), Exceedance::Never);
        assert!(rho_l(&Curve::constant(1.0, 10.0), 0.0).is_err());
    }

    #[test]
    fn inverse_square_integral() {
        assert_abs_diff_eq!(inv_l2_integral(&Curve::constant(2.0, 10.0), 8.0).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn expansion_second_coefficient() {
        let ab = CriticalConstants::new().alpha_beta;
        let coeff = -6.0 * ab / ab.powi(3);
        assert_abs_diff_eq!(coeff, -6.0 / (ab * ab), epsilon = 1e-15);
        assert_abs_diff_eq!(coeff, -0.789_854_776_608_986_8, epsilon = 1e-12);
        assert!(log_tube_expansion(1.0).is_err());
    }
}
