//! Monte Carlo summaries with 95% confidence intervals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
    pub ci95: (f64, f64),
    pub seed: u64,
}

impl MCEstimate {
    /// A proportion `successes / n` with a Wilson score interval.
    pub fn proportion(successes: usize, n: usize, seed: u64) -> Result<Self> {
        if n == 0 || successes > n {
            return Err(Error::Param(format!("need 0 ≤ successes ≤ n and n > 0, got {successes}/{n}")));
        }
        let nf = n as f64;
        let p = successes as f64 / nf;
        let z2 = Z95 * Z95;
        let denom = 1.0 + z2 / nf;
        let center = (p + z2 / (2.0 * nf)) / denom;
        let half = Z95 / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
        Ok(MCEstimate {
            value: p,
            stderr: (p * (1.0 - p) / nf).sqrt(),
            n,
            ci95: ((center - half).max(0.0), (center + half).min(1.0)),
            seed,
        })
    }

    /// The sample mean of `xs` with a normal-approximation interval.
    pub fn mean(xs: &[f64], seed: u64) -> Result<Self> {
        let n = xs.len();
        if n < 2 {
            return Err(Error::Param(format!("need at least two samples, got {n}")));
        }
        let nf = n as f64;
        let m = xs.iter().sum::<f64>() / nf;
        let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (nf - 1.0);
        let se = (var / nf).sqrt();
        Ok(MCEstimate { value: m, stderr: se, n, ci95: (m - Z95 * se, m + Z95 * se), seed })
    }

    /// A deterministic value, for quantities that need no sampling.
    pub fn exact(value: f64, seed: u64) -> Self {
        MCEstimate { value, stderr: 0.0, n: 0, ci95: (value, value), seed }
    }

    /// The estimate multiplied by a known positive constant.
    pub fn scaled(&self, c: f64) -> Self {
        let (lo, hi) = (self.ci95.0 * c, self.ci95.1 * c);
        MCEstimate {
            value: self.value * c,
            stderr: self.stderr * c.abs(),
            n: self.n,
            ci95: (lo.min(hi), lo.max(hi)),
            seed: self.seed,
        }
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci95.1 - self.ci95.0)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.ci95.0 <= x && x <= self.ci95.1
    }

    /// Whether the two 95% intervals intersect.
    pub fn overlaps(&self, other: &MCEstimate) -> bool {
        self.ci95.0 <= other.ci95.1 && other.ci95.0 <= self.ci95.1
    }
}

/// `(a − b) / sqrt(se_a² + se_b²)`; zero when both are exact and equal.
pub fn z_score(a: &MCEstimate, b: &MCEstimate) -> f64 {
    let se = (a.stderr * a.stderr + b.stderr * b.stderr).sqrt();
    let diff = a.value - b.value;
    if se == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        }
    } else {
        diff / se
    }
}

/// Empirical quantile by linear interpolation between order statistics.
/// Infinite values sort last, so censored observations are allowed.
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() || !(0.0..=1.0).contains(&q) {
        return None;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi || sorted[lo] == sorted[hi] {
        return Some(sorted[lo]);
    }
    let w = pos - lo as f64;
    Some(sorted[lo] * (1.0 - w) + sorted[hi] * w)
}
