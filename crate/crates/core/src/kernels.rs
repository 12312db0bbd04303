//! Reproducible random streams and the Brownian primitives the engine is
//! built from.
//!
//! Every stream is keyed by a master seed and a path of integers (replica
//! index, sub-experiment, ...). Particles inside one replica get their own
//! generator keyed by a lineage id, so the draws a particle sees do not
//! depend on how many other particles exist or on the order they are
//! processed in.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Exp, StandardNormal};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lineage id of the initial particle of a replica.
pub const ROOT_LINEAGE: u64 = 0x6a09_e667_f3bc_c908;

fn mix(mut z: u64) -> u64 {
    // splitmix64 finaliser
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn combine(acc: u64, word: u64) -> u64 {
    mix(acc ^ mix(word))
}

/// Lineage id of child `index` (0 or 1) of `parent`.
pub fn child_lineage(parent: u64, index: u64) -> u64 {
    combine(combine(parent, 0x5bd1_e995), index)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomStream {
    pub master_seed: u64,
    pub path: Vec<u64>,
}

impl RandomStream {
    pub fn new(master_seed: u64) -> Self {
        RandomStream { master_seed, path: Vec::new() }
    }

    /// The stream one level down, at position `index`.
    pub fn child(&self, index: u64) -> Self {
        let mut path = self.path.clone();
        path.push(index);
        RandomStream { master_seed: self.master_seed, path }
    }

    fn key(&self) -> u64 {
        let mut acc = mix(self.master_seed);
        for (depth, &p) in self.path.iter().enumerate() {
            acc = combine(combine(acc, depth as u64), p);
        }
        acc
    }

    /// A generator for this stream.
    pub fn rng(&self) -> Pcg64 {
        Pcg64::seed_from_u64(self.key())
    }

    /// A generator for one particle lineage inside this stream.
    pub fn lineage_rng(&self, lineage: u64) -> Pcg64 {
        Pcg64::seed_from_u64(combine(self.key(), lineage))
    }

    pub(crate) fn lineage_key(&self) -> u64 {
        self.key()
    }
}

pub(crate) fn rng_for(key: u64, lineage: u64) -> Pcg64 {
    Pcg64::seed_from_u64(combine(key, lineage))
}

/// A uniform draw on `(0, 1]`, safe to take the logarithm of.
pub fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// A centred normal draw with variance `dt`.
pub fn gaussian_increment<R: Rng + ?Sized>(rng: &mut R, dt: f64) -> Result<f64> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Param(format!("dt must be positive and finite, got {dt}")));
    }
    let z: f64 = StandardNormal.sample(rng);
    Ok(dt.sqrt() * z)
}

/// An exponential draw with the given rate.
pub fn branch_time<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> Result<f64> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::Param(format!("rate must be positive and finite, got {rate}")));
    }
    let law = Exp::new(rate).map_err(|e| Error::Param(e.to_string()))?;
    Ok(law.sample(rng))
}

/// Probability that a Brownian bridge from `x0` to `x1` over time `dt` touches
/// the straight barrier from `b0` to `b1`.
pub fn bridge_lower_cross_prob(x0: f64, x1: f64, b0: f64, b1: f64, dt: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::Param(format!("dt must be positive, got {dt}")));
    }
    Ok(cross_prob(x0 - b0, x1 - b1, dt))
}

#[inline]
pub(crate) fn cross_prob(d0: f64, d1: f64, dt: f64) -> f64 {
    if d0 <= 0.0 || d1 <= 0.0 {
        1.0
    } else {
        (-2.0 * d0 * d1 / dt).exp()
    }
}

/// Minimum of a Brownian bridge from `x0` to `x1` over time `dt`.
pub fn bridge_min_sample<R: Rng + ?Sized>(rng: &mut R, x0: f64, x1: f64, dt: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::Param(format!("dt must be positive, got {dt}")));
    }
    Ok(bridge_min_from_uniform(x0, x1, dt, open_uniform(rng)))
}

/// Inverse of `m ↦ exp(−2(x0−m)(x1−m)/dt)` on `m ≤ min(x0, x1)` at `u ∈ (0, 1]`.
///
/// With the same `u`, `m ≤ b` exactly when `u ≤` [`bridge_lower_cross_prob`]
/// for the flat barrier `b`, so one uniform decides both.
#[inline]
pub fn bridge_min_from_uniform(x0: f64, x1: f64, dt: f64, u: f64) -> f64 {
    let gap = x1 - x0;
    0.5 * (x0 + x1 - (gap * gap - 2.0 * dt * u.ln()).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn gaussian_moments() {
        let mut rng = RandomStream::new(11).rng();
        let xs: Vec<f64> = (0..1_000_000).map(|_| gaussian_increment(&mut rng, 1.0).unwrap()).collect();
        assert!(mean_var(&xs).0.abs() < 0.004);
        let ys: Vec<f64> = (0..1_000_000).map(|_| gaussian_increment(&mut rng, 0.25).unwrap()).collect();
        assert_abs_diff_eq!(mean_var(&ys).1, 0.25, epsilon = 0.002);
        assert!(gaussian_increment(&mut rng, 0.0).is_err());
    }

    #[test]
    fn exponential_means() {
        let mut rng = RandomStream::new(12).rng();
        let one: Vec<f64> = (0..1_000_000).map(|_| branch_time(&mut rng, 1.0).unwrap()).collect();
        assert_abs_diff_eq!(mean_var(&one).0, 1.0, epsilon = 0.004);
        let two: Vec<f64> = (0..1_000_000).map(|_| branch_time(&mut rng, 2.0).unwrap()).collect();
        assert_abs_diff_eq!(mean_var(&two).0, 0.5, epsilon = 0.002);
        assert!(branch_time(&mut rng, 0.0).is_err());
        assert!(branch_time(&mut rng, -1.0).is_err());
    }

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let s = RandomStream::new(5).child(3);
        let a: f64 = gaussian_increment(&mut s.rng(), 1.0).unwrap();
        let b: f64 = gaussian_increment(&mut s.clone().rng(), 1.0).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let c: f64 = gaussian_increment(&mut s.child(0).rng(), 1.0).unwrap();
        let d: f64 = gaussian_increment(&mut RandomStream::new(5).child(4).rng(), 1.0).unwrap();
        assert_ne!(a, c);
        assert_ne!(a, d);
        assert_ne!(s.lineage_rng(1).random::<u64>(), s.lineage_rng(2).random::<u64>());
        assert_ne!(child_lineage(ROOT_LINEAGE, 0), child_lineage(ROOT_LINEAGE, 1));
    }

    #[test]
    fn crossing_probability_values() {
        assert_abs_diff_eq!(bridge_lower_cross_prob(1.0, 1.0, 0.0, 0.0, 1.0).unwrap(), (-2.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(bridge_lower_cross_prob(3.0, 2.5, 2.0, 1.5, 1.0).unwrap(), 0.135_335_283_236_612_7, epsilon = 1e-15);
        assert_eq!(bridge_lower_cross_prob(-0.1, 1.0, 0.0, 0.0, 1.0).unwrap(), 1.0);
        assert_eq!(bridge_lower_cross_prob(1.0, 0.0, 0.0, 0.0, 1.0).unwrap(), 1.0);
        assert_eq!(bridge_lower_cross_prob(1e3, 1e3, 0.0, 0.0, 1.0).unwrap(), 0.0);
        assert!(bridge_lower_cross_prob(1.0, 1.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn minimum_tail_frequency() {
        let mut rng = RandomStream::new(13).rng();
        let n = 1_000_000;
        let hits = (0..n).filter(|_| bridge_min_sample(&mut rng, 0.0, 0.0, 1.0).unwrap() <= -1.0).count();
        assert_abs_diff_eq!(hits as f64 / n as f64, (-2.0f64).exp(), epsilon = 0.0015);
    }

    #[test]
    fn minimum_kolmogorov_smirnov() {
        let (x0, x1, dt) = (0.3, -0.4, 0.7);
        let mut rng = RandomStream::new(14).rng();
        let n = 100_000;
        let mut xs: Vec<f64> = (0..n).map(|_| bridge_min_sample(&mut rng, x0, x1, dt).unwrap()).collect();
        xs.sort_by(f64::total_cmp);
        let cdf = |m: f64| (-2.0 * (x0 - m) * (x1 - m) / dt).exp();
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &m)| {
                let f = cdf(m);
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        // Asymptotic critical value at significance 1e-3.
        let critical = (-(0.5e-3f64).ln() / 2.0).sqrt() / (n as f64).sqrt();
        assert!(d < critical, "KS statistic {d} above {critical}");
    }

    #[test]
    fn minimum_support_and_degenerate_limit() {
        let mut rng = RandomStream::new(15).rng();
        for _ in 0..10_000 {
            let (x0, x1) = (rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0);
            let m = bridge_min_sample(&mut rng, x0, x1, 0.5).unwrap();
            assert!(m <= x0.min(x1));
        }
        let m = bridge_min_sample(&mut rng, 0.7, 0.2, 1e-14).unwrap();
        assert_abs_diff_eq!(m, 0.2, epsilon = 1e-6);
    }

    #[test]
    fn shared_uniform_couples_crossing_and_minimum() {
        let mut rng = RandomStream::new(16).rng();
        for _ in 0..10_000 {
            let (x0, x1, b) = (rng.random::<f64>() * 3.0, rng.random::<f64>() * 3.0, rng.random::<f64>() * 0.5);
            let u = open_uniform(&mut rng);
            let crossed = u < bridge_lower_cross_prob(x0, x1, b, b, 0.3).unwrap();
            let m = bridge_min_from_uniform(x0, x1, 0.3, u);
            assert_eq!(crossed, m < b, "x0={x0} x1={x1} b={b} u={u}");
        }
    }
}
