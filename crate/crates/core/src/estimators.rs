//! Replica-level statistics: tail probabilities of Λ and their slope,
//! survival above the critical barrier, the Neveu statistic and moment
//! identities.

use serde::{Deserialize, Serialize};
use std::f64::consts::SQRT_2;

use crate::curves::{self, Curve, CurveFamily};
use crate::engine::{self, PreparedScenario, TopWindow, TubeScenario};
use crate::error::{Error, Result};
use crate::kernels::RandomStream;
use crate::parallel::map_replicas;
use crate::stats::{self, MCEstimate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub z: f64,
    pub p_hat: MCEstimate,
    /// `z e^{−√2 z}`.
    pub shape: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailTable {
    pub t: f64,
    pub rows: Vec<TailRow>,
    /// Replicas that hit the population cap; excluded from every row.
    pub budget_exceeded: usize,
    /// Non-fatal range notes, such as `z` above `a_c t^{1/3} / 2`.
    pub warnings: Vec<String>,
}

/// Checks `z_list` for [`lambda_tail`]: every `z` in `[1, a_c t^{1/3})`, strictly
/// increasing. Returns the warnings for values above `a_c t^{1/3} / 2`.
pub fn check_tail_range(t: f64, z_list: &[f64]) -> Result<Vec<String>> {
    if !(t > 0.0) {
        return Err(Error::Param(format!("t must be positive, got {t}")));
    }
    if z_list.is_empty() {
        return Err(Error::Param("z list is empty".into()));
    }
    if z_list.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Param("z values must be strictly increasing".into()));
    }
    let top = curves::a_c() * t.cbrt();
    let mut warnings = Vec::new();
    for &z in z_list {
        if !(z >= 1.0 && z < top) {
            return Err(Error::Param(format!(
                "z = {z} outside [1, a_c t^(1/3)) = [1, {top:.6}); the tail bound is stated for z in [1, a_c t^(1/3)/2]"
            )));
        }
        if z > top / 2.0 {
            warnings.push(format!(
                "z = {z} is above a_c t^(1/3)/2 = {:.6}, where the z e^(-sqrt2 z) shape is not claimed",
                top / 2.0
            ));
        }
    }
    Ok(warnings)
}

/// `Λ(t)` for one replica, computed with absorption at `√2 u − level`.
/// Returns `+∞` when every lineage crossed the line, i.e. when `Λ(t) > level`.
pub fn lambda_with_cap(prepared: &PreparedScenario, stream: &RandomStream) -> (f64, bool) {
    let out = prepared.run(stream);
    (out.lambda_min.unwrap_or(f64::INFINITY), out.budget_exceeded)
}

/// Scenario that computes `Λ` at the given times, exactly whenever `Λ ≤ level`.
pub fn lambda_scenario(times: &[f64], level: f64, dt: f64) -> Result<PreparedScenario> {
    let horizon = times.iter().copied().fold(0.0, f64::max);
    let mut sc = TubeScenario::new(horizon, dt).with_critical_line(level);
    sc.track_lambda = true;
    sc.observation_times = times.to_vec();
    sc.prepare()
}

/// `P(Λ(t) ≤ a_c t^{1/3} − z)` for each `z`, from one pruned run per replica.
///
/// All rows share the replicas (the run uses the lowest line,
/// `√2 u − (a_c t^{1/3} − z_min)`), so the estimates are nested: `p̂` is
/// nondecreasing in `z` on every seed.
pub fn lambda_tail(t: f64, z_list: &[f64], replicas: usize, dt: f64, stream: &RandomStream) -> Result<TailTable> {
    let warnings = check_tail_range(t, z_list)?;
    if replicas == 0 {
        return Err(Error::Param("replicas must be positive".into()));
    }
    let center = curves::a_c() * t.cbrt();
    let prepared = lambda_scenario(&[t], center - z_list[0], dt)?;
    let results = map_replicas(replicas, |i| lambda_with_cap(&prepared, &stream.child(i as u64)));
    let exceeded = results.iter().filter(|r| r.1).count();
    let kept: Vec<f64> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    if kept.is_empty() {
        return Err(Error::BudgetExceeded { population: 0, cap: prepared.scenario().population_cap });
    }
    let rows = z_list
        .iter()
        .map(|&z| {
            let level = center - z;
            let hits = kept.iter().filter(|&&l| l <= level).count();
            Ok(TailRow {
                z,
                p_hat: MCEstimate::proportion(hits, kept.len(), stream.master_seed)?,
                shape: z * (-SQRT_2 * z).exp(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TailTable { t, rows, budget_exceeded: exceeded, warnings })
}

/// Replica count for a proportion near `p` to reach relative 95% half-width `rel`.
pub fn replicas_for_relative_precision(p: f64, rel: f64) -> Option<usize> {
    if !(p > 0.0 && p < 1.0 && rel > 0.0) {
        return None;
    }
    Some((stats::Z95 * stats::Z95 * (1.0 - p) / (p * rel * rel)).ceil() as usize)
}

/// [`lambda_tail`] with the replica count sized by a pilot run: the pilot's
/// smallest positive `p̂` sets the count needed for relative half-width
/// `target_rel`, clamped to `[pilot, max_replicas]`.
pub fn lambda_tail_auto(
    t: f64,
    z_list: &[f64],
    pilot: usize,
    target_rel: f64,
    max_replicas: usize,
    dt: f64,
    stream: &RandomStream,
) -> Result<TailTable> {
    let pilot_table = lambda_tail(t, z_list, pilot, dt, &stream.child(u64::MAX))?;
    let p_min = pilot_table
        .rows
        .iter()
        .map(|r| r.p_hat.value)
        .filter(|&p| p > 0.0)
        .fold(f64::INFINITY, f64::min);
    // Nothing seen in the pilot: assume one hit in the pilot size.
    let p_min = if p_min.is_finite() { p_min } else { 1.0 / pilot as f64 };
    let n = replicas_for_relative_precision(p_min.min(0.5), target_rel)
        .unwrap_or(max_replicas)
        .clamp(pilot, max_replicas.max(pilot));
    lambda_tail(t, z_list, n, dt, stream)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least squares of `log(p/z)` on `z`.
pub fn fit_log_tail(z: &[f64], p: &[f64]) -> Result<SlopeFit> {
    let pts: Vec<(f64, f64)> = z
        .iter()
        .zip(p)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&z, &p)| (z, (p / z).ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::DegenerateFit(format!("need at least 3 rows with p > 0, got {}", pts.len())));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if !(sxx > 1e-12 * (1.0 + mx * mx)) {
        return Err(Error::DegenerateFit("all z values are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(SlopeFit { slope, intercept, r2 })
}

/// Fit of `log(p̂/z)` against `z` over the table's positive rows; the slope
/// should be near `−√2` and the intercept estimates `log c`.
pub fn tail_slope_fit(table: &TailTable) -> Result<SlopeFit> {
    let z: Vec<f64> = table.rows.iter().map(|r| r.z).collect();
    let p: Vec<f64> = table.rows.iter().map(|r| r.p_hat.value).collect();
    fit_log_tail(&z, &p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalEstimate {
    pub estimate: MCEstimate,
    pub budget_exceeded: usize,
}

/// Probability that some particle stays above
/// `g(u) = √2u − A_c u^{1/3} + A_c u^{1/3}/log²(u+e) − 1` on `[0, t]`.
pub fn jaffuel_survival(t: f64, replicas: usize, dt: f64, stream: &RandomStream) -> Result<SurvivalEstimate> {
    if !(t > 0.0) {
        return Err(Error::Param(format!("t must be positive, got {t}")));
    }
    let pair = curves::make_curves(CurveFamily::Jaffuel)?;
    let prepared = TubeScenario::new(t, dt).with_tube(&pair).prepare()?;
    survival_probability(&prepared, replicas, stream)
}

/// Probability that the scenario's system is alive at its horizon.
pub fn survival_probability(prepared: &PreparedScenario, replicas: usize, stream: &RandomStream) -> Result<SurvivalEstimate> {
    let outcomes = map_replicas(replicas, |i| prepared.survives(&stream.child(i as u64)));
    let exceeded = outcomes.iter().filter(|o| o.budget_exceeded).count();
    let kept = replicas - exceeded;
    if kept == 0 {
        return Err(Error::BudgetExceeded { population: 0, cap: prepared.scenario().population_cap });
    }
    let hits = outcomes.iter().filter(|o| o.survived).count();
    Ok(SurvivalEstimate { estimate: MCEstimate::proportion(hits, kept, stream.master_seed)?, budget_exceeded: exceeded })
}

/// Summary of `y e^{−√2 y} K(y, t_y)` over replicas for one `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeveuRow {
    pub y: f64,
    pub t: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub mean: f64,
    /// Heavy-tail diagnostic: the largest statistic over the median.
    pub max_over_median: f64,
    /// Median over replicas of this statistic divided by the previous `y`'s; absent for the first row.
    pub ratio_median: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeveuSummary {
    pub rows: Vec<NeveuRow>,
    /// Per replica, the statistic for each `y`.
    pub statistics: Vec<Vec<f64>>,
    pub budget_exceeded: usize,
}

/// Horizon used for `K(y, ·)`: `2y²` unless fixed.
pub fn neveu_horizon(y: f64, fixed: Option<f64>) -> f64 {
    fixed.unwrap_or(2.0 * y * y)
}

/// `y e^{−√2 y} K(y, t_y)` for every `y` on common replicas.
///
/// One run per replica absorbs at `√2 u − y_max` and records when each
/// lineage's running `sup (√2 s − X(s))` first passes each `y`; those are
/// exactly the absorptions the system killed at `√2 u − y` would see.
pub fn neveu_summary(y_list: &[f64], t: Option<f64>, replicas: usize, dt: f64, stream: &RandomStream) -> Result<NeveuSummary> {
    if y_list.is_empty() || y_list.windows(2).any(|w| !(w[0] < w[1])) || !(y_list[0] > 0.0) {
        return Err(Error::Param("y values must be positive and strictly increasing".into()));
    }
    if replicas < 2 {
        return Err(Error::Param("need at least two replicas".into()));
    }
    let horizons: Vec<f64> = y_list.iter().map(|&y| neveu_horizon(y, t)).collect();
    let horizon = horizons.iter().copied().fold(0.0, f64::max);
    let y_max = *y_list.last().expect("nonempty");
    let mut sc = TubeScenario::new(horizon, dt).with_critical_line(y_max);
    sc.lambda_levels = y_list.to_vec();
    sc.observation_times = horizons.clone();
    let prepared = sc.prepare()?;

    let runs = map_replicas(replicas, |i| {
        let out = prepared.run(&stream.child(i as u64));
        let stats: Vec<f64> = y_list
            .iter()
            .zip(&horizons)
            .zip(&out.level_crossing_times)
            .map(|((&y, &ty), times)| {
                let k = times.iter().filter(|&&s| s <= ty * (1.0 + 1e-12)).count();
                y * (-SQRT_2 * y).exp() * k as f64
            })
            .collect();
        (stats, out.budget_exceeded)
    });
    let exceeded = runs.iter().filter(|r| r.1).count();
    let statistics: Vec<Vec<f64>> = runs.into_iter().filter(|r| !r.1).map(|r| r.0).collect();
    if statistics.len() < 2 {
        return Err(Error::BudgetExceeded { population: 0, cap: prepared.scenario().population_cap });
    }

    let mut rows = Vec::with_capacity(y_list.len());
    for (j, (&y, &ty)) in y_list.iter().zip(&horizons).enumerate() {
        let mut col: Vec<f64> = statistics.iter().map(|s| s[j]).collect();
        col.sort_by(f64::total_cmp);
        let median = stats::quantile(&col, 0.5).unwrap_or(f64::NAN);
        let ratio_median = (j > 0).then(|| {
            let mut ratios: Vec<f64> = statistics.iter().map(|s| ratio(s[j], s[j - 1])).filter(|r| !r.is_nan()).collect();
            ratios.sort_by(f64::total_cmp);
            stats::quantile(&ratios, 0.5).unwrap_or(f64::NAN)
        });
        rows.push(NeveuRow {
            y,
            t: ty,
            median,
            q1: stats::quantile(&col, 0.25).unwrap_or(f64::NAN),
            q3: stats::quantile(&col, 0.75).unwrap_or(f64::NAN),
            mean: col.iter().sum::<f64>() / col.len() as f64,
            max_over_median: col.last().copied().unwrap_or(f64::NAN) / median,
            ratio_median,
        });
    }
    Ok(NeveuSummary { rows, statistics, budget_exceeded: exceeded })
}

/// `a / b`, with `x / 0 = +∞` for `x > 0` and `0 / 0` undefined.
fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else if a > 0.0 {
        f64::INFINITY
    } else {
        f64::NAN
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManyToOne {
    pub population_mean: MCEstimate,
    pub prediction: MCEstimate,
    pub zscore: f64,
}

/// Mean number of particles in the scenario's event at time `u` (window at
/// `u`, curves respected on `[0, u]`) against `e^u` times the probability of
/// the same event for one Brownian path, on independent streams.
pub fn many_to_one(
    scenario: &TubeScenario,
    u: f64,
    population_replicas: usize,
    path_replicas: usize,
    stream: &RandomStream,
) -> Result<ManyToOne> {
    if !(u >= 0.0 && u <= scenario.horizon) {
        return Err(Error::Param(format!("u = {u} outside [0, {}]", scenario.horizon)));
    }
    let mut population = scenario.clone();
    population.horizon = u.max(scenario.dt.min(scenario.horizon));
    population.branching = true;
    population.observation_times = vec![u];
    let prepared = population.prepare()?;
    let counts = map_replicas(population_replicas, |i| {
        let out = prepared.run(&stream.child(0).child(i as u64));
        let obs = out.observation_at(u).expect("u is an observation time");
        (obs.window_count.unwrap_or(obs.population) as f64, out.budget_exceeded)
    });
    if counts.iter().any(|c| c.1) {
        return Err(Error::BudgetExceeded { population: 0, cap: population.population_cap });
    }
    let values: Vec<f64> = counts.into_iter().map(|c| c.0).collect();
    let population_mean = MCEstimate::mean(&values, stream.master_seed)?;

    let mut single = population.clone();
    single.branching = false;
    let single = single.prepare()?;
    let probability = if u == 0.0 {
        let inside = single.window_contains(0.0, single.scenario().start);
        MCEstimate::exact(f64::from(u8::from(inside)), stream.master_seed)
    } else {
        engine::single_particle_probability(&single, u, 0.0, path_replicas, &stream.child(1))?
    };
    let prediction = probability.scaled(u.exp());
    Ok(ManyToOne { population_mean, prediction, zscore: stats::z_score(&population_mean, &prediction) })
}

/// Population scenario for the top-window count of the shrinking tube of horizon `t`.
pub fn shrinking_tube_scenario(t: f64, z: f64, dt: f64) -> Result<TubeScenario> {
    let pair = curves::make_curves(CurveFamily::ShrinkingTube { t, z })?;
    let mut sc = TubeScenario::new(t, dt).with_tube(&pair);
    sc.top_window = Some(TopWindow::STANDARD);
    Ok(sc)
}

/// [`many_to_one`] for the top window of the shrinking tube.
pub fn many_to_one_check(
    t: f64,
    z: f64,
    u: f64,
    population_replicas: usize,
    path_replicas: usize,
    dt: f64,
    stream: &RandomStream,
) -> Result<ManyToOne> {
    if !(u >= 0.0 && u <= t) {
        return Err(Error::Param(format!("need 0 ≤ u ≤ t, got u = {u}, t = {t}")));
    }
    many_to_one(&shrinking_tube_scenario(t, z, dt)?, u, population_replicas, path_replicas, stream)
}

/// Direct estimate of `E[#A(m) · #A(n)]` from full population runs.
pub fn population_pair_moment(scenario: &TubeScenario, m: f64, n: f64, replicas: usize, stream: &RandomStream) -> Result<MCEstimate> {
    if !(0.0 <= m && m <= n && n <= scenario.horizon) {
        return Err(Error::Param(format!("need 0 ≤ m ≤ n ≤ horizon, got m = {m}, n = {n}")));
    }
    let mut sc = scenario.clone();
    sc.horizon = n;
    sc.observation_times = vec![m, n];
    let prepared = sc.prepare()?;
    let products = map_replicas(replicas, |i| {
        let out = prepared.run(&stream.child(i as u64));
        let count = |u: f64| {
            let o = out.observation_at(u).expect("observation time");
            o.window_count.unwrap_or(o.population) as f64
        };
        (count(m) * count(n), out.budget_exceeded)
    });
    if products.iter().any(|p| p.1) {
        return Err(Error::BudgetExceeded { population: 0, cap: sc.population_cap });
    }
    let values: Vec<f64> = products.into_iter().map(|p| p.0).collect();
    MCEstimate::mean(&values, stream.master_seed)
}

/// Location of `Λ(t)` relative to `a_c t^{1/3}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationRow {
    pub t: f64,
    /// `a_c t^{1/3}`.
    pub center: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// Fraction of replicas with `Λ(t)` above the pruning level (value unknown, treated as `+∞`).
    pub censored_fraction: f64,
}

/// `Λ(t)` per replica at each of `times` (ascending), pruning at
/// `√2 u − (a_c t_max^{1/3} + margin)`. Values above that level are `+∞`.
pub fn lambda_paths(times: &[f64], margin: f64, replicas: usize, dt: f64, stream: &RandomStream) -> Result<(Vec<Vec<f64>>, usize)> {
    if times.is_empty() || times.windows(2).any(|w| !(w[0] < w[1])) || !(times[0] > 0.0) {
        return Err(Error::Param("times must be positive and strictly increasing".into()));
    }
    let t_max = *times.last().expect("nonempty");
    let prepared = lambda_scenario(times, curves::a_c() * t_max.cbrt() + margin, dt)?;
    let runs = map_replicas(replicas, |i| {
        let out = prepared.run(&stream.child(i as u64));
        let ls: Vec<f64> = times
            .iter()
            .map(|&t| out.observation_at(t).and_then(|o| o.lambda_min).unwrap_or(f64::INFINITY))
            .collect();
        (ls, out.budget_exceeded)
    });
    let exceeded = runs.iter().filter(|r| r.1).count();
    Ok((runs.into_iter().filter(|r| !r.1).map(|r| r.0).collect(), exceeded))
}

/// Median and quartiles of `Λ(t)` at each time, from [`lambda_paths`].
pub fn lambda_location(times: &[f64], margin: f64, replicas: usize, dt: f64, stream: &RandomStream) -> Result<(Vec<LocationRow>, usize)> {
    let (paths, exceeded) = lambda_paths(times, margin, replicas, dt, stream)?;
    if paths.is_empty() {
        return Err(Error::BudgetExceeded { population: 0, cap: engine::DEFAULT_POPULATION_CAP });
    }
    let rows = times
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let mut col: Vec<f64> = paths.iter().map(|p| p[j]).collect();
            col.sort_by(f64::total_cmp);
            LocationRow {
                t,
                center: curves::a_c() * t.cbrt(),
                median: stats::quantile(&col, 0.5).unwrap_or(f64::NAN),
                q1: stats::quantile(&col, 0.25).unwrap_or(f64::NAN),
                q3: stats::quantile(&col, 0.75).unwrap_or(f64::NAN),
                censored_fraction: col.iter().filter(|l| l.is_infinite()).count() as f64 / col.len() as f64,
            }
        })
        .collect();
    Ok((rows, exceeded))
}

/// Single-path probability of staying in `(−1, 1)` up to `t` from `y` and ending in `(p, q)`.
pub fn feller_monte_carlo(y: f64, t: f64, p: f64, q: f64, replicas: usize, dt: f64, stream: &RandomStream) -> Result<MCEstimate> {
    if !(y > -1.0 && y < 1.0 && -1.0 <= p && p < q && q <= 1.0) {
        return Err(Error::Param(format!("need -1 < y < 1 and -1 ≤ p < q ≤ 1, got y = {y}, ({p}, {q})")));
    }
    let mut sc = TubeScenario::new(t, dt);
    sc.lower = Some(Curve::constant(-1.0, t));
    sc.upper = Some(Curve::constant(1.0, t));
    sc.start = y;
    sc.branching = false;
    // Ending in (p, q) is sitting between 1 − q and 1 − p below the top.
    if p > -1.0 || q < 1.0 {
        sc.top_window = Some(TopWindow { far: 1.0 - p, near: 1.0 - q });
    }
    engine::single_particle_probability(&sc.prepare()?, t, 0.0, replicas, stream)
}
