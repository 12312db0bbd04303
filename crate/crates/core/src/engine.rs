//! Branching Brownian motion with absorbing curved barriers.
//!
//! Time runs on a grid made of the multiples of `dt`, the observation times
//! and the horizon. Barriers are evaluated on the grid and taken to be linear
//! between grid points. Each particle moves in sub-segments that end at grid
//! points or at its own branch time, and every sub-segment consumes the same
//! three draws (a normal and two uniforms) from the particle's own stream.
//! Two scenarios with the same grid and seed therefore move every particle
//! identically for as long as it is alive in both, which is what makes
//! pathwise comparisons across barriers and horizons meaningful.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};
use std::f64::consts::SQRT_2;

use crate::curves::{self, Curve, CurveFamily, CurvePair};
use crate::error::{Error, Result};
use crate::kernels::{self, RandomStream, ROOT_LINEAGE};
use crate::parallel::map_replicas;
use crate::stats::MCEstimate;

pub const DEFAULT_DT: f64 = 0.01;
pub const DEFAULT_POPULATION_CAP: usize = 10_000_000;

// Above this exponent the crossing probability is below the smallest uniform draw (2^-53).
const NEGLIGIBLE_EXPONENT: f64 = 37.0;

/// Band `[L − far, L − near)` of heights above the lower curve, i.e. between
/// `near` and `far` below the upper curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopWindow {
    pub far: f64,
    pub near: f64,
}

impl TopWindow {
    /// `[L − 2, L − 1)`.
    pub const STANDARD: TopWindow = TopWindow { far: 2.0, near: 1.0 };

    #[inline]
    fn contains(&self, gap_below_top: f64) -> bool {
        gap_below_top > self.near && gap_below_top <= self.far
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeScenario {
    /// Absorbing lower curve.
    pub lower: Option<Curve>,
    /// Absorbing upper curve, in absolute coordinates (`f + L` for a tube).
    pub upper: Option<Curve>,
    /// Position of the initial particle.
    pub start: f64,
    /// Drift of every particle; zero for standard BBM.
    pub drift: f64,
    pub horizon: f64,
    pub dt: f64,
    /// Band counted at each observation time; needs both curves.
    pub top_window: Option<TopWindow>,
    /// Track each particle's running `sup (√2 s − X(s))`.
    pub track_lambda: bool,
    /// Levels whose first crossing by the running sup is recorded, per lineage.
    pub lambda_levels: Vec<f64>,
    pub branching: bool,
    pub population_cap: usize,
    pub observation_times: Vec<f64>,
}

impl TubeScenario {
    /// Free BBM from the origin: no barriers, no observations.
    pub fn new(horizon: f64, dt: f64) -> Self {
        TubeScenario {
            lower: None,
            upper: None,
            start: 0.0,
            drift: 0.0,
            horizon,
            dt,
            top_window: None,
            track_lambda: false,
            lambda_levels: Vec::new(),
            branching: true,
            population_cap: DEFAULT_POPULATION_CAP,
            observation_times: Vec::new(),
        }
    }

    /// Sets the lower curve to `f` and, when present, the upper to `f + L`.
    pub fn with_tube(mut self, pair: &CurvePair) -> Self {
        self.upper = pair.upper();
        self.lower = Some(pair.lower.clone());
        self
    }

    /// Lower barrier at the line `√2 u − level`.
    pub fn with_critical_line(mut self, level: f64) -> Self {
        self.lower = Some(Curve::line(SQRT_2, -level, f64::INFINITY));
        self
    }

    pub fn prepare(&self) -> Result<PreparedScenario> {
        PreparedScenario::new(self.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParticleStatus {
    Alive,
    AbsorbedLower,
    AbsorbedUpper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub position: f64,
    /// `sup (√2 s − X(s))` along the particle's ancestry so far.
    pub running_lambda: f64,
    pub born_at: f64,
    pub lineage: u64,
    pub status: ParticleStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time: f64,
    pub population: usize,
    /// Particles in the top window, when one is configured.
    pub window_count: Option<usize>,
    /// Minimum running sup over live particles; `+∞` once extinct.
    pub lambda_min: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryOutcome {
    pub final_population: usize,
    pub max_population: usize,
    /// Minimum running sup over the particles alive at the horizon; `+∞` if none.
    pub lambda_min: Option<f64>,
    pub observations: Vec<Observation>,
    pub upper_absorption_times: Vec<f64>,
    pub lower_absorption_count: usize,
    /// For each configured level, the times at which a lineage's running sup first passed it.
    pub level_crossing_times: Vec<Vec<f64>>,
    pub survived: bool,
    pub budget_exceeded: bool,
    /// Time the simulation reached; below the horizon only when the cap was hit.
    pub end_time: f64,
    pub survivors: Vec<ParticleState>,
}

impl TrajectoryOutcome {
    pub fn observation_at(&self, time: f64) -> Option<&Observation> {
        self.observations.iter().find(|o| (o.time - time).abs() <= 1e-9 * (1.0 + time.abs()))
    }
}

struct Live {
    state: ParticleState,
    next_branch: f64,
    rng: Pcg64,
}

enum Fate {
    Moved(f64),
    Lower,
    Upper,
}

/// A validated scenario with its grid and barrier values precomputed, ready
/// for many replicas.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    scenario: TubeScenario,
    times: Vec<f64>,
    lower: Option<Vec<f64>>,
    upper: Option<Vec<f64>>,
    observation_index: Vec<usize>,
    levels: Vec<f64>,
}

fn sample_grid(curve: &Curve, times: &[f64], name: &str) -> Result<Vec<f64>> {
    times
        .iter()
        .map(|&u| {
            let v = curve.eval(u)?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Domain(format!("{name} curve is not finite at u = {u}")))
            }
        })
        .collect()
}

impl PreparedScenario {
    pub fn new(scenario: TubeScenario) -> Result<Self> {
        let s = &scenario;
        if !(s.horizon > 0.0 && s.horizon.is_finite()) {
            return Err(Error::Param(format!("horizon must be positive and finite, got {}", s.horizon)));
        }
        if !(s.dt > 0.0 && s.dt.is_finite()) {
            return Err(Error::Param(format!("dt must be positive and finite, got {}", s.dt)));
        }
        if !s.start.is_finite() || !s.drift.is_finite() {
            return Err(Error::Param("start and drift must be finite".into()));
        }
        if s.population_cap == 0 {
            return Err(Error::Param("population cap must be positive".into()));
        }
        if s.top_window.is_some() && (s.lower.is_none() || s.upper.is_none()) {
            return Err(Error::Param("a top window needs both a lower and an upper curve".into()));
        }
        if let Some(w) = s.top_window {
            if !(w.near >= 0.0 && w.far > w.near) {
                return Err(Error::Param(format!("top window needs 0 ≤ near < far, got {w:?}")));
            }
        }
        if s.lambda_levels.iter().any(|l| !l.is_finite()) {
            return Err(Error::Param("lambda levels must be finite".into()));
        }
        for &u in &s.observation_times {
            if !(u >= 0.0 && u <= s.horizon) {
                return Err(Error::Param(format!("observation time {u} outside [0, {}]", s.horizon)));
            }
        }

        let steps = (s.horizon / s.dt).ceil() as usize;
        let mut times: Vec<f64> = (0..steps).map(|k| k as f64 * s.dt).collect();
        times.extend(s.observation_times.iter().copied());
        times.push(s.horizon);
        times.sort_by(f64::total_cmp);
        // Merge points closer than rounding noise, preferring exact observation times.
        let eps = 1e-9 * s.dt.min(1.0);
        let mut grid: Vec<f64> = Vec::with_capacity(times.len());
        for u in times {
            if u > s.horizon {
                continue;
            }
            match grid.last_mut() {
                Some(last) if u - *last <= eps => {
                    if s.observation_times.contains(&u) || u == s.horizon {
                        *last = u;
                    }
                }
                _ => grid.push(u),
            }
        }
        if grid[0] != 0.0 {
            grid.insert(0, 0.0);
        }

        let lower = s.lower.as_ref().map(|c| sample_grid(c, &grid, "lower")).transpose()?;
        let upper = s.upper.as_ref().map(|c| sample_grid(c, &grid, "upper")).transpose()?;
        if let (Some(lo), Some(up)) = (&lower, &upper) {
            if let Some(k) = (0..grid.len()).find(|&k| !(lo[k] < up[k])) {
                return Err(Error::Param(format!("lower curve is not below the upper curve at u = {}", grid[k])));
            }
        }

        let mut obs: Vec<f64> = s.observation_times.clone();
        obs.sort_by(f64::total_cmp);
        obs.dedup();
        let observation_index = obs
            .iter()
            .map(|&u| {
                grid.iter()
                    .enumerate()
                    .min_by(|a, b| (a.1 - u).abs().total_cmp(&(b.1 - u).abs()))
                    .map(|(k, _)| k)
                    .unwrap_or(0)
            })
            .collect();

        let mut levels = s.lambda_levels.clone();
        levels.sort_by(f64::total_cmp);
        Ok(PreparedScenario { scenario, times: grid, lower, upper, observation_index, levels })
    }

    pub fn scenario(&self) -> &TubeScenario {
        &self.scenario
    }

    pub fn grid(&self) -> &[f64] {
        &self.times
    }

    /// Interval index `k` with `times[k] ≤ u < times[k+1]` (the last interval for `u = horizon`).
    fn interval_of(&self, u: f64) -> usize {
        let k = self.times.partition_point(|&g| g <= u);
        k.saturating_sub(1).min(self.times.len() - 2)
    }

    #[inline]
    fn lerp(values: &[f64], times: &[f64], k: usize, u: f64) -> f64 {
        let (t0, t1) = (times[k], times[k + 1]);
        let w = (u - t0) / (t1 - t0);
        values[k] + (values[k + 1] - values[k]) * w
    }

    /// Barrier values at `u` inside interval `k`.
    #[inline]
    fn barriers(&self, k: usize, u: f64) -> (f64, f64) {
        let lo = self.lower.as_ref().map_or(f64::NEG_INFINITY, |v| Self::lerp(v, &self.times, k, u));
        let up = self.upper.as_ref().map_or(f64::INFINITY, |v| Self::lerp(v, &self.times, k, u));
        (lo, up)
    }

    /// Whether a particle at `x` sits in the top window at grid-interval
    /// position `u`. Always true without a window.
    fn in_window(&self, k: usize, u: f64, x: f64) -> bool {
        match self.scenario.top_window {
            None => true,
            Some(w) => {
                let (_, up) = self.barriers(k, u);
                w.contains(up - x)
            }
        }
    }

    /// One sub-segment from `(s, x)` to time `e` inside interval `k`.
    /// Returns the fate and the minimum of `X(r) − √2 r` when requested.
    #[inline]
    fn segment(&self, rng: &mut Pcg64, k: usize, s: f64, e: f64, x: f64, drift: f64, want_min: bool) -> (Fate, f64) {
        let h = e - s;
        let z: f64 = StandardNormal.sample(rng);
        let u_lo = kernels::open_uniform(rng);
        let u_hi = kernels::open_uniform(rng);
        let x1 = x + drift * h + h.sqrt() * z;

        let adjusted_min = if want_min {
            kernels::bridge_min_from_uniform(x - SQRT_2 * s, x1 - SQRT_2 * e, h, u_lo)
        } else {
            f64::NAN
        };

        let (lo0, up0) = self.barriers(k, s);
        let (lo1, up1) = self.barriers(k, e);
        if self.lower.is_some() && crosses(x - lo0, x1 - lo1, h, u_lo) {
            return (Fate::Lower, adjusted_min);
        }
        if self.upper.is_some() && crosses(up0 - x, up1 - x1, h, u_hi) {
            return (Fate::Upper, adjusted_min);
        }
        (Fate::Moved(x1), adjusted_min)
    }

    /// Moves a single unbranching path from `(from, x)` to `to` with the given
    /// drift. Returns the end position, or `None` if it was absorbed.
    pub fn advance_path(&self, rng: &mut Pcg64, x: f64, from: f64, to: f64, drift: f64) -> Option<f64> {
        let mut x = x;
        let mut s = from;
        let mut k = self.interval_of(from);
        while s < to {
            while self.times[k + 1] <= s {
                k += 1;
            }
            let e = self.times[k + 1].min(to);
            match self.segment(rng, k, s, e, x, drift, false).0 {
                Fate::Moved(x1) => x = x1,
                _ => return None,
            }
            s = e;
        }
        Some(x)
    }

    /// Whether a particle at `x` at time `u` lies in the top window.
    pub fn window_contains(&self, u: f64, x: f64) -> bool {
        self.in_window(self.interval_of(u), u, x)
    }

    fn spawn(&self, key: u64, lineage: u64, x: f64, lambda: f64, born_at: f64) -> Live {
        let mut rng = kernels::rng_for(key, lineage);
        let next_branch = if self.scenario.branching {
            let e: f64 = Exp1.sample(&mut rng);
            born_at + e
        } else {
            f64::INFINITY
        };
        Live {
            state: ParticleState { position: x, running_lambda: lambda, born_at, lineage, status: ParticleStatus::Alive },
            next_branch,
            rng,
        }
    }

    fn observe(&self, j: usize, live: &[Live]) -> Observation {
        let u = self.times[j];
        let k = j.min(self.times.len() - 2);
        let window_count = self
            .scenario
            .top_window
            .map(|_| live.iter().filter(|p| self.in_window(k, u, p.state.position)).count());
        let lambda_min = self
            .scenario
            .track_lambda
            .then(|| live.iter().map(|p| p.state.running_lambda).fold(f64::INFINITY, f64::min));
        Observation { time: u, population: live.len(), window_count, lambda_min }
    }

    /// One full trajectory of the system.
    pub fn run(&self, stream: &RandomStream) -> TrajectoryOutcome {
        let sc = &self.scenario;
        let key = stream.lineage_key();
        let want_min = sc.track_lambda || !self.levels.is_empty();
        let mut out = TrajectoryOutcome {
            final_population: 0,
            max_population: 1,
            lambda_min: None,
            observations: Vec::with_capacity(self.observation_index.len()),
            upper_absorption_times: Vec::new(),
            lower_absorption_count: 0,
            level_crossing_times: vec![Vec::new(); self.levels.len()],
            survived: false,
            budget_exceeded: false,
            end_time: 0.0,
            survivors: Vec::new(),
        };

        let mut live = vec![self.spawn(key, ROOT_LINEAGE, sc.start, -sc.start, 0.0)];
        let mut next: Vec<Live> = Vec::new();
        let mut pending: Vec<(Live, f64)> = Vec::new();
        let mut obs_cursor = 0;
        let record = |j: usize, live: &[Live], out: &mut TrajectoryOutcome, cursor: &mut usize| {
            while *cursor < self.observation_index.len() && self.observation_index[*cursor] == j {
                out.observations.push(self.observe(j, live));
                *cursor += 1;
            }
        };
        record(0, &live, &mut out, &mut obs_cursor);

        let intervals = self.times.len() - 1;
        let mut reached = 0;
        for k in 0..intervals {
            if live.is_empty() {
                break;
            }
            let (t0, t1) = (self.times[k], self.times[k + 1]);
            next.clear();
            pending.extend(live.drain(..).map(|p| (p, t0)));
            while let Some((mut p, mut s)) = pending.pop() {
                loop {
                    if s >= t1 {
                        next.push(p);
                        break;
                    }
                    let e = p.next_branch.min(t1);
                    let fate = if e > s {
                        let (fate, adjusted_min) = self.segment(&mut p.rng, k, s, e, p.state.position, sc.drift, want_min);
                        if want_min {
                            let before = p.state.running_lambda;
                            let after = before.max(-adjusted_min);
                            if after > before {
                                for (i, &level) in self.levels.iter().enumerate() {
                                    if level > before && level <= after {
                                        out.level_crossing_times[i].push(e);
                                    }
                                }
                                p.state.running_lambda = after;
                            }
                        }
                        fate
                    } else {
                        Fate::Moved(p.state.position)
                    };
                    match fate {
                        Fate::Lower => {
                            out.lower_absorption_count += 1;
                            break;
                        }
                        Fate::Upper => {
                            out.upper_absorption_times.push(e);
                            break;
                        }
                        Fate::Moved(x1) => {
                            p.state.position = x1;
                            s = e;
                            if e >= p.next_branch {
                                let parent = p.state.lineage;
                                for child in 0..2 {
                                    let id = kernels::child_lineage(parent, child);
                                    let c = self.spawn(key, id, x1, p.state.running_lambda, e);
                                    pending.push((c, e));
                                }
                                break;
                            }
                        }
                    }
                }
            }
            std::mem::swap(&mut live, &mut next);
            reached = k + 1;
            out.max_population = out.max_population.max(live.len());
            record(k + 1, &live, &mut out, &mut obs_cursor);
            if live.len() > sc.population_cap {
                out.budget_exceeded = true;
                break;
            }
        }

        out.end_time = self.times[reached];
        // Observations after extinction see an empty system.
        if !out.budget_exceeded {
            for j in reached + 1..self.times.len() {
                record(j, &[], &mut out, &mut obs_cursor);
            }
        }
        out.final_population = if reached == intervals { live.len() } else { 0 };
        out.survived = out.final_population > 0;
        if sc.track_lambda {
            out.lambda_min = Some(if out.survived {
                live.iter().map(|p| p.state.running_lambda).fold(f64::INFINITY, f64::min)
            } else {
                f64::INFINITY
            });
        }
        if out.budget_exceeded {
            out.final_population = live.len();
        }
        out.survivors = live.into_iter().map(|p| p.state).collect();
        out
    }
}

impl PreparedScenario {
    /// Whether any particle is alive at the horizon, found depth first.
    ///
    /// Lineages draw from their own streams, so this realises the same system
    /// as [`PreparedScenario::run`] and agrees with its `survived` flag; it just
    /// stops at the first lineage that reaches the horizon. `budget_exceeded`
    /// is set when the stack of unexplored siblings outgrows the population cap.
    pub fn survives(&self, stream: &RandomStream) -> SurvivalOutcome {
        let sc = &self.scenario;
        let key = stream.lineage_key();
        let horizon = *self.times.last().expect("grid is never empty");
        let mut stack = vec![(self.spawn(key, ROOT_LINEAGE, sc.start, -sc.start, 0.0), 0.0)];
        let mut explored = 0usize;
        while let Some((mut p, mut s)) = stack.pop() {
            explored += 1;
            let mut k = self.interval_of(s);
            loop {
                if s >= horizon {
                    return SurvivalOutcome { survived: true, budget_exceeded: false, explored };
                }
                while self.times[k + 1] <= s {
                    k += 1;
                }
                let e = p.next_branch.min(self.times[k + 1]);
                let fate = if e > s {
                    self.segment(&mut p.rng, k, s, e, p.state.position, sc.drift, false).0
                } else {
                    Fate::Moved(p.state.position)
                };
                let Fate::Moved(x1) = fate else { break };
                p.state.position = x1;
                s = e;
                if e >= p.next_branch {
                    let parent = p.state.lineage;
                    let second = self.spawn(key, kernels::child_lineage(parent, 1), x1, 0.0, e);
                    stack.push((second, e));
                    p = self.spawn(key, kernels::child_lineage(parent, 0), x1, 0.0, e);
                    explored += 1;
                    if stack.len() > sc.population_cap {
                        return SurvivalOutcome { survived: false, budget_exceeded: true, explored };
                    }
                }
            }
        }
        SurvivalOutcome { survived: false, budget_exceeded: false, explored }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurvivalOutcome {
    pub survived: bool,
    pub budget_exceeded: bool,
    /// Particles visited before the answer was known.
    pub explored: usize,
}

#[inline]
fn crosses(d0: f64, d1: f64, h: f64, u: f64) -> bool {
    if d0 <= 0.0 || d1 <= 0.0 {
        return true;
    }
    let exponent = 2.0 * d0 * d1 / h;
    exponent < NEGLIGIBLE_EXPONENT && u < (-exponent).exp()
}

/// Validates and runs one trajectory.
pub fn simulate(scenario: &TubeScenario, stream: &RandomStream) -> Result<TrajectoryOutcome> {
    Ok(scenario.prepare()?.run(stream))
}

/// `K(y, t)`: the number of particles absorbed at the line `√2 u − y` before time `t`.
pub fn absorbed_count_at_line(y: f64, t: f64, dt: f64, stream: &RandomStream) -> Result<usize> {
    if !(y > 0.0) {
        return Err(Error::Param(format!("y must be positive, got {y}")));
    }
    let out = simulate(&TubeScenario::new(t, dt).with_critical_line(y), stream)?;
    if out.budget_exceeded {
        return Err(Error::BudgetExceeded { population: out.max_population, cap: DEFAULT_POPULATION_CAP });
    }
    Ok(out.lower_absorption_count)
}

/// Monte Carlo of the many-to-two formula for `E[#A(m) · #A(n)]`, where
/// `#A(u)` counts particles at time `u` that stayed between the scenario's
/// curves on `[0, u]` and sit in its top window.
///
/// Each replica draws a split time `r` with density `∝ e^{−r}` on `[0, m]`
/// and contributes `e^n·1{one path in both events} + 2e^{m+n}(1−e^{−m})·1{pair events}`,
/// where the pair shares its path up to `r`.
pub fn pair_moment_estimate(
    prepared: &PreparedScenario,
    m: f64,
    n: f64,
    replicas: usize,
    stream: &RandomStream,
) -> Result<MCEstimate> {
    if !(0.0 <= m && m <= n && n <= prepared.scenario.horizon) {
        return Err(Error::Param(format!(
            "need 0 ≤ m ≤ n ≤ horizon, got m = {m}, n = {n}, horizon = {}",
            prepared.scenario.horizon
        )));
    }
    if replicas < 2 {
        return Err(Error::Param("need at least two replicas".into()));
    }
    let x0 = prepared.scenario.start;
    let pair_weight = 2.0 * (m + n).exp() * (-(-m).exp_m1());
    let single_weight = n.exp();
    let values = map_replicas(replicas, |i| {
        let rs = stream.child(i as u64);
        // single lineage alive at both times
        let mut rng = rs.lineage_rng(1);
        let single = prepared
            .advance_path(&mut rng, x0, 0.0, m, 0.0)
            .filter(|&x| prepared.window_contains(m, x))
            .and_then(|x| prepared.advance_path(&mut rng, x, m, n, 0.0))
            .filter(|&x| prepared.window_contains(n, x))
            .is_some();

        let pair = if m > 0.0 {
            let mut rr = rs.lineage_rng(2);
            let r = -(-rr.random::<f64>() * (-(-m).exp_m1())).ln_1p();
            let r = r.clamp(0.0, m);
            let mut trunk = rs.lineage_rng(3);
            prepared.advance_path(&mut trunk, x0, 0.0, r, 0.0).is_some_and(|xr| {
                let first = prepared
                    .advance_path(&mut rs.lineage_rng(4), xr, r, m, 0.0)
                    .is_some_and(|x| prepared.window_contains(m, x));
                first
                    && prepared
                        .advance_path(&mut rs.lineage_rng(5), xr, r, n, 0.0)
                        .is_some_and(|x| prepared.window_contains(n, x))
            })
        } else {
            false
        };
        single_weight * f64::from(u8::from(single)) + pair_weight * f64::from(u8::from(pair))
    });
    MCEstimate::mean(&values, stream.master_seed)
}

/// [`pair_moment_estimate`] on the shrinking tube of horizon `t` with the standard top window.
pub fn correlated_pair_estimate(
    t: f64,
    z: f64,
    m: f64,
    n: f64,
    replicas: usize,
    dt: f64,
    stream: &RandomStream,
) -> Result<MCEstimate> {
    if !(t / 3.0 <= m && m <= n && n <= 2.0 * t / 3.0) {
        return Err(Error::Param(format!("need t/3 ≤ m ≤ n ≤ 2t/3, got t = {t}, m = {m}, n = {n}")));
    }
    let pair = curves::make_curves(CurveFamily::ShrinkingTube { t, z })?;
    let mut scenario = TubeScenario::new(n, dt).with_tube(&pair);
    scenario.top_window = Some(TopWindow::STANDARD);
    scenario.observation_times = vec![m, n];
    pair_moment_estimate(&scenario.prepare()?, m, n, replicas, stream)
}

/// Probability that a single Brownian path stays between the scenario's
/// curves up to `target` and ends in the top window (if any).
///
/// With `tilt = θ ≠ 0` the path is simulated with drift `θ` and reweighted
/// by `exp(−θ(X − x₀) + θ²·target/2)`, which leaves the estimate unbiased.
pub fn single_particle_probability(
    prepared: &PreparedScenario,
    target: f64,
    tilt: f64,
    replicas: usize,
    stream: &RandomStream,
) -> Result<MCEstimate> {
    if !(target > 0.0 && target <= prepared.scenario.horizon) {
        return Err(Error::Param(format!("target time {target} outside (0, {}]", prepared.scenario.horizon)));
    }
    let x0 = prepared.scenario.start;
    let drift = prepared.scenario.drift + tilt;
    let weights = map_replicas(replicas, |i| {
        let mut rng = stream.child(i as u64).lineage_rng(ROOT_LINEAGE);
        match prepared.advance_path(&mut rng, x0, 0.0, target, drift) {
            Some(x) if prepared.window_contains(target, x) => (-tilt * (x - x0) + 0.5 * tilt * tilt * target).exp(),
            _ => 0.0,
        }
    });
    if tilt == 0.0 {
        let hits = weights.iter().filter(|&&w| w > 0.0).count();
        MCEstimate::proportion(hits, replicas, stream.master_seed)
    } else {
        MCEstimate::mean(&weights, stream.master_seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn grid_contains_observations_and_horizon() {
        let mut sc = TubeScenario::new(1.05, 0.1);
        sc.observation_times = vec![0.33, 1.0];
        let p = sc.prepare().unwrap();
        let g = p.grid();
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), 1.05);
        assert!(g.contains(&0.33));
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(g.len(), 13);
    }

    #[test]
    fn invalid_scenarios_are_rejected() {
        assert!(TubeScenario::new(0.0, 0.1).prepare().is_err());
        assert!(TubeScenario::new(1.0, 0.0).prepare().is_err());
        let mut sc = TubeScenario::new(1.0, 0.1);
        sc.top_window = Some(TopWindow::STANDARD);
        assert!(sc.prepare().is_err());
        let mut crossed = TubeScenario::new(1.0, 0.1);
        crossed.lower = Some(Curve::constant(1.0, 2.0));
        crossed.upper = Some(Curve::constant(0.5, 2.0));
        assert!(crossed.prepare().is_err());
        let mut late = TubeScenario::new(1.0, 0.1);
        late.observation_times = vec![2.0];
        assert!(late.prepare().is_err());
    }

    #[test]
    fn rerun_is_bit_identical() {
        let mut sc = TubeScenario::new(3.0, 0.01).with_critical_line(2.0);
        sc.track_lambda = true;
        sc.observation_times = vec![1.0, 2.0, 3.0];
        let s = RandomStream::new(9).child(4);
        let a = simulate(&sc, &s).unwrap();
        let b = simulate(&sc, &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_lineage_lambda_is_the_running_sup() {
        let mut sc = TubeScenario::new(5.0, 0.01);
        sc.branching = false;
        sc.track_lambda = true;
        sc.observation_times = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        for i in 0..50 {
            let out = simulate(&sc, &RandomStream::new(3).child(i)).unwrap();
            assert_eq!(out.final_population, 1);
            let ls: Vec<f64> = out.observations.iter().map(|o| o.lambda_min.unwrap()).collect();
            assert!(ls[0] >= 0.0);
            assert!(ls.windows(2).all(|w| w[0] <= w[1]));
            let pos = out.survivors[0].position;
            assert!(ls[4] >= SQRT_2 * 5.0 - pos - 1e-12);
        }
    }

    #[test]
    fn free_population_has_yule_mean() {
        let sc = TubeScenario::new(2.0, 0.05).prepare().unwrap();
        let n = 10_000;
        let pops: Vec<f64> = (0..n).map(|i| sc.run(&RandomStream::new(1).child(i)).final_population as f64).collect();
        let est = MCEstimate::mean(&pops, 1).unwrap();
        let mean = 2f64.exp();
        assert!((est.value - mean).abs() < 3.0 * est.stderr, "{est:?}");
        let var = pops.iter().map(|p| (p - est.value).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let want = 4f64.exp() - 2f64.exp();
        // Fourth-moment bound for the variance: Var(N²) ≤ E N⁴ with E N⁴ = 24e^{4t}.
        let se_var = (24.0 * 8f64.exp() / n as f64).sqrt();
        assert!((var - want).abs() < 4.0 * se_var);
    }

    #[test]
    fn lower_absorption_removes_particles() {
        let mut sc = TubeScenario::new(1.0, 0.01);
        sc.branching = false;
        sc.lower = Some(Curve::constant(-1e-9, 2.0));
        let out = simulate(&sc, &RandomStream::new(2)).unwrap();
        assert_eq!(out.lower_absorption_count, 1);
        assert!(!out.survived);
    }

    #[test]
    fn line_count_is_monotone_in_horizon() {
        for i in 0..20 {
            let s = RandomStream::new(77).child(i);
            let a = absorbed_count_at_line(2.0, 4.0, 0.01, &s).unwrap();
            let b = absorbed_count_at_line(2.0, 8.0, 0.01, &s).unwrap();
            assert!(a <= b, "replica {i}: {a} > {b}");
        }
        let near = absorbed_count_at_line(1e-6, 1.0, 0.01, &RandomStream::new(1)).unwrap();
        assert!(near >= 1);
        assert!(absorbed_count_at_line(0.0, 1.0, 0.01, &RandomStream::new(1)).is_err());
    }

    #[test]
    fn level_crossings_match_separate_runs() {
        let deep = {
            let mut sc = TubeScenario::new(6.0, 0.01).with_critical_line(3.0);
            sc.lambda_levels = vec![1.5, 3.0];
            sc.prepare().unwrap()
        };
        let shallow = TubeScenario::new(6.0, 0.01).with_critical_line(1.5).prepare().unwrap();
        for i in 0..20 {
            let s = RandomStream::new(5).child(i);
            let d = deep.run(&s);
            assert_eq!(d.level_crossing_times[1].len(), d.lower_absorption_count);
            assert_eq!(d.level_crossing_times[0].len(), shallow.run(&s).lower_absorption_count);
        }
    }

    #[test]
    fn depth_first_survival_matches_full_run() {
        let pair = curves::make_curves(CurveFamily::Jaffuel).unwrap();
        let p = TubeScenario::new(4.0, 0.01).with_tube(&pair).prepare().unwrap();
        let mut both = [0, 0];
        for i in 0..200 {
            let s = RandomStream::new(8).child(i);
            let full = p.run(&s).survived;
            assert_eq!(p.survives(&s).survived, full, "replica {i}");
            both[usize::from(full)] += 1;
        }
        assert!(both[0] > 0 && both[1] > 0);
    }

    #[test]
    fn trivial_pair_moment_is_exact() {
        let p = TubeScenario::new(1.0, 0.01).prepare().unwrap();
        let e = pair_moment_estimate(&p, 1.0, 1.0, 100, &RandomStream::new(3)).unwrap();
        assert_abs_diff_eq!(e.value, 2.0 * 2f64.exp() - 1f64.exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(e.stderr, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn tilted_and_plain_single_particle_agree() {
        // stay above the line u - 1 for 2 time units
        let mut sc = TubeScenario::new(2.0, 0.01);
        sc.branching = false;
        sc.lower = Some(Curve::line(1.0, -1.0, 3.0));
        let p = sc.prepare().unwrap();
        let plain = single_particle_probability(&p, 2.0, 0.0, 40_000, &RandomStream::new(1)).unwrap();
        let tilted = single_particle_probability(&p, 2.0, 1.0, 40_000, &RandomStream::new(2)).unwrap();
        assert!(crate::stats::z_score(&plain, &tilted).abs() < 4.0);
        // closed form: P(B_s > s - 1 for s ≤ 2) = Φ((1-2)/√2·…) via the reflection formula
        let exact = {
            use statrs::distribution::{ContinuousCDF, Normal};
            let n = Normal::new(0.0, 1.0).unwrap();
            let (a, mu, t) = (1.0f64, -1.0f64, 2.0f64);
            n.cdf((a + mu * t) / t.sqrt()) - (-2.0 * mu * a).exp() * n.cdf((-a + mu * t) / t.sqrt())
        };
        assert!((plain.value - exact).abs() < 4.0 * plain.stderr, "{plain:?} vs {exact}");
    }
}
