//! Experiment configuration: a flat TOML key set, merged from a file and
//! command-line flags, validated before anything runs.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curves;
use crate::engine::DEFAULT_DT;
use crate::error::{Error, Result};

pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_REPLICAS: usize = 10_000;
pub const DEFAULT_MARGIN: f64 = 2.0;
pub const DEFAULT_TARGET_REL: f64 = 0.2;
pub const DEFAULT_MAX_REPLICAS: usize = 1_000_000;
pub const DEFAULT_RHO_EPS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    TubeProb,
    LambdaTail,
    JaffuelSurvival,
    Neveu,
    MomentCheck,
    FellerValidate,
    LambdaLocation,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::TubeProb => "tube-prob",
            ExperimentKind::LambdaTail => "lambda-tail",
            ExperimentKind::JaffuelSurvival => "jaffuel-survival",
            ExperimentKind::Neveu => "neveu",
            ExperimentKind::MomentCheck => "moment-check",
            ExperimentKind::FellerValidate => "feller-validate",
            ExperimentKind::LambdaLocation => "lambda-location",
        }
    }

    /// Output columns, in order.
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            ExperimentKind::TubeProb => &["s", "p_hat", "stderr", "ci_lo", "ci_hi", "envelope_lo", "envelope_hi"],
            ExperimentKind::LambdaTail => &["z", "p_hat", "stderr", "ci_lo", "ci_hi", "shape"],
            ExperimentKind::JaffuelSurvival => &["t", "p_hat", "stderr", "ci_lo", "ci_hi"],
            ExperimentKind::Neveu => &["y", "t", "median", "q1", "q3", "mean", "max_over_median", "ratio_median"],
            ExperimentKind::MomentCheck => {
                &["kind", "t", "z", "u", "lhs", "lhs_stderr", "rhs", "rhs_stderr", "zscore"]
            }
            ExperimentKind::FellerValidate => {
                &["start", "t", "p", "q", "exact", "p_hat", "stderr", "ci_lo", "ci_hi", "zscore"]
            }
            ExperimentKind::LambdaLocation => &["t", "center", "median", "q1", "q3", "offset", "censored_fraction"],
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

/// Every key is optional so that a file and flags can be layered; the
/// resolved values (with defaults) are read through the accessor methods.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicas: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_list: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_list: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_list: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_list: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tilt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pilot: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_rel: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_replicas: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path_replicas: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub population_cap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exclude_over_budget: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<OutputFormat>,
}

/// A failed constraint on one config field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

macro_rules! layer {
    ($base:ident, $over:ident; $($field:ident),* $(,)?) => {
        $( if $over.$field.is_some() { $base.$field = $over.$field.clone(); } )*
    };
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Canonical TOML: keys in declaration order, unset keys omitted.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// `self` with every key set in `over` replaced.
    pub fn overridden_by(&self, over: &ExperimentConfig) -> ExperimentConfig {
        let mut base = self.clone();
        layer!(base, over; experiment, seed, replicas, dt, t, t_list, z_list, y_list, u, s_list, start, p, q,
            tilt, rho_eps, margin, pilot, target_rel, max_replicas, path_replicas, population_cap,
            exclude_over_budget, out, format);
        base
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }
    pub fn replicas(&self) -> usize {
        self.replicas.unwrap_or(DEFAULT_REPLICAS)
    }
    pub fn dt(&self) -> f64 {
        self.dt.unwrap_or(DEFAULT_DT)
    }
    pub fn format(&self) -> OutputFormat {
        self.format.unwrap_or(OutputFormat::Csv)
    }
    pub fn margin(&self) -> f64 {
        self.margin.unwrap_or(DEFAULT_MARGIN)
    }
    pub fn start(&self) -> f64 {
        self.start.unwrap_or(0.0)
    }
    pub fn tilt(&self) -> f64 {
        self.tilt.unwrap_or(std::f64::consts::SQRT_2)
    }
    pub fn rho_eps(&self) -> f64 {
        self.rho_eps.unwrap_or(DEFAULT_RHO_EPS)
    }
    pub fn target_rel(&self) -> f64 {
        self.target_rel.unwrap_or(DEFAULT_TARGET_REL)
    }
    pub fn max_replicas(&self) -> usize {
        self.max_replicas.unwrap_or(DEFAULT_MAX_REPLICAS)
    }
    pub fn path_replicas(&self) -> usize {
        self.path_replicas.unwrap_or(100 * self.replicas())
    }
    pub fn exclude_over_budget(&self) -> bool {
        self.exclude_over_budget.unwrap_or(false)
    }

    /// Window fractions `(p, q)`; feller-validate works on `(−1, 1)`, the tube on `(0, 1)`.
    pub fn window(&self) -> (f64, f64) {
        match self.experiment {
            Some(ExperimentKind::FellerValidate) => (self.p.unwrap_or(-1.0), self.q.unwrap_or(1.0)),
            _ => (self.p.unwrap_or(0.0), self.q.unwrap_or(1.0)),
        }
    }

    /// Times for experiments that take several: `t_list`, else `[t]`.
    pub fn times(&self) -> Vec<f64> {
        self.t_list.clone().or_else(|| self.t.map(|t| vec![t])).unwrap_or_default()
    }

    pub fn output_path(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| {
            let name = self.experiment.map_or("results", ExperimentKind::name);
            PathBuf::from(format!("{name}.{}", self.format().extension()))
        })
    }

    /// Notes about values that are accepted but outside the range a result is claimed for.
    pub fn warnings(&self) -> Vec<String> {
        match (self.experiment, self.t, &self.z_list) {
            (Some(ExperimentKind::LambdaTail), Some(t), Some(zs)) if t > 0.0 => {
                crate::estimators::check_tail_range(t, zs).unwrap_or_default()
            }
            _ => Vec::new(),
        }
    }

    /// Every violated constraint; empty exactly when a run would start.
    pub fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let mut push = |field: &'static str, message: String| v.push(Violation { field, message });

        let Some(kind) = self.experiment else {
            push("experiment", "missing; one of tube-prob, lambda-tail, jaffuel-survival, neveu, moment-check, feller-validate, lambda-location".into());
            return v;
        };
        if let Some(seed) = self.seed {
            if seed > i64::MAX as u64 {
                push("seed", format!("{seed} does not fit a TOML integer (max {})", i64::MAX));
            }
        }
        if self.replicas() < 2 {
            push("replicas", format!("must be at least 2, got {}", self.replicas()));
        }
        let dt = self.dt();
        if !(dt > 0.0 && dt.is_finite()) {
            push("dt", format!("must be positive, got {dt}"));
        }
        if let Some(cap) = self.population_cap {
            if cap == 0 {
                push("population_cap", "must be positive".into());
            }
        }
        if let Some(n) = self.path_replicas {
            if n < 2 {
                push("path_replicas", format!("must be at least 2, got {n}"));
            }
        }
        if let Some(t) = self.t {
            if !(t > 0.0 && t.is_finite()) {
                push("t", format!("must be positive, got {t}"));
            }
        }
        let t_ok = self.t.filter(|t| *t > 0.0 && t.is_finite());
        let need_t = |push: &mut dyn FnMut(&'static str, String)| {
            if self.t.is_none() {
                push("t", format!("required for {kind}"));
            }
        };
        let single_z = |push: &mut dyn FnMut(&'static str, String)| -> Option<f64> {
            match self.z_list.as_deref() {
                None => {
                    push("z_list", format!("{kind} needs exactly one z"));
                    None
                }
                Some([z]) => Some(*z),
                Some(zs) => {
                    push("z_list", format!("{kind} needs exactly one z, got {}", zs.len()));
                    None
                }
            }
        };
        let tube_z = |z: f64, t: f64, push: &mut dyn FnMut(&'static str, String)| {
            let top = curves::a_c() * (t + 1.0).cbrt();
            if !(z > 0.0 && z < top) {
                push("z_list", format!("z = {z} must lie in (0, a_c (t+1)^(1/3)) = (0, {top:.6}) for the tube to contain the start"));
            }
        };

        match kind {
            ExperimentKind::LambdaTail => {
                need_t(&mut push);
                match (&self.z_list, t_ok) {
                    (None, _) => push("z_list", "required for lambda-tail".into()),
                    (Some(zs), Some(t)) => {
                        let top = curves::a_c() * t.cbrt();
                        for &z in zs {
                            if !(z >= 1.0 && z < top) {
                                push(
                                    "z_list",
                                    format!(
                                        "z = {z} outside the tail range z in [1, a_c t^(1/3)/2] = [1, {:.6}] (values up to a_c t^(1/3) = {top:.6} run with a warning)",
                                        top / 2.0
                                    ),
                                );
                            }
                        }
                        if zs.is_empty() {
                            push("z_list", "must not be empty".into());
                        }
                        if zs.windows(2).any(|w| !(w[0] < w[1])) {
                            push("z_list", "must be strictly increasing".into());
                        }
                    }
                    _ => {}
                }
                if let Some(p) = self.pilot {
                    if p < 2 {
                        push("pilot", format!("must be at least 2, got {p}"));
                    }
                    if !(self.target_rel() > 0.0) {
                        push("target_rel", "must be positive".into());
                    }
                }
            }
            ExperimentKind::TubeProb => {
                need_t(&mut push);
                let z = single_z(&mut push);
                if let (Some(z), Some(t)) = (z, t_ok) {
                    tube_z(z, t, &mut push);
                }
                match (&self.s_list, t_ok) {
                    (None, _) => push("s_list", "required for tube-prob".into()),
                    (Some(ss), Some(t)) => {
                        if ss.is_empty() || ss.iter().any(|&s| !(s > 0.0 && s <= t)) {
                            push("s_list", format!("every s must lie in (0, t] = (0, {t}]"));
                        }
                    }
                    _ => {}
                }
                let (p, q) = self.window();
                if !(0.0 <= p && p < q && q <= 1.0) {
                    push("p", format!("window fractions need 0 ≤ p < q ≤ 1, got ({p}, {q})"));
                }
                if !(self.rho_eps() > 0.0) {
                    push("rho_eps", "must be positive".into());
                }
                if !self.tilt().is_finite() {
                    push("tilt", "must be finite".into());
                }
            }
            ExperimentKind::JaffuelSurvival | ExperimentKind::LambdaLocation => {
                let ts = self.times();
                if ts.is_empty() {
                    push("t_list", format!("{kind} needs t or t_list"));
                } else if ts.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
                    push("t_list", "every t must be positive".into());
                } else if ts.windows(2).any(|w| !(w[0] < w[1])) {
                    push("t_list", "must be strictly increasing".into());
                }
                if kind == ExperimentKind::LambdaLocation && !self.margin().is_finite() {
                    push("margin", "must be finite".into());
                }
            }
            ExperimentKind::Neveu => match &self.y_list {
                None => push("y_list", "required for neveu".into()),
                Some(ys) => {
                    if ys.is_empty() || ys.iter().any(|&y| !(y > 0.0)) || ys.windows(2).any(|w| !(w[0] < w[1])) {
                        push("y_list", "values must be positive and strictly increasing".into());
                    }
                }
            },
            ExperimentKind::MomentCheck => {
                need_t(&mut push);
                let z = single_z(&mut push);
                if let (Some(z), Some(t)) = (z, t_ok) {
                    tube_z(z, t, &mut push);
                }
                match (self.u, t_ok) {
                    (None, _) => push("u", "required for moment-check".into()),
                    (Some(u), Some(t)) if !(u >= 0.0 && u <= t) => push("u", format!("must lie in [0, t] = [0, {t}]")),
                    _ => {}
                }
            }
            ExperimentKind::FellerValidate => {
                need_t(&mut push);
                if let Some(t) = t_ok {
                    if t < crate::tube::MIN_SERIES_TIME {
                        push("t", format!("must be at least {} for the eigenseries", crate::tube::MIN_SERIES_TIME));
                    }
                }
                let y = self.start();
                if !(y > -1.0 && y < 1.0) {
                    push("start", format!("must lie in (-1, 1), got {y}"));
                }
                let (p, q) = self.window();
                if !(-1.0 <= p && p < q && q <= 1.0) {
                    push("p", format!("window needs -1 ≤ p < q ≤ 1, got ({p}, {q})"));
                }
            }
        }
        v
    }
}
