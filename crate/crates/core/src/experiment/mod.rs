//! Experiment dispatch and result files.
//!
//! A run validates the configuration, computes a table, and writes it as CSV
//! (or JSON) next to a `<out>.manifest.json` sidecar holding the canonical
//! config, seed, version and wall time. The results file depends only on the
//! configuration, so reruns are byte-identical.

pub mod config;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

pub use config::{ExperimentConfig, ExperimentKind, OutputFormat, Violation};

use crate::curves::{self, CurveFamily};
use crate::engine::{self, TopWindow, TubeScenario};
use crate::error::Error;
use crate::estimators;
use crate::kernels::RandomStream;
use crate::stats::{self, MCEstimate};
use crate::tube::{self, WindowSpec};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const BUDGET: i32 = 3;
    pub const IO: i32 = 4;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Num(f64),
    Text(String),
    Missing,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(x) => format!("{x}"),
            Cell::Text(s) => s.clone(),
            Cell::Missing => String::new(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Cell::Num(x) => serde_json::Number::from_f64(*x).map_or(serde_json::Value::Null, serde_json::Value::Number),
            Cell::Text(s) => serde_json::Value::String(s.clone()),
            Cell::Missing => serde_json::Value::Null,
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Missing, Cell::Num)
    }
}

fn estimate_cells(e: &MCEstimate) -> [Cell; 4] {
    [e.value.into(), e.stderr.into(), e.ci95.0.into(), e.ci95.1.into()]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultTable {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl ResultTable {
    fn new(kind: ExperimentKind) -> Self {
        ResultTable { columns: kind.columns().to_vec(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(&self.columns).map_err(io)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).map_err(io)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.to_string()))
    }

    fn json_rows(&self) -> Vec<serde_json::Value> {
        self.rows
            .iter()
            .map(|row| {
                let obj = self.columns.iter().zip(row).map(|(c, v)| ((*c).to_string(), v.json())).collect();
                serde_json::Value::Object(obj)
            })
            .collect()
    }
}

/// What a run produced before anything is written.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub table: ResultTable,
    pub warnings: Vec<String>,
    /// Replicas that hit the population cap.
    pub budget_exceeded: usize,
    /// Set when the estimator gave up on the cap; the table is then empty.
    pub budget_error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub experiment: String,
    pub seed: u64,
    /// Canonical TOML of the resolved configuration; feed it back with `--config` to reproduce.
    pub config: String,
    pub columns: Vec<&'static str>,
    pub rows: usize,
    pub warnings: Vec<String>,
    pub budget_exceeded_replicas: usize,
    pub partial: bool,
    pub wall_time_seconds: f64,
}

#[derive(Debug)]
pub struct RunFailure {
    pub code: i32,
    pub message: String,
}

impl RunFailure {
    fn config(message: impl Into<String>) -> Self {
        RunFailure { code: exit::CONFIG, message: message.into() }
    }
}

/// Fills the defaults that make the config self-contained, so the manifest echo reproduces the run.
pub fn resolve(config: &ExperimentConfig) -> ExperimentConfig {
    let mut c = config.clone();
    c.seed = Some(c.seed());
    c.replicas = Some(c.replicas());
    c.dt = Some(c.dt());
    c.format = Some(c.format());
    c.out = Some(c.output_path());
    c
}

/// Computes the experiment's table. No files are touched.
pub fn compute(config: &ExperimentConfig) -> Result<RunReport, RunFailure> {
    let violations = config.validate();
    if !violations.is_empty() {
        let text: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(RunFailure::config(text.join("\n")));
    }
    let kind = config.experiment.expect("validated");
    let mut report = RunReport { table: ResultTable::new(kind), warnings: config.warnings(), budget_exceeded: 0, budget_error: None };
    let outcome = match kind {
        ExperimentKind::TubeProb => tube_prob(config, &mut report),
        ExperimentKind::LambdaTail => lambda_tail(config, &mut report),
        ExperimentKind::JaffuelSurvival => jaffuel(config, &mut report),
        ExperimentKind::Neveu => neveu(config, &mut report),
        ExperimentKind::MomentCheck => moment_check(config, &mut report),
        ExperimentKind::FellerValidate => feller(config, &mut report),
        ExperimentKind::LambdaLocation => lambda_location(config, &mut report),
    };
    match outcome {
        Ok(()) => Ok(report),
        Err(Error::BudgetExceeded { population, cap }) => {
            report.budget_error = Some(format!("population {population} exceeded the cap of {cap}"));
            Ok(report)
        }
        Err(Error::Io(m)) => Err(RunFailure { code: exit::IO, message: m }),
        Err(e) => Err(RunFailure::config(e.to_string())),
    }
}

/// Validates, computes and writes the results file and its manifest.
/// Returns the exit code and the path written.
pub fn run(config: &ExperimentConfig) -> Result<(i32, PathBuf), RunFailure> {
    let started = Instant::now();
    let resolved = resolve(config);
    let report = compute(&resolved)?;
    let canonical = resolved.to_toml().map_err(|e| RunFailure::config(e.to_string()))?;
    let partial = report.budget_error.is_some() || (report.budget_exceeded > 0 && !resolved.exclude_over_budget());
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        experiment: resolved.experiment.map(|k| k.to_string()).unwrap_or_default(),
        seed: resolved.seed(),
        config: canonical,
        columns: report.table.columns.clone(),
        rows: report.table.rows.len(),
        warnings: report.warnings.iter().cloned().chain(report.budget_error.clone()).collect(),
        budget_exceeded_replicas: report.budget_exceeded,
        partial,
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    let path = resolved.output_path();
    write_outputs(&path, resolved.format(), &report.table, &manifest)
        .map_err(|e| RunFailure { code: exit::IO, message: e.to_string() })?;
    Ok((if partial { exit::BUDGET } else { exit::OK }, path))
}

/// `<out>.manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn write_outputs(path: &Path, format: OutputFormat, table: &ResultTable, manifest: &Manifest) -> Result<(), Error> {
    let body = match format {
        OutputFormat::Csv => table.to_csv()?,
        OutputFormat::Json => {
            let doc = serde_json::json!({
                "manifest": manifest,
                "columns": table.columns,
                "rows": table.json_rows(),
            });
            let mut text = serde_json::to_vec_pretty(&doc).map_err(|e| Error::Io(e.to_string()))?;
            text.push(b'\n');
            text
        }
    };
    std::fs::write(path, body)?;
    let mut side = serde_json::to_vec_pretty(manifest).map_err(|e| Error::Io(e.to_string()))?;
    side.push(b'\n');
    std::fs::write(manifest_path(path), side)?;
    Ok(())
}

fn stream(config: &ExperimentConfig) -> RandomStream {
    RandomStream::new(config.seed())
}

fn capped(mut sc: TubeScenario, config: &ExperimentConfig) -> TubeScenario {
    if let Some(cap) = config.population_cap {
        sc.population_cap = cap;
    }
    sc
}

fn single_z(config: &ExperimentConfig) -> f64 {
    config.z_list.as_ref().and_then(|z| z.first().copied()).expect("validated")
}

fn tube_prob(config: &ExperimentConfig, report: &mut RunReport) -> Result<(), Error> {
    let t = config.t.expect("validated");
    let z = single_z(config);
    let pair = curves::make_curves(CurveFamily::ShrinkingTube { t, z })?;
    let width = pair.width.clone().expect("the shrinking tube has a width");
    let x = -pair.lower.eval(0.0)?;
    let (p, q) = config.window();
    let window = WindowSpec::new(p, q)?;
    let seed = stream(config);
    for (i, &s) in config.s_list.as_deref().unwrap_or_default().iter().enumerate() {
        let ls = width.eval(s)?;
        let mut sc = TubeScenario::new(s, config.dt()).with_tube(&pair);
        sc.branching = false;
        if p > 0.0 || q < 1.0 {
            sc.top_window = Some(TopWindow { far: (1.0 - p) * ls, near: (1.0 - q) * ls });
        }
        let prepared = capped(sc, config).prepare()?;
        let est = engine::single_particle_probability(&prepared, s, config.tilt(), config.replicas(), &seed.child(i as u64))?;
        let (lo, hi) = match tube::tube_envelope(&pair.lower, &width, s, x, window, config.rho_eps()) {
            Ok(env) => {
                let (a, b) = env.ordered();
                (Some(a), Some(b))
            }
            Err(Error::Param(_)) => (None, tube::short_time_bound(&pair.lower, &width, s, x, window).ok()),
            Err(e) => return Err(e),
        };
        let [v, se, a, b] = estimate_cells(&est);
        report.table.push(vec![s.into(), v, se, a, b, lo.into(), hi.into()]);
    }
    Ok(())
}

fn lambda_tail(config: &ExperimentConfig, report: &mut RunReport) -> Result<(), Error> {
    let t = config.t.expect("validated");
    let zs = config.z_list.clone().expect("validated");
    let table = match config.pilot {
        Some(pilot) => estimators::lambda_tail_auto(t, &zs, pilot, config.target_rel(), config.max_replicas(), config.dt(), &stream(config))?,
        None => estimators::lambda_tail(t, &zs, config.replicas(), config.dt(), &stream(config))?,
    };
    report.budget_exceeded = table.budget_exceeded;
    for row in &table.rows {
        let [v, se, a, b] = estimate_cells(&row.p_hat);
        report.table.push(vec![row.z.into(), v, se, a, b, row.shape.into()]);
    }
    if let Ok(fit) = estimators::tail_slope_fit(&table) {
        report.warnings.push(format!(
            "fit of log(p_hat/z) on z: slope {:.6}, intercept {:.6}, r2 {:.6}; reference slope {:.6}",
            fit.slope,
            fit.intercept,
            fit.r2,
            -std::f64::consts::SQRT_2
        ));
    }
    Ok(())
}

fn jaffuel(config: &ExperimentConfig, report: &mut RunReport) -> Result<(), Error> {
    let pair = curves::make_curves(CurveFamily::Jaffuel)?;
    for (i, &t) in config.times().iter().enumerate() {
        let prepared = capped(TubeScenario::new(t, config.dt()).with_tube(&pair), config).prepare()?;
        let s = estimators::survival_probability(&prepared, config.replicas(), &stream(config).child(i as u64))?;
        report.budget_exceeded += s.budget_exceeded;
        let [v, se, a, b] = estimate_cells(&s.estimate);
        report.table.push(vec![t.into(), v, se, a, b]);
    }
    Ok(())
}

fn neveu(config: &ExperimentConfig, report: &mut RunReport) -> Result<(), Error> {
    let ys = config.y_list.clone().expect("validated");
    let summary = estimators::neveu_summary(&ys, config.t, config.replicas(), config.dt(), &stream(config))?;
    report.budget_exceeded = summary.budget_exceeded;
    for r in &summary.rows {
        report.table.push(vec![
            r.y.into(),
            r.t.into(),
            r.median.into(),
            r.q1.into(),
            r.q3.into(),
            r.mean.into(),
            r.max_over_median.into(),
            r.ratio_median.into(),
        ]);
    }
    Ok(())
}

fn moment_check(config: &ExperimentConfig, report: &mut RunReport) -> Result<(), Error> {
    let t = config.t.expect("validated");
    let z = single_z(config);
    let u = config.u.expect("validated");
    let seed = stream(config);
    let scenario = capped(estimators::shrinking_tube_scenario(t, z, config.dt())?, config);
    let m1 = estimators::many_to_one(&scenario, u, config.replicas(), config.path_replicas(), &seed.child(0))?;
    let row = |kind: &str, lhs: &MCEstimate, rhs: &MCEstimate| {
        vec![
            Cell::Text(kind.to_string()),
            t.into(),
            z.into(),
            u.into(),
            lhs.value.into(),
            lhs.stderr.into(),
            rhs.value.into(),
            rhs.stderr.into(),
            stats::z_score(lhs, rhs).into(),
        ]
    };
    report.table.push(row("many-to-one", &m1.population_mean, &m1.prediction));
    if t / 3.0 <= u && u <= 2.0 * t / 3.0 {
        let direct = estimators::population_pair_moment(&scenario, u, u, config.replicas(), &seed.child(1))?;
        let mut sc = scenario.clone();
        sc.horizon = u;
        sc.observation_times = vec![u];
        let pair = engine::pair_moment_estimate(&sc.prepare()?, u, u, config.path_replicas(), &seed.child(2))?;
        report.table.push(row("many-to-two", &direct, &pair));
    } else {
        report.warnings.push(format!("u = {u} is outside [t/3, 2t/3]; the second-moment row is skipped"));
    }
    Ok(())
}

fn feller(config: &ExperimentConfig, report: &mut RunReport) -> Result<(), Error> {
    let t = config.t.expect("validated");
    let y = config.start();
    let (p, q) = config.window();
    let exact = tube::feller_tube_exact(y, t, p, q, 1e-12)?;
    let mc = estimators::feller_monte_carlo(y, t, p, q, config.replicas(), config.dt(), &stream(config))?;
    let z = stats::z_score(&mc, &MCEstimate::exact(exact, config.seed()));
    let [v, se, a, b] = estimate_cells(&mc);
    report.table.push(vec![y.into(), t.into(), p.into(), q.into(), exact.into(), v, se, a, b, z.into()]);
    Ok(())
}

fn lambda_location(config: &ExperimentConfig, report: &mut RunReport) -> Result<(), Error> {
    let (rows, exceeded) = estimators::lambda_location(&config.times(), config.margin(), config.replicas(), config.dt(), &stream(config))?;
    report.budget_exceeded = exceeded;
    for r in rows {
        report.table.push(vec![
            r.t.into(),
            r.center.into(),
            r.median.into(),
            r.q1.into(),
            r.q3.into(),
            (r.median - r.center).into(),
            r.censored_fraction.into(),
        ]);
    }
    Ok(())
}
