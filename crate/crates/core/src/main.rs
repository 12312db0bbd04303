use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use frontier_lab::experiment::{self, exit, ExperimentConfig, ExperimentKind, OutputFormat};

const AFTER_HELP: &str = "\
CSV columns, in order:
  tube-prob         s,p_hat,stderr,ci_lo,ci_hi,envelope_lo,envelope_hi
  lambda-tail       z,p_hat,stderr,ci_lo,ci_hi,shape
  jaffuel-survival  t,p_hat,stderr,ci_lo,ci_hi
  neveu             y,t,median,q1,q3,mean,max_over_median,ratio_median
  moment-check      kind,t,z,u,lhs,lhs_stderr,rhs,rhs_stderr,zscore
  feller-validate   start,t,p,q,exact,p_hat,stderr,ci_lo,ci_hi,zscore
  lambda-location   t,center,median,q1,q3,offset,censored_fraction

Each results file gets a <out>.manifest.json sidecar with the resolved config.
FRONTIER_LAB_THREADS caps the worker count (default: all cores).

Exit codes: 0 ok, 2 invalid config (nothing written), 3 population budget
exceeded (results written and flagged partial), 4 I/O failure.";

#[derive(Parser)]
#[command(name = "frontier-lab", version, about = "Tube probabilities and pruned branching Brownian motion experiments", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Probability that one Brownian path stays in the shrinking tube, with analytic envelopes.
    TubeProb(Flags),
    /// Tail of the minimal running maximum over the population.
    LambdaTail(Flags),
    /// Survival of BBM killed outside the tube [-t^(1/3), 0].
    JaffuelSurvival(Flags),
    /// Particles absorbed at level y by time 2y^2.
    Neveu(Flags),
    /// Monte Carlo check of the first and second moment formulas.
    MomentCheck(Flags),
    /// Single-path tube probability against the exact series.
    FellerValidate(Flags),
    /// Median of the minimal running maximum against a_c t^(1/3).
    LambdaLocation(Flags),
    /// Run whatever experiment the config names.
    Run(RunArgs),
    /// Print config violations and exit 2 if there are any.
    Validate(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    experiment: Option<ExperimentKind>,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Args, Default)]
struct Flags {
    /// TOML config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t: Option<f64>,
    #[arg(long = "t-list", value_delimiter = ',', allow_negative_numbers = true)]
    t_list: Option<Vec<f64>>,
    #[arg(long = "z", value_delimiter = ',', allow_negative_numbers = true)]
    z_list: Option<Vec<f64>>,
    #[arg(long = "y", value_delimiter = ',', allow_negative_numbers = true)]
    y_list: Option<Vec<f64>>,
    #[arg(long)]
    u: Option<f64>,
    #[arg(long = "s", value_delimiter = ',', allow_negative_numbers = true)]
    s_list: Option<Vec<f64>>,
    /// Starting point for feller-validate.
    #[arg(long)]
    start: Option<f64>,
    /// Lower edge of the terminal window, as a fraction of the tube width.
    #[arg(long)]
    p: Option<f64>,
    /// Upper edge of the terminal window, as a fraction of the tube width.
    #[arg(long)]
    q: Option<f64>,
    /// Exponential tilt for tube-prob; 0 gives plain Monte Carlo.
    #[arg(long, allow_negative_numbers = true)]
    tilt: Option<f64>,
    #[arg(long = "rho-eps")]
    rho_eps: Option<f64>,
    /// Censoring margin above a_c t^(1/3) for lambda-location.
    #[arg(long)]
    margin: Option<f64>,
    /// Pilot replicas; switches lambda-tail to automatic sizing.
    #[arg(long)]
    pilot: Option<usize>,
    #[arg(long = "target-rel")]
    target_rel: Option<f64>,
    #[arg(long = "max-replicas")]
    max_replicas: Option<usize>,
    #[arg(long = "path-replicas")]
    path_replicas: Option<usize>,
    #[arg(long = "population-cap")]
    population_cap: Option<usize>,
    /// Drop replicas that hit the population cap instead of flagging the run partial.
    #[arg(long = "exclude-over-budget")]
    exclude_over_budget: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<OutputFormat>,
}

impl Flags {
    fn overrides(&self, experiment: Option<ExperimentKind>) -> ExperimentConfig {
        ExperimentConfig {
            experiment,
            seed: self.seed,
            replicas: self.replicas,
            dt: self.dt,
            t: self.t,
            t_list: self.t_list.clone(),
            z_list: self.z_list.clone(),
            y_list: self.y_list.clone(),
            u: self.u,
            s_list: self.s_list.clone(),
            start: self.start,
            p: self.p,
            q: self.q,
            tilt: self.tilt,
            rho_eps: self.rho_eps,
            margin: self.margin,
            pilot: self.pilot,
            target_rel: self.target_rel,
            max_replicas: self.max_replicas,
            path_replicas: self.path_replicas,
            population_cap: self.population_cap,
            exclude_over_budget: self.exclude_over_budget.then_some(true),
            out: self.out.clone(),
            format: self.format,
        }
    }

    fn resolve(&self, experiment: Option<ExperimentKind>) -> Result<ExperimentConfig, String> {
        let base = match &self.config {
            Some(path) => ExperimentConfig::load(path).map_err(|e| e.to_string())?,
            None => ExperimentConfig::default(),
        };
        Ok(base.overridden_by(&self.overrides(experiment)))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (config, validate_only) = match cli.command {
        Command::TubeProb(f) => (f.resolve(Some(ExperimentKind::TubeProb)), false),
        Command::LambdaTail(f) => (f.resolve(Some(ExperimentKind::LambdaTail)), false),
        Command::JaffuelSurvival(f) => (f.resolve(Some(ExperimentKind::JaffuelSurvival)), false),
        Command::Neveu(f) => (f.resolve(Some(ExperimentKind::Neveu)), false),
        Command::MomentCheck(f) => (f.resolve(Some(ExperimentKind::MomentCheck)), false),
        Command::FellerValidate(f) => (f.resolve(Some(ExperimentKind::FellerValidate)), false),
        Command::LambdaLocation(f) => (f.resolve(Some(ExperimentKind::LambdaLocation)), false),
        Command::Run(a) => (a.flags.resolve(a.experiment), false),
        Command::Validate(a) => (a.flags.resolve(a.experiment), true),
    };
    let config = match config {
        Ok(c) => c,
        Err(message) => {
            eprintln!("error: {message}");
            return code(exit::CONFIG);
        }
    };
    for w in config.warnings() {
        eprintln!("warning: {w}");
    }
    if validate_only {
        let violations = config.validate();
        for v in &violations {
            println!("{v}");
        }
        return code(if violations.is_empty() { exit::OK } else { exit::CONFIG });
    }
    match experiment::run(&config) {
        Ok((status, path)) => {
            if status == exit::BUDGET {
                eprintln!("warning: population cap exceeded; {} is flagged partial", path.display());
            }
            println!("{}", path.display());
            code(status)
        }
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            code(failure.code)
        }
    }
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}
