use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A curve was evaluated outside its declared domain, or a power base hit zero.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("quadrature did not reach tolerance {tol:e} within {budget} subintervals (estimate {estimate}, error {error:e})")]
    QuadratureFailure {
        tol: f64,
        budget: usize,
        estimate: f64,
        error: f64,
    },

    #[error("eigenseries did not converge within {terms} terms (t = {t})")]
    SeriesDivergenceGuard { t: f64, terms: usize },

    #[error("population {population} exceeded the cap of {cap}")]
    BudgetExceeded { population: usize, cap: usize },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
