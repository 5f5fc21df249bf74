use thiserror::Error;

/// Errors raised by the numerical core.
///
/// Variants split into two families: bad inputs (validation) and numerical
/// breakdowns. [`Error::is_numerical`] tells them apart, which is how the
/// command-line front end picks its exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("length mismatch: expected {expected} values, got {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("measures live on different grids")]
    GridMismatch,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("x = {x} lies outside the domain ({lo}, {hi})")]
    OutsideDomain { x: f64, lo: f64, hi: f64 },

    #[error("zero or non-finite total mass")]
    ZeroMass,

    #[error("wrong domain type: {0}")]
    WrongDomain(String),

    #[error("integrability condition fails on the grid: {0}")]
    Divergent(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("overflow while evaluating {0}")]
    Overflow(String),

    #[error("inverse iteration did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("principal eigenvector changes sign at node {node}")]
    SignChange { node: usize },

    #[error("degenerate spectrum: lambda1 = {lambda1} <= lambda0 = {lambda0}")]
    DegenerateSpectrum { lambda0: f64, lambda1: f64 },

    #[error("time step rejected at t = {t}: density {value} below tolerance (reduce dt)")]
    StepRejected { t: f64, value: f64 },

    #[error("mass drifted by {drift} under a conservative flow")]
    MassDrift { drift: f64 },

    #[error("survival weight underflow (log weight {log_weight}); restart from the normalized state")]
    Underflow { log_weight: f64 },

    #[error("no surviving particles")]
    NoSurvivors,

    #[error("singular tridiagonal system at row {0}")]
    Singular(usize),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::SignChange { .. }
                | Error::DegenerateSpectrum { .. }
                | Error::StepRejected { .. }
                | Error::MassDrift { .. }
                | Error::Underflow { .. }
                | Error::NoSurvivors
                | Error::Singular(_)
                | Error::Overflow(_)
                | Error::Divergent(_)
                | Error::ZeroMass
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
