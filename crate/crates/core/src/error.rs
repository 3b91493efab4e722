use thiserror::Error;

/// Errors produced by the simulation engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("axis {axis}: point count {n} is not a power of two >= 8")]
    NonPowerOfTwo { axis: usize, n: usize },
    #[error("axis {axis}: empty domain [{a}, {b})")]
    EmptyDomain { axis: usize, a: f64, b: f64 },
    #[error("grid needs {points} points, budget is {budget}")]
    MemoryBudgetExceeded { points: usize, budget: usize },
    #[error("grid or component mismatch: {0}")]
    GridMismatch(String),
    #[error("norm {0:e} is too small to normalize")]
    ZeroNorm(f64),
    #[error("non-finite amplitude at flat index {0}")]
    NonFinite(usize),
    #[error("potential is not Hermitian (deviation {0:e})")]
    NonHermitianPotential(f64),
    #[error("requested {steps} steps, budget is {budget}")]
    StepBudgetExceeded { steps: usize, budget: usize },
    #[error("invalid time schedule: {0}")]
    InvalidSchedule(String),
    #[error("trajectory time grid does not match the history: {0}")]
    TimeGridMismatch(String),
    #[error("node encountered at t = {time} (density {density:e})")]
    NodeEncountered { time: f64, density: f64 },
    #[error("invalid particle system: {0}")]
    InvalidSystem(String),
    #[error("eigenstates are not orthonormal (deviation {0:e})")]
    NonOrthonormalBasis(f64),
    #[error("pointer separation gate failed: {0}")]
    SeparationGateFailed(String),
    #[error("pointer position {0} lies in no unique branch support")]
    AmbiguousPointer(f64),
    #[error("collapsed state fidelity {0} below threshold")]
    CollapseFidelity(f64),
    #[error("predicted envelope exceeds domain: {0}")]
    DomainTooSmall(String),
    #[error("spin branches do not separate: {0}")]
    SeparationTooSmall(String),
    #[error("entangled specification factorizes")]
    FactorizableSpec,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
