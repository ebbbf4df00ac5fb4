use thiserror::Error;

/// Errors produced by the tuning toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid workload: {0}")]
    InvalidWorkload(String),
    #[error("invalid system parameters: {0}")]
    InvalidSystem(String),
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("infeasible bounds: {0}")]
    InfeasibleBounds(String),
    #[error("solver failed: {0}")]
    SolverFailed(String),
    #[error("invalid uncertainty region: {0}")]
    InvalidRegion(String),
    #[error("KL divergence is infinite (support mismatch)")]
    DivergenceInfinite,
    #[error("workload history is empty")]
    EmptyHistory,
    #[error("benchmark set is empty")]
    EmptyBenchmark,
    #[error("cost is zero or negative; throughput undefined")]
    ZeroCost,
    #[error("invalid range: lo {lo} > hi {hi}")]
    InvalidRange { lo: u64, hi: u64 },
    #[error("session category {0} cannot be satisfied")]
    CategoryUnsatisfiable(String),
    #[error("serialization error: {0}")]
    Serialization(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io(e.to_string()),
            _ => Error::Serialization(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            Error::Io(e.to_string())
        } else {
            Error::Serialization(e.to_string())
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
