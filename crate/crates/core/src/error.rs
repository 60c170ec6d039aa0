use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Input outside the region where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// The arithmetic tables do not reach far enough.
    #[error("table too small: need m up to {needed}, tables cover {limit}")]
    TableTooSmall { needed: u64, limit: u64 },

    /// A requested tolerance could not be met with the available resources.
    #[error("resolution error: {what}; achieved bound {achieved:e}")]
    Resolution { what: String, achieved: f64 },

    /// An adaptive procedure stopped without meeting its stopping rule.
    #[error("no convergence: {what}; last delta {last_delta:e}")]
    Convergence { what: String, last_delta: f64 },

    /// Brute-force oracle refused because it would run too long.
    #[error("cost guard: {0}")]
    CostGuard(String),

    #[error("resource error: {0}")]
    Resource(String),

    /// A sample fell outside the tabulated density grid.
    #[error("sample {value} outside density grid [-{extent}, {extent}]")]
    GridExtent { value: f64, extent: f64 },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
