//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-positive density value: {0}")]
    DomainNonPositive(String),

    #[error("exponential overflow: {0}")]
    Overflow(String),

    #[error("degenerate basis: {0}")]
    DegenerateBasis(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("operator pencil is not singular at z = 1 (kernel of A(1) is trivial)")]
    NotSingular,

    #[error("I(1) condition violated: {0}")]
    NotI1(String),

    #[error("pole order indeterminate: {0}")]
    Indeterminate(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("rank out of range: {0}")]
    Rank(String),

    #[error("weight matrix is singular or indefinite")]
    SingularWeight,

    #[error("no observations in local window: {0}")]
    EmptyWindow(String),

    #[error("optimizer did not converge: {0}")]
    NotConverged(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("bandwidth selection failed: {0}")]
    BandwidthSelection(String),

    #[error("input format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for input/configuration problems,
    /// 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dimension(_)
            | Error::DomainNonPositive(_)
            | Error::Config(_)
            | Error::Rank(_)
            | Error::DegenerateData(_)
            | Error::Format(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => 2,
            Error::Overflow(_)
            | Error::DegenerateBasis(_)
            | Error::Numerical(_)
            | Error::NotSingular
            | Error::NotI1(_)
            | Error::Indeterminate(_)
            | Error::SingularWeight
            | Error::EmptyWindow(_)
            | Error::NotConverged(_)
            | Error::BandwidthSelection(_) => 3,
        }
    }
}
