use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the simulator can report.
///
/// Variants are grouped by the exit code the command line tool maps them to,
/// see [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config at `{path}`: {reason}")]
    InvalidConfig { path: String, reason: String },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("frame configurations differ")]
    ConfigMismatch,
    #[error("delay profiles are sampled on different grids")]
    GridMismatch,

    #[error("degenerate segment: endpoints coincide")]
    DegenerateSegment,
    #[error("distance {distance} m is below the reference distance {reference} m")]
    DistanceBelowReference { distance: f64, reference: f64 },
    #[error("bandwidth must be positive, got {0} Hz")]
    NonPositiveBandwidth(f64),
    #[error("target coincides with station {0}")]
    TargetCoincidesWithStation(u32),
    #[error("frame is empty")]
    EmptyFrame,
    #[error("refinement candidate set is empty")]
    CandidateSetEmpty,
    #[error("Doppler estimation needs at least two OFDM symbols")]
    SingleSymbolFrame,
    #[error("angle estimation needs at least two antennas")]
    InsufficientAntennas,
    #[error("reference path not detected")]
    ReferencePathNotDetected,

    #[error("optimization infeasible (binding constraint: {binding})")]
    Infeasible { binding: String },
    #[error("no candidate subset is feasible")]
    NoFeasibleSubset,

    #[error("Fisher information matrix is singular")]
    SingularFim,
    #[error("receiver geometry is collinear or rank deficient")]
    CollinearGeometry,
    #[error("iteration did not converge: {0}")]
    NoConvergence(String),
    #[error("all local fixes were rejected as outliers")]
    AllFixesRejected,
    #[error("maximum number of iterations reached: {0}")]
    MaxIterations(String),
    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig { path: path.into(), reason: reason.into() }
    }

    /// Process exit code: 2 config error, 3 infeasible optimization, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig { .. }
            | Error::UnknownPreset(_)
            | Error::InvalidParameter(_)
            | Error::DimensionMismatch(_)
            | Error::ConfigMismatch
            | Error::GridMismatch
            | Error::DegenerateSegment
            | Error::DistanceBelowReference { .. }
            | Error::NonPositiveBandwidth(_)
            | Error::TargetCoincidesWithStation(_)
            | Error::Json(_) => 2,
            Error::Infeasible { .. } | Error::NoFeasibleSubset => 3,
            Error::Io(_) => 1,
            _ => 4,
        }
    }
}
