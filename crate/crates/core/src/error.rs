use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("non-finite point at index {0}")]
    NonFinitePoint(usize),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("goal occupied")]
    GoalOccupied,
    #[error("planner start is in collision")]
    StartBlocked,
    #[error("no path to goal")]
    NoPath,
    #[error("goal outside bounds")]
    GoalOutOfBounds,
    #[error("trajectory length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("unknown damping profile `{0}`")]
    UnknownProfile(String),
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("trace: {0}")]
    Trace(String),
    #[error("digest mismatch at tick {tick}")]
    DigestMismatch { tick: u64 },
    #[error("map format, line {line}: {msg}")]
    MapFormat { line: usize, msg: String },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
