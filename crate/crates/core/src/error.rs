use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("missing point attribute `{0}`")]
    MissingAttribute(&'static str),

    #[error("degenerate geometry: only {matches} matches (at least 6 required)")]
    DegenerateGeometry { matches: usize },

    #[error("rank-deficient normal equations (condition number {condition:.3e}); unconstrained direction: {direction}")]
    RankDeficient { condition: f64, direction: String },

    #[error("IMU gap of {gap:.4} s at t = {at:.4} s exceeds two sample periods")]
    ImuGap { at: f64, gap: f64 },

    #[error("IMU stream does not cover [{start:.4}, {end:.4}] s")]
    ImuCoverage { start: f64, end: f64 },

    #[error("calibration: {0}")]
    Calibration(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    /// Short machine-readable category, used for CLI exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Parameter(_) => "parameter",
            Error::MissingAttribute(_) => "attribute",
            Error::DegenerateGeometry { .. } | Error::RankDeficient { .. } => "registration",
            Error::ImuGap { .. } | Error::ImuCoverage { .. } => "imu",
            Error::Calibration(_) => "calibration",
            Error::Format(_) | Error::Csv(_) => "format",
            Error::Io(_) => "io",
        }
    }
}
