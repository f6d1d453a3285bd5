use thiserror::Error;

use crate::calibration::{CalibrationResult, LmReport};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    // projection / distortion
    #[error("point at or behind the camera plane (depth {depth})")]
    NonPositiveDepth { depth: f64 },
    #[error("distortion inversion did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    // lens model and curve fit
    #[error("degenerate lens geometry: {0}")]
    DegenerateGeometry(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("singular system: {0}")]
    SingularSystem(String),

    // homography
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("need at least 4 correspondences, got {0}")]
    InsufficientCorrespondences(usize),
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("homography maps a point to infinity")]
    PointAtInfinity,

    // scale estimation
    #[error("too few adjacent point pairs in the central window: {0}")]
    TooFewCentralPoints(String),
    #[error("no plateau found: {0}")]
    NoPlateauFound(String),
    #[error("zone 2 contains no samples")]
    EmptyZone2,

    // calibration
    #[error("template lies behind the camera for both signs of the homography scale")]
    BehindCamera,
    #[error("intrinsic matrix is singular")]
    SingularIntrinsics,
    #[error("matrix is singular")]
    SingularInput,
    #[error("degenerate view set: {0}")]
    DegenerateViewSet(String),
    #[error("no scale factors available for distance {distance_mm} mm")]
    MissingScaleForDistance { distance_mm: f64 },
    #[error("levenberg-marquardt did not converge within {} iterations", .0.iterations)]
    NonConvergence(Box<LmReport>),
    #[error("calibration did not converge; partial result attached")]
    CalibrationNotConverged(Box<CalibrationResult>),
    #[error("linear algebra failure: {0}")]
    LinearAlgebraFailure(String),

    // synthetic data
    #[error("view {id} has only {visible} points inside the image")]
    EmptyView { id: String, visible: usize },
    #[error("view {0} has no ground-truth pose")]
    MissingGroundTruth(String),
}

impl Error {
    /// Variant name, stable for machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "InvalidInput",
            Error::NonPositiveDepth { .. } => "NonPositiveDepth",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::DegenerateGeometry(_) => "DegenerateGeometry",
            Error::InsufficientData(_) => "InsufficientData",
            Error::SingularSystem(_) => "SingularSystem",
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::InsufficientCorrespondences(_) => "InsufficientCorrespondences",
            Error::DegenerateConfiguration(_) => "DegenerateConfiguration",
            Error::PointAtInfinity => "PointAtInfinity",
            Error::TooFewCentralPoints(_) => "TooFewCentralPoints",
            Error::NoPlateauFound(_) => "NoPlateauFound",
            Error::EmptyZone2 => "EmptyZone2",
            Error::BehindCamera => "BehindCamera",
            Error::SingularIntrinsics => "SingularIntrinsics",
            Error::SingularInput => "SingularInput",
            Error::DegenerateViewSet(_) => "DegenerateViewSet",
            Error::MissingScaleForDistance { .. } => "MissingScaleForDistance",
            Error::NonConvergence(_) => "NonConvergence",
            Error::CalibrationNotConverged(_) => "CalibrationNotConverged",
            Error::LinearAlgebraFailure(_) => "LinearAlgebraFailure",
            Error::EmptyView { .. } => "EmptyView",
            Error::MissingGroundTruth(_) => "MissingGroundTruth",
        }
    }
}
