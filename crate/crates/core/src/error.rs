use thiserror::Error;

/// Errors raised by the lifting pipeline, the scene oracle and the analysis tools.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid extrinsics: {0}")]
    InvalidExtrinsics(String),
    #[error("optical axis is within 1e-6 rad of the ground normal")]
    DegenerateOrientation,
    #[error("camera center is not above the ground plane (height {0} m)")]
    CameraBelowGround(f64),
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("invalid bin spec: {0}")]
    InvalidBinSpec(String),
    #[error("value {value} outside bin range [{min}, {max}]")]
    OutOfRange { value: f64, min: f64, max: f64 },
    #[error("bin index {index} outside 0..{n_bins}")]
    IndexOutOfRange { index: usize, n_bins: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("ray does not descend below the camera (y_ref = {0})")]
    HorizonRay(f64),
    #[error("height {h} m is not below the camera ground height {ground_height} m")]
    AboveCamera { h: f64, ground_height: f64 },
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("pixel ({u}, {v}) is outside the image")]
    PixelOutsideImage { u: f64, v: f64 },
    #[error("bin strategy {0} cannot be used here")]
    WrongStrategy(String),

    #[error("invalid grid spec: {0}")]
    InvalidGrid(String),

    #[error("empty input")]
    EmptyInput,
    #[error("could not place {placed} of {requested} boxes inside the scene extent")]
    ExtentTooSmall { placed: usize, requested: usize },
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),

    #[error("no scene object is visible from the rig")]
    NoVisibleObjects,
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid disturbance spec: {0}")]
    InvalidDisturbance(String),

    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidIntrinsics(_) => "InvalidIntrinsics",
            Error::InvalidExtrinsics(_) => "InvalidExtrinsics",
            Error::DegenerateOrientation => "DegenerateOrientation",
            Error::CameraBelowGround(_) => "CameraBelowGround",
            Error::InvalidBox(_) => "InvalidBox",
            Error::InvalidBinSpec(_) => "InvalidBinSpec",
            Error::OutOfRange { .. } => "OutOfRange",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::HorizonRay(_) => "HorizonRay",
            Error::AboveCamera { .. } => "AboveCamera",
            Error::NonPositiveDepth(_) => "NonPositiveDepth",
            Error::PixelOutsideImage { .. } => "PixelOutsideImage",
            Error::WrongStrategy(_) => "WrongStrategy",
            Error::InvalidGrid(_) => "InvalidGrid",
            Error::EmptyInput => "EmptyInput",
            Error::ExtentTooSmall { .. } => "ExtentTooSmall",
            Error::InvalidNoise(_) => "InvalidNoise",
            Error::NoVisibleObjects => "NoVisibleObjects",
            Error::InvalidGeometry(_) => "InvalidGeometry",
            Error::InvalidDisturbance(_) => "InvalidDisturbance",
            Error::Config(_) => "Config",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }

    /// True for errors caused by bad configuration rather than by the numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidIntrinsics(_)
                | Error::InvalidExtrinsics(_)
                | Error::DegenerateOrientation
                | Error::CameraBelowGround(_)
                | Error::InvalidBox(_)
                | Error::InvalidBinSpec(_)
                | Error::InvalidGrid(_)
                | Error::InvalidNoise(_)
                | Error::InvalidDisturbance(_)
                | Error::WrongStrategy(_)
                | Error::Config(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
