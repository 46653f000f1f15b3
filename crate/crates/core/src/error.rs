use std::path::PathBuf;

/// Every failure the library can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate direction: point coincides with the projection center")]
    DegenerateDirection,
    #[error("polar singularity: x^2 + z^2 = {0:e} is within the pole guard")]
    PolarSingularity(f64),
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("negative effective radius r + dr = {0}")]
    NegativeRadius(f64),
    #[error("scale components must be positive, got {0:?}")]
    NonPositiveScale([f64; 3]),
    #[error("invalid image dimensions {width}x{height}: width must equal 2*height and height >= 2")]
    InvalidDims { width: usize, height: usize },
    #[error("pose rotation is not a proper orthonormal matrix (error {0:e})")]
    InvalidPose(f64),
    #[error("frame mismatch: {0:?} vs {1:?}")]
    FrameMismatch(crate::gaussian::Frame, crate::gaussian::Frame),
    #[error("invalid gaussian #{index}: {reason}")]
    InvalidGaussian { index: usize, reason: String },
    #[error("empty gaussian cloud")]
    EmptyCloud,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("coordinate out of triplane bounds: {0}")]
    OutOfBounds(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("fully occluded: no view sees the gaussian")]
    FullyOccluded,
    #[error("degenerate depth: zero variance or fewer than two valid pixels")]
    DegenerateDepth,
    #[error("empty mask")]
    EmptyMask,
    #[error("missing feature map for pose {0}")]
    MissingFeatureMap(usize),
    #[error("camera {index} is outside the room")]
    CameraOutsideRoom { index: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("ply parse error at byte {offset}: {message}")]
    Ply { offset: u64, message: String },
    #[error("tensor file error: {0}")]
    TensorFile(String),
    #[error("image error for {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable tag used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateDirection => "degenerate_direction",
            Error::PolarSingularity(_) => "polar_singularity",
            Error::NonPositiveDepth(_) => "non_positive_depth",
            Error::NegativeRadius(_) => "negative_radius",
            Error::NonPositiveScale(_) => "non_positive_scale",
            Error::InvalidDims { .. } => "invalid_dims",
            Error::InvalidPose(_) => "invalid_pose",
            Error::FrameMismatch(..) => "frame_mismatch",
            Error::InvalidGaussian { .. } => "invalid_gaussian",
            Error::EmptyCloud => "empty_cloud",
            Error::DimMismatch(_) => "dim_mismatch",
            Error::OutOfBounds(_) => "out_of_bounds",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::FullyOccluded => "fully_occluded",
            Error::DegenerateDepth => "degenerate_depth",
            Error::EmptyMask => "empty_mask",
            Error::MissingFeatureMap(_) => "missing_feature_map",
            Error::CameraOutsideRoom { .. } => "camera_outside_room",
            Error::Config(_) => "config",
            Error::Ply { .. } => "ply",
            Error::TensorFile(_) => "tensor_file",
            Error::Image { .. } => "image",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
