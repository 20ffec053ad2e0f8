use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid box ({x1}, {y1}, {x2}, {y2}): {reason}")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64, reason: &'static str },

    #[error("score {0} is outside [0, 1]")]
    InvalidScore(f64),

    #[error("image id must not be empty")]
    EmptyImageId,

    #[error("detections span several images ({0} and {1}); expected one")]
    MixedImageIds(String, String),

    #[error("duplicate source tag {0}")]
    DuplicateSource(String),

    #[error("invalid RECIST measurement: {0}")]
    InvalidRecist(&'static str),

    #[error("spacing must be positive, got {0}")]
    InvalidSpacing(f64),

    #[error("padding must be non-negative, got {0}")]
    InvalidPadding(f64),

    #[error("short-axis diameter must be positive, got {0}")]
    InvalidSad(f64),

    #[error("short-axis diameter cannot be derived for annotations: {}", .0.join(", "))]
    UnderivableSad(Vec<String>),

    #[error("no ground-truth annotations; sensitivity and precision are undefined")]
    NoAnnotations,

    #[error("n_images = {given} but {observed} distinct images were observed")]
    TooFewImages { given: usize, observed: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid window [{lo}, {hi}]: lower bound must be below upper bound")]
    InvalidWindow { lo: i32, hi: i32 },

    #[error("value {value} lies outside window [{lo}, {hi}]; clip first")]
    OutsideWindow { value: i32, lo: i32, hi: i32 },

    #[error("raster is empty")]
    EmptyRaster,

    #[error("raster dimensions mismatch: {0}")]
    DimensionMismatch(String),

    #[error("key slice {key} out of range for volume with {n_slices} slices")]
    KeySliceOutOfRange { key: usize, n_slices: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("volume format: {0}")]
    Format(String),
}
