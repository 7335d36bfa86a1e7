use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown degradation family `{0}`")]
    UnknownFamily(String),
    #[error("parameter `{param}` of {family} is {value}, outside [{lo}, {hi}]")]
    ParamOutOfRange {
        family: String,
        param: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("parameter `{param}` of {family} is missing")]
    MissingParam { family: String, param: String },
    #[error("manifest has no image with mos > 0.9")]
    InsufficientHighQuality,
    #[error("need {needed} images, manifest provides {available}")]
    InsufficientImages { needed: usize, available: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("gallery is empty")]
    EmptyGallery,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("no negative samples")]
    EmptyNegatives,
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("landmark id {id} outside vocabulary of size {vocab}")]
    IdOutOfRange { id: usize, vocab: usize },
    #[error("rectangle {rect:?} exceeds image bounds {width}x{height}")]
    RectOutOfBounds {
        rect: (usize, usize, usize, usize),
        width: usize,
        height: usize,
    },
    #[error("charbonnier epsilon must be positive, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("image side {side} is smaller than the patch side {patch}")]
    ImageTooSmall { side: usize, patch: usize },
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("no annotations for image")]
    NoAnnotations,
    #[error("invalid rating `{0}`")]
    InvalidCategory(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
