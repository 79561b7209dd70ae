use std::path::PathBuf;

use crate::nncore::Model;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid chromaticity ({0}, {1}, {2}): components must be finite, nonnegative and not all zero")]
    InvalidChromaticity(f64, f64, f64),
    #[error("ground truth has a non-positive component: {0:?}")]
    DegenerateGroundTruth([f64; 3]),
    #[error("estimate is the zero vector")]
    DegenerateEstimate,
    #[error("empty input")]
    EmptyInput,

    #[error("malformed PPM header: {0}")]
    MalformedHeader(String),
    #[error("PPM payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("unsupported PPM maxval {0} (only 255 and 65535)")]
    UnsupportedMaxval(u32),
    #[error("sample {0} outside [0, 65535]")]
    OutOfRangeSample(f64),
    #[error("ISO {0} has no known saturation level")]
    UnknownIso(u32),
    #[error("saturation level {0} must exceed 2")]
    DegenerateSaturation(f64),
    #[error("image has no saturation level attached")]
    MissingSaturation,
    #[error("ROI x_max {x_max} outside [1, {width}]")]
    RoiOutOfBounds { x_max: usize, width: usize },
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: ground truth component must be strictly positive")]
    NonPositiveGroundTruth { line: u64 },
    #[error("duplicate path {0:?} in manifest")]
    DuplicatePath(String),

    #[error("chromaticity has zero green component{}", .path.as_ref().map(|p| format!(" ({p})")).unwrap_or_default())]
    ZeroGreen { path: Option<String> },
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),

    #[error("gain below 1 on an image with clipped pixels")]
    UnnaturalDarkening,
    #[error("image skipped: clipped pixels and a darkening gain")]
    Skipped,
    #[error("no admissible gain after {0} draws")]
    RejectionBudgetExhausted(usize),
    #[error("invalid augmentation config: {0}")]
    InvalidAugmentConfig(String),

    #[error("factor {factor} does not divide {width}x{height}")]
    NonDivisibleFactor { factor: usize, width: usize, height: usize },
    #[error("patch side {side} larger than {width}x{height} image")]
    PatchLargerThanImage { side: usize, width: usize, height: usize },
    #[error("bad magic: expected {expected:?}")]
    MagicMismatch { expected: &'static str },
    #[error("unsupported file version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated")]
    TruncatedFile,

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("invalid architecture config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint architecture {found:?} does not match model {expected:?}")]
    ArchMismatch { expected: String, found: String },

    #[error("non-finite input")]
    NonFiniteInput,
    #[error("empty batch")]
    EmptyBatch,
    #[error("trimming would drop every sample in a batch of {0}")]
    AllDropped(usize),
    #[error("invalid training config: {0}")]
    InvalidTrainConfig(String),
    #[error("training diverged at epoch {epoch}")]
    DivergenceDetected { epoch: usize, last_good: Box<Model> },
    #[error("no candidate models")]
    EmptyCandidates,

    #[error("channel {0} has zero mean")]
    ZeroChannelMean(usize),

    #[error("{path}: {source}")]
    AtPath {
        path: String,
        #[source]
        source: Box<Error>,
    },
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the dataset path it concerns.
    pub fn at(self, path: impl Into<String>) -> Self {
        Error::AtPath {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping path context.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtPath { source, .. } => source.root(),
            e => e,
        }
    }
}
