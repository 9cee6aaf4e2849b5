use std::path::PathBuf;

use crate::optimize::FitTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("a curve needs at least one piece")]
    NoPieces,
    #[error("curve has {knots} knots and {alphas} alphas; expected exactly one more knot than alphas")]
    KnotAlphaCount { knots: usize, alphas: usize },
    #[error("alpha {value} of piece {piece} is outside [-1, 1]")]
    AlphaOutOfRange { piece: usize, value: f64 },
    #[error("curve parameter {what} is not finite")]
    NonFinite { what: &'static str },
    #[error("iteration count must be at least 1")]
    ZeroIterations,
    #[error("curves in a triple disagree on pieces or iterations")]
    MixedCurveShapes,
    #[error("dimension mismatch: {expected:?} vs {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("expected {expected} items, found {found}")]
    CountMismatch { expected: usize, found: usize },
    #[error("confidence maps are in {found} mode, operation requires {expected} mode")]
    ModeMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("constrained confidence value {value} is outside [0, 1]")]
    MapOutOfRange { value: f64 },
    #[error("interpolation weight {value} at index {index} must be strictly positive and finite")]
    InvalidWeight { index: usize, value: f64 },
    #[error("interpolation weight {value} at index {index} is too small relative to the largest weight {max}")]
    WeightRatio { index: usize, value: f64, max: f64 },
    #[error("image must have non-zero dimensions")]
    EmptyImage,
    #[error("image {width}x{height} is smaller than the {window}x{window} window")]
    ImageTooSmall {
        width: usize,
        height: usize,
        window: usize,
    },
    #[error("basis vectors are linearly dependent (determinant {determinant:e})")]
    SingularBasis { determinant: f64 },
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(String),
    #[error("optimization diverged at step {step}")]
    Diverged { step: usize, trace: Box<FitTrace> },
    #[error("unsupported PNG color type {0}")]
    UnsupportedColorType(String),
    #[error("unsupported PNG bit depth {0}")]
    UnsupportedBitDepth(u8),
    #[error("PNG decoding failed: {0}")]
    PngDecode(#[from] png::DecodingError),
    #[error("PNG encoding failed: {0}")]
    PngEncode(#[from] png::EncodingError),
    #[error("preset manifest could not be parsed: {0}")]
    ManifestParse(#[from] serde_json::Error),
    #[error("preset format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("preset field {field} is inconsistent: {detail}")]
    InconsistentPreset { field: &'static str, detail: String },
    #[error("preset sidecar {} is missing", .0.display())]
    MissingSidecar(PathBuf),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
