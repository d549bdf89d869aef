use thiserror::Error;

/// Errors raised anywhere in the engine.
///
/// Variants are grouped by the exit code the CLI maps them to: schema and
/// validation problems, malformed inputs, and coverage gaps between a
/// manifest and a prediction set.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("validation error for image `{uid}`: {message}")]
    Validation { uid: String, message: String },

    #[error("dimension mismatch: expected {expected:?}, found {found:?} (height, width)")]
    DimensionMismatch {
        expected: (u32, u32),
        found: (u32, u32),
    },

    #[error("invalid RLE: {0}")]
    Rle(String),

    #[error("empty region: {0}")]
    EmptyRegion(String),

    #[error("polygon has zero rasterized area")]
    DegenerateGeometry,

    #[error("class `{0}` has no ground-truth members; balanced accuracy is undefined")]
    EmptyClass(&'static str),

    #[error("missing predictions for: {}", .0.join(", "))]
    MissingPrediction(Vec<String>),

    #[error("missing images in prediction set: {}", .0.join(", "))]
    MissingImage(Vec<String>),

    #[error("unknown image `{0}`")]
    UnknownUid(String),

    #[error("non-finite value at index {0}")]
    NonFiniteValue(usize),

    #[error("layer {layer} row {row} is not stochastic (sum {sum})")]
    NonStochasticRow { layer: usize, row: usize, sum: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("PAR is undefined for real image `{0}`")]
    RealImage(String),

    #[error("no annotation instance carries confidence scores")]
    NoScoredInstances,

    #[error("malformed file: {0}")]
    Format(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingPrediction(_) | Error::MissingImage(_) => 3,
            _ => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema { .. } => "SchemaError",
            Error::Validation { .. } => "ValidationError",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::Rle(_) => "RleError",
            Error::EmptyRegion(_) => "EmptyRegion",
            Error::DegenerateGeometry => "DegenerateGeometry",
            Error::EmptyClass(_) => "EmptyClass",
            Error::MissingPrediction(_) => "MissingPrediction",
            Error::MissingImage(_) => "MissingImage",
            Error::UnknownUid(_) => "UnknownUid",
            Error::NonFiniteValue(_) => "NonFiniteValue",
            Error::NonStochasticRow { .. } => "NonStochasticRow",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::RealImage(_) => "RealImage",
            Error::NoScoredInstances => "NoScoredInstances",
            Error::Format(_) => "FormatError",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::Io(_) => "IoError",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
