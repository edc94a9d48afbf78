use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("tensor of shape {shape:?} cannot hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("{op}: input outside domain ({detail})")]
    Domain { op: &'static str, detail: String },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalar(Vec<usize>),

    #[error("reduction over an empty axis set")]
    EmptyReduction,

    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty mask: region pooling needs at least one active cell")]
    EmptyMask,

    #[error("AUROC needs both classes, got {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },

    #[error("no feasible paste placement for {image}")]
    NoPlacement { image: String },

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("unsupported dtype tag {0}")]
    UnsupportedDtype(u8),

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("missing path: {}", .0.display())]
    MissingPath(PathBuf),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable, machine-parseable category used by the command-line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. }
            | Error::DataLength { .. }
            | Error::NonScalar(_)
            | Error::EmptyReduction
            | Error::InvalidAxis { .. } => "shape",
            Error::Domain { .. } | Error::NonFinite { .. } | Error::NonFiniteLoss { .. } => {
                "numeric"
            }
            Error::InvalidArgument(_) | Error::EmptyMask | Error::SingleClass { .. } => "argument",
            Error::NoPlacement { .. } => "synthesis",
            Error::BadMagic { .. }
            | Error::UnsupportedVersion(_)
            | Error::UnsupportedDtype(_)
            | Error::Truncated(_)
            | Error::Checksum { .. }
            | Error::TrailingBytes(_) => "format",
            Error::Config(_) | Error::Json(_) => "config",
            Error::MissingPath(_) => "missing-path",
            Error::Image(_) | Error::Io(_) => "io",
        }
    }
}
