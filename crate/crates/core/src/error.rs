use crate::dtype::DType;

/// Errors raised while decoding a tensor archive.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ArchiveError {
    #[error("bad magic bytes {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported archive version {0}")]
    UnsupportedVersion(u32),
    #[error("input truncated at byte {at}: needed {needed} more bytes")]
    TruncatedInput { at: usize, needed: usize },
    #[error("{0} trailing bytes after archive content")]
    TrailingGarbage(usize),
    #[error("invalid dtype code {0}")]
    InvalidDType(u8),
    #[error("entry name is not valid UTF-8")]
    InvalidName,
    #[error("duplicate entry name {0:?}")]
    DuplicateName(String),
    #[error("invalid bool byte {0} in payload")]
    InvalidBool(u8),
}

/// Errors raised while reading IDX files.
#[derive(Debug, thiserror::Error)]
pub enum IdxError {
    #[error("bad IDX magic {found:#010x}, expected {expected:#010x}")]
    BadMagic { found: u32, expected: u32 },
    #[error("IDX input truncated: expected {expected} bytes, found {found}")]
    TruncatedInput { expected: usize, found: usize },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("ragged nested input: expected length {expected}, found {found}")]
    RaggedInput { expected: usize, found: usize },
    #[error("value {value} cannot be represented as {dtype:?}")]
    DTypeOverflow { value: f64, dtype: DType },
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("dtype mismatch: expected {expected:?}, found {found:?}")]
    DTypeMismatch { expected: DType, found: DType },
    #[error("index {index} out of bounds for axis {axis} with extent {extent}")]
    IndexOutOfBounds {
        index: isize,
        axis: usize,
        extent: usize,
    },
    #[error("slice step must be non-zero")]
    ZeroStep,
    #[error("slice addresses {given} axes but tensor has rank {rank}")]
    TooManyIndices { given: usize, rank: usize },
    #[error("at most one ellipsis is allowed in a slice")]
    MultipleEllipsis,
    #[error("invalid axis {axis} for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("buffer {0} was released")]
    UseAfterRelease(u64),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: i64, classes: usize },
    #[error("parameter {0:?} has no gradient")]
    MissingGradient(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("expected exactly one output, model returned {0}")]
    OutputArity(usize),
    #[error("archive entry mismatch: {0}")]
    NameMismatch(String),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
