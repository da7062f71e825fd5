use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm {norm:e} is at or below the normalization threshold")]
    NormTooSmall { norm: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("pair set is empty")]
    EmptyPairSet,
    #[error("triplet set is empty")]
    EmptyTripletSet,
    #[error("tuplet set is empty")]
    EmptyTupletSet,
    #[error("invalid index set: {0}")]
    InvalidIndexSet(String),

    #[error("class has no samples")]
    EmptyClass,
    #[error("class {0} is not covered by the density state")]
    UnknownClass(usize),
    #[error("every class in the batch has a single sample; density is undefined")]
    AllSingletonClasses,

    #[error("backward cache does not match the network or gradient shape")]
    CacheMismatch,
    #[error("objective became non-finite at iteration {iteration}")]
    DivergenceDetected { iteration: u64 },

    #[error("dataset has {available} classes, batch needs {needed}")]
    InsufficientClasses { needed: usize, available: usize },
    #[error("class {class} has {available} samples, batch needs {needed}")]
    InsufficientSamples {
        class: usize,
        needed: usize,
        available: usize,
    },
    #[error("no valid triplets can be mined from the batch")]
    NoValidTriplets,
    #[error("no valid tuplets can be mined from the batch")]
    NoValidTuplets,

    #[error("{points} points cannot form {clusters} clusters")]
    TooFewPoints { points: usize, clusters: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: expected {expected} feature values, found {found}")]
    DimInconsistent {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("train and test splits share class {0:?}")]
    OverlappingSplits(String),
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
