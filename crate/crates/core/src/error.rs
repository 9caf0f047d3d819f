use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error in {op}: axis {axis} expected {expected}, found {found}")]
    Shape {
        op: &'static str,
        axis: String,
        expected: usize,
        found: usize,
    },

    #[error("shape error in {op}: {msg}")]
    ShapeMsg { op: &'static str, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("backward called with a stale or foreign context for {0}")]
    StaleContext(&'static str),

    #[error("batch norm in train mode needs a batch of at least 2, got {0}")]
    BatchTooSmall(usize),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),

    #[error("tensor '{name}' has dims {found:?}, architecture expects {expected:?}")]
    TensorDims {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("tensor '{0}' missing from checkpoint")]
    MissingTensor(String),

    #[error("tensor '{0}' is not part of the architecture")]
    UnknownTensor(String),

    #[error("{path}: line {line}: {msg}")]
    Manifest { path: PathBuf, line: usize, msg: String },

    #[error("manifest {0} has no records")]
    EmptyManifest(PathBuf),

    #[error("image {path}: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error("fold split: {0}")]
    Folds(String),

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("fold {fold}: {source}")]
    InFold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, axis: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::Shape {
            op,
            axis: axis.into(),
            expected,
            found,
        }
    }
}
