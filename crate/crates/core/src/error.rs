use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    PayloadLength { expected: usize, found: usize },
    #[error("non-finite voxel at index {0}")]
    NonFiniteVoxel(usize),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("mask voxel {index} has non-binary value {value}")]
    NonBinaryMask { index: usize, value: u8 },
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("trilinear interpolation requested for a mask volume")]
    TrilinearMask,
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("phantom generation failed: {0}")]
    Generation(String),
    #[error("backward called without a recorded forward pass")]
    BackwardWithoutForward,
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {value}")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }
}
