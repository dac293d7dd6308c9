use std::path::PathBuf;

/// Errors produced anywhere in the upsampling pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("file contains no points")]
    EmptyFile,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("k = {k} is too large for a cloud of {available} candidate neighbors")]
    KTooLarge { k: usize, available: usize },
    #[error("cannot sample {requested} points from a cloud of {count}")]
    SampleTooLarge { requested: usize, count: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("noise level must be non-negative, got {0}")]
    NegativeNoise(f64),
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },
    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("variable is not recorded on this tape")]
    NotOnTape,
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("selective scan requires delta > 0, found {value} at step {step}, channel {channel}")]
    NonPositiveDelta {
        step: usize,
        channel: usize,
        value: f64,
    },
    #[error("point {index} lies outside the unit ball (norm {norm}); normalize the cloud first")]
    OutsideUnitBall { index: usize, norm: f64 },
    #[error("render configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("invalid upsampling rate {0}: must be > 1")]
    InvalidRate(f64),
    #[error("refinement produced a non-finite coordinate at iteration {iteration}")]
    RefinementDiverged { iteration: usize },
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    TrainingDiverged { epoch: usize, loss: f64 },
    #[error("parameter/gradient mismatch for tensor `{0}`")]
    MisalignedParams(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
