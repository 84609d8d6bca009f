use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {op} cannot combine shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("receptive field error: sequence length {got} is shorter than the required {required}")]
    ReceptiveField { got: usize, required: usize },

    #[error("parameter error: {0}")]
    Param(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("{}:{line}: {message}", path.display())]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("split too small: {split} split has {len} timesteps, at least {required} are needed")]
    SplitTooSmall {
        split: &'static str,
        len: usize,
        required: usize,
    },

    #[error("not enough timesteps for a window: have {got}, need {required}")]
    TooShort { got: usize, required: usize },

    #[error("finite-difference oracle failed at coordinate {coordinate}: f = {value}")]
    Oracle { coordinate: usize, value: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("training diverged at epoch {} batch {}: {}", .0.epoch, .0.batch, .0.detail)]
    Diverged(Box<crate::training::Divergence>),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
