use std::path::PathBuf;

/// Errors raised by the registration library.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("patch index ({row}, {col}) outside {rows}x{cols} grid")]
    PatchOutOfGrid {
        row: i64,
        col: i64,
        rows: usize,
        cols: usize,
    },

    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    PixelOutOfBounds {
        u: f64,
        v: f64,
        width: u32,
        height: u32,
    },

    #[error("point coincides with the ray origin")]
    PointAtOrigin,

    #[error("zero-norm feature row {0}")]
    ZeroNormRow(usize),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("no in-frustum point group")]
    NoVisibleGroups,

    #[error("ground-truth cell ({row}, {col}) outside {w}x{w} window")]
    TargetOutsideWindow { row: i64, col: i64, w: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
