use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("box {box_desc} is out of bounds for a {width}x{height} image")]
    Bounds {
        box_desc: String,
        width: usize,
        height: usize,
    },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("font '{font}' cannot render label {label:?}")]
    GlyphMissing { font: String, label: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("incompatible model: {0}")]
    IncompatibleModel(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("class {class_id} ({label:?}) has no training crops")]
    MissingClass { class_id: usize, label: String },

    #[error("non-finite gradient in tensor '{0}'")]
    NonFiniteGradient(String),

    #[error("catalog is empty")]
    EmptyCatalog,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
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

pub type Result<T, E = Error> = std::result::Result<T, E>;
