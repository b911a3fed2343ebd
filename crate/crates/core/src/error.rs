use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("OBJ parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("mesh has no faces")]
    EmptyMesh,

    #[error("mesh has zero extent (all vertices coincide)")]
    ZeroExtent,

    #[error("camera distance {distance} is inside the unit-box circumsphere (radius {radius:.4})")]
    CameraInsideBounds { distance: f64, radius: f64 },

    #[error("UV charts do not fit the atlas; a global scale of {required_scale:.4} texels/unit would be required")]
    Packing { required_scale: f64 },

    #[error("missing view images: {}", .0.join(", "))]
    MissingViews(Vec<String>),

    #[error("{file}: expected {expected:?} pixels, found {actual:?}")]
    DimensionMismatch {
        file: String,
        expected: (u32, u32),
        actual: (u32, u32),
    },

    #[error("missing depth map {0}")]
    MissingDepth(PathBuf),

    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("no texel is covered by any layer mask ({occupied} occupied texels)")]
    NoCoverage { occupied: usize },

    #[error("stage `{stage}` failed ({path}): {source}")]
    Stage {
        stage: &'static str,
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// True for errors raised by config/manifest validation, before any stage work.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Validation(_))
    }
}
