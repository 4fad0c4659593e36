use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed volume: {0}")]
    MalformedVolume(String),

    #[error("unsupported volume: {0}")]
    UnsupportedVolume(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("index ({0}, {1}, {2}) out of bounds")]
    OutOfBounds(i64, i64, i64),

    #[error("no centerline")]
    NoCenterline,

    #[error("centerline has no endpoints")]
    NoEndpoints,

    #[error("node {0} is not part of the centerline graph")]
    NotInGraph(usize),

    #[error("centerline too short: {available_mm:.3} mm available, {required_mm:.3} mm required")]
    ShortCenterline { available_mm: f64, required_mm: f64 },

    #[error("LM bifurcation not detected")]
    NoBifurcation,

    #[error("component split failed: {0}")]
    SplitFailed(String),

    #[error("invalid phantom: {0}")]
    InvalidPhantom(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable error class, used in reports and CLI output.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } | Error::MalformedVolume(_) | Error::UnsupportedVolume(_) => {
                ErrorClass::Io
            }
            Error::SplitFailed(_) => ErrorClass::SplitFailed,
            Error::NoBifurcation => ErrorClass::NoBifurcation,
            Error::ShortCenterline { .. } => ErrorClass::ShortCenterline,
            Error::NoCenterline | Error::NoEndpoints | Error::NotInGraph(_) => {
                ErrorClass::NoCenterline
            }
            Error::InvalidConfig(_) | Error::InvalidManifest(_) | Error::InvalidPhantom(_) => {
                ErrorClass::ConfigInvalid
            }
            Error::InvalidGeometry(_) | Error::GeometryMismatch(_) | Error::OutOfBounds(..) => {
                ErrorClass::GeometryMismatch
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorClass {
    #[serde(rename = "io-error")]
    Io,
    SplitFailed,
    NoBifurcation,
    ShortCenterline,
    NoCenterline,
    ConfigInvalid,
    GeometryMismatch,
}

impl ErrorClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorClass::Io => "io-error",
            ErrorClass::SplitFailed => "split-failed",
            ErrorClass::NoBifurcation => "no-bifurcation",
            ErrorClass::ShortCenterline => "short-centerline",
            ErrorClass::NoCenterline => "no-centerline",
            ErrorClass::ConfigInvalid => "config-invalid",
            ErrorClass::GeometryMismatch => "geometry-mismatch",
        }
    }
}

impl std::fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
