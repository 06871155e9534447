use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed ASCII grid header: {0}")]
    MalformedHeader(String),
    #[error("invalid grid cell {token:?} at row {row}, column {col}: {reason}")]
    InvalidCell {
        row: usize,
        col: usize,
        token: String,
        reason: &'static str,
    },
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no sampling units fit: {0}")]
    NoUnits(String),
    #[error("response design {design} cannot be used with legend {legend}")]
    DesignLegendMismatch { design: String, legend: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

