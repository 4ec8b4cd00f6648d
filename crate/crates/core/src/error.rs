use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point is behind the camera")]
    BehindCamera,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("mesh is empty")]
    EmptyMesh,
    #[error("silhouette mask is empty")]
    EmptyMask,
    #[error("view {0} rendered empty; the object must fit in every view")]
    EmptyView(usize),
    #[error("bad model file: {0}")]
    BadModelFile(String),
    #[error("degenerate distribution: every support point has zero probability")]
    DegenerateDistribution,
    #[error("invalid argument: {0}")]
    Domain(&'static str),
    #[error("histogram starved: no {0} pixels collected")]
    HistogramStarved(&'static str),
    #[error("no data: no valid correspondence lines")]
    NoData,
    #[error("linear solve failed: {0}")]
    Solve(&'static str),
    #[error("too many objects for the occlusion mask: {0} > 32")]
    TooManyObjects(usize),
    #[error("object is not initialized")]
    NotInitialized,
    #[error("object leaves the image at frame {0}")]
    OutOfFrame(usize),
    #[error("frame {frame}: {source}")]
    Frame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Short stable identifier, used by the CLI's machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::BehindCamera => "behind_camera",
            Error::InvalidInput(_) => "invalid_input",
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::EmptyMesh => "empty_mesh",
            Error::EmptyMask => "empty_mask",
            Error::EmptyView(_) => "empty_view",
            Error::BadModelFile(_) => "bad_model_file",
            Error::DegenerateDistribution => "degenerate_distribution",
            Error::Domain(_) => "domain",
            Error::HistogramStarved(_) => "histogram_starved",
            Error::NoData => "no_data",
            Error::Solve(_) => "solve",
            Error::TooManyObjects(_) => "too_many_objects",
            Error::NotInitialized => "not_initialized",
            Error::OutOfFrame(_) => "out_of_frame",
            Error::Frame { .. } => "frame",
            Error::Image(_) => "image",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
