use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic in raster file (expected \"AVPM\")")]
    BadMagic,
    #[error("unsupported AVPM version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated raster file: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },
    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("probability simplex violated at pixel ({x}, {y}): sum {sum}")]
    SimplexViolation { x: usize, y: usize, sum: f32 },
    #[error("median kernel must be odd, got {0}")]
    EvenKernel(usize),
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("branch has no pixels")]
    EmptyBranch,
    #[error("graph is disconnected: {reached} of {total} nodes reachable from root")]
    DisconnectedGraph { reached: usize, total: usize },
    #[error("vessel pixel ({x}, {y}) has no branch assignment")]
    UnassignedVesselPixel { x: usize, y: usize },
    #[error("degenerate class: {0}")]
    DegenerateClass(String),
    #[error("skeleton pixel ({x}, {y}) lies outside the vessel mask")]
    SkeletonOutsideMask { x: usize, y: usize },
    #[error("empty width list")]
    EmptyList,
    #[error("no {0} segments inside the measurement annulus")]
    MissingClassInAnnulus(&'static str),
    #[error("no {0} segments in the field of view")]
    MissingClass(&'static str),
    #[error("phantom spec infeasible: {0}")]
    SpecInfeasible(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Tags an error with the pipeline stage it came from.
    pub fn at(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |e| Error::Stage {
            stage,
            source: Box::new(e),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
