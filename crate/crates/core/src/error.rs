use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("duplicate node id {0:?}")]
    DuplicateNode(String),

    #[error("edge {index} references unknown node id {id:?}")]
    DanglingEdge { index: usize, id: String },

    #[error("edge {index} is a self-loop on {id:?}")]
    SelfLoop { index: usize, id: String },

    #[error("edge {index} duplicates an earlier edge {a:?}-{b:?}")]
    DuplicateEdge { index: usize, a: String, b: String },

    #[error("topology is disconnected: {unreachable} of {total} nodes unreachable from {from:?}")]
    Disconnected {
        from: String,
        unreachable: usize,
        total: usize,
    },

    #[error("topology has no nodes")]
    EmptyTopology,

    #[error("unknown node id {0:?}")]
    UnknownNode(String),

    #[error("invalid coordinate: {0}")]
    InvalidCoordinate(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("k = {k} exceeds the number of nodes ({nodes})")]
    TooManyLandmarks { k: usize, nodes: usize },

    #[error("latency model undefined at latency {latency_ms} ms (log argument {argument})")]
    ModelDomain { latency_ms: f64, argument: f64 },

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("degenerate samples: {0}")]
    DegenerateSamples(String),

    #[error("curve fit did not converge: {0}")]
    FitFailed(String),

    #[error("landmark {landmark:?} has insufficient calibration data: {reason}")]
    CalibrationData { landmark: String, reason: String },

    #[error("circles share a center and radius; intersection is the whole circle")]
    DegenerateCircles,

    #[error("need at least 2 circles, got {0}")]
    TooFewCircles(usize),

    #[error("no candidate points survived lateration")]
    NoCandidates,

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("could not build a connected topology: {0}")]
    Connectivity(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the filesystem or stream rather than by
    /// the content of the input.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::Json(e) => e.is_io(),
            _ => false,
        }
    }
}
