use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("cutoff geometry infeasible: {0}")]
    CutoffGeometry(String),

    #[error("post-blow-up evaluation: t = {t} >= T = {blow_time}")]
    PostBlowup { t: f64, blow_time: f64 },

    #[error("no ground state bracket in [{lo}, {hi}] for d = {dimension}")]
    NoGroundStateBracket { dimension: usize, lo: f64, hi: f64 },

    #[error("time {t} is not a mesh node")]
    NotOnMesh { t: f64 },

    #[error("trajectories live on different meshes")]
    MeshMismatch,

    #[error("not contracting: increase lambda or decrease T (last ratios {ratios:?})")]
    NotContracting { ratios: Vec<f64> },

    #[error("Picard sequence left the weighted ball: {0}")]
    LeftWeightedSpace(String),

    #[error("numerical blow-up reached at t = {t}")]
    NumericalBlowup { t: f64 },

    #[error("ratio undefined: zero denominator with nonzero numerator")]
    DegenerateRatio,

    #[error("too few samples: need {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("snapshot format error: {0}")]
    SnapshotFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
