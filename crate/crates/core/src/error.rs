use thiserror::Error;

/// Errors produced anywhere in the simulation / reconstruction / evaluation stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid chirp configuration: {0}")]
    InvalidChirp(String),

    #[error("invalid antenna layout: {0}")]
    InvalidLayout(String),

    #[error("angle ({theta_a}, {theta_e}) rad is outside the +/-90 degree field of view")]
    AngleOutOfView { theta_a: f64, theta_e: f64 },

    #[error("geometrically invalid point: {0}")]
    InvalidGeometry(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("mesh has no usable triangles")]
    EmptyMesh,

    #[error("mesh has zero total surface area")]
    ZeroArea,

    #[error("unknown scene generator `{0}`")]
    UnknownGenerator(String),

    #[error("cube of {samples} samples exceeds the configured cap of {cap}")]
    CubeTooLarge { samples: usize, cap: usize },

    #[error("corrupt cube file: {0}")]
    CorruptCube(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is singular even after diagonal loading")]
    Singular,

    #[error("source count {m} out of range for {n} receivers")]
    SourceCount { m: usize, n: usize },

    #[error("eigendecomposition failed to converge")]
    Eigen,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("point cloud parse error: {0}")]
    CloudParse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
