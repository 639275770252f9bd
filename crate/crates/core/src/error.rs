use thiserror::Error;

/// Errors raised by the geometry, mesh, calculus and flow layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("chart mismatch: expected {expected}, got {got}")]
    ChartMismatch { expected: String, got: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("degenerate tangent plane (|u ^ w| = {0:e})")]
    DegeneratePlane(f64),

    #[error("point is off the target manifold: {0}")]
    OffManifold(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("field size {got} does not match mesh node count {expected}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("operation requires {required} topology")]
    Topology { required: &'static str },

    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("maps do not share mesh, target and homotopy class: {0}")]
    HomotopyMismatch(String),

    #[error("maps do not coincide on the boundary (max distance {0:e})")]
    BoundaryMismatch(f64),

    #[error("operation requires a torus domain and a flat torus target")]
    NonTorusConfiguration,

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("field is not variational")]
    NotVariational,

    #[error("empty probe set")]
    EmptyProbe,

    #[error("parameter {name} = {value} outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },

    #[error("blowup at step {step} (t = {time}), node {node}: {reason}")]
    Blowup { step: u64, time: f64, node: usize, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unknown estimate id `{0}`")]
    UnknownEstimate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
