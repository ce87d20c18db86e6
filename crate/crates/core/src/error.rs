use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema violation in network description: {0}")]
    Schema(String),

    #[error("dangling reference: {kind} `{id}` refers to unknown {target}")]
    DanglingRef {
        kind: &'static str,
        id: String,
        target: String,
    },

    #[error("non-positive rating on `{0}`")]
    NonPositiveRating(String),

    #[error("relay `{0}` toward-bus is not an endpoint of its branch")]
    RelayOrientation(String),

    #[error("topology state does not cover the model: {0}")]
    TopologyMismatch(String),

    #[error("unknown branch `{0}`")]
    UnknownBranch(String),

    #[error("unknown bus `{0}`")]
    UnknownBus(String),

    #[error("unknown relay `{0}`")]
    UnknownRelay(String),

    #[error("fault location is de-energized: {0}")]
    DeEnergizedFault(String),

    #[error("singular admittance matrix (node `{0}` isolated or degenerate)")]
    SingularMatrix(String),

    #[error("inverter injection loop did not converge after {iterations} iterations (residual {residual:.3e})")]
    InverterNonConvergence { iterations: usize, residual: f64 },

    #[error("invalid distribution spec: {0}")]
    InvalidSpec(String),

    #[error("no energized network in {0} consecutive topology draws")]
    NoEnergizedNetwork(usize),

    #[error("dataset i/o: {0}")]
    DatasetIo(String),

    #[error("malformed dataset row at line {line}: {message}")]
    MalformedRow { line: usize, message: String },

    #[error("dataset schema version mismatch: found `{found}`, expected `{expected}`")]
    SchemaVersion { found: String, expected: String },

    #[error("class `{0}` missing from training data")]
    MissingClass(String),

    #[error("covariance rank-deficient even after regularization")]
    RankDeficient,

    #[error("feature dimension mismatch: model has {expected}, input has {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("too few samples for class `{class}`: {got} < {need}")]
    TooFewSamples {
        class: String,
        got: usize,
        need: usize,
    },

    #[error("mode feature count {0} exceeds cap {1}")]
    ModeCapExceeded(usize, usize),

    #[error("unknown mode `{0}`")]
    UnknownMode(String),

    #[error("CVaR level must satisfy 0 < alpha <= 1, got {0}")]
    InvalidAlpha(f64),

    #[error("pickup margin must exceed 1, got {0}")]
    InvalidPickupMargin(f64),

    #[error("missing rated current for branch `{0}`")]
    MissingRating(String),

    #[error("linear program infeasible; irreducible infeasible constraints: {0:?}")]
    Infeasible(Vec<String>),

    #[error("mode `{mode}` unprotectable: {reason}")]
    Unprotectable { mode: String, reason: String },

    #[error("i/o error on `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serde(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
