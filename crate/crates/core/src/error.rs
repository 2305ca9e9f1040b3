use thiserror::Error;

/// Errors produced by the simulator library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown node id {0}")]
    UnknownNode(usize),

    #[error("unknown fragment id {0}")]
    UnknownFragment(usize),

    #[error("node {target} has no latency measurement in the view of node {owner}")]
    MissingLatency { owner: usize, target: usize },

    #[error("kernel argument must be non-negative, got {0}")]
    NegativeArgument(f64),

    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },

    #[error("fragment {0} has no swarm")]
    EmptySwarm(usize),

    #[error("invalid swarm stats for fragment {fragment}: {reason}")]
    InvalidStats { fragment: usize, reason: String },

    #[error("fragment has no interested peers")]
    NoInterestedPeers,

    #[error("series has {len} samples but at least {required} are required")]
    SeriesTooShort { len: usize, required: usize },

    #[error("decomposition is inconsistent: {0}")]
    MalformedDecomposition(String),

    #[error("input row has width {got}, expected {expected}")]
    WidthMismatch { got: usize, expected: usize },

    #[error("training diverged at epoch {epoch} (non-finite loss); lower the learning rate")]
    TrainingDiverged { epoch: usize },

    #[error("checkpoint version {got} is not supported (expected {expected})")]
    CheckpointVersion { got: u32, expected: u32 },

    #[error("checkpoint is inconsistent: {0}")]
    MalformedCheckpoint(String),

    #[error("step {step} is outside the logged range of {len} entries")]
    StepOutOfRange { step: usize, len: usize },

    #[error("invalid scenario:\n{}", violations.join("\n"))]
    InvalidScenario { violations: Vec<String> },

    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),

    #[error("invalid value {value:?} for parameter {key:?}: {reason}")]
    InvalidParameterValue {
        key: String,
        value: String,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("scenario file parse error: {0}")]
    ScenarioParse(#[from] Box<toml::de::Error>),

    #[error("serialization error: {0}")]
    Serialize(String),
}

pub type Result<T> = std::result::Result<T, Error>;
