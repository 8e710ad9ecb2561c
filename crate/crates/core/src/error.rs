use thiserror::Error;

/// Errors produced anywhere in the lifting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: lhs {lhs:?} vs rhs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("model configuration error: {0}")]
    Config(String),

    #[error("clip parse error at byte {offset}: {what}")]
    ClipParse { offset: u64, what: String },

    #[error("unsupported joint count {got} (expected {expected})")]
    UnsupportedJointCount { got: u32, expected: u32 },

    #[error("clip too short: {frames} frames, window needs {needed}")]
    ClipTooShort { frames: usize, needed: usize },

    #[error("camera sampling rejected after {retries} retries (joint behind camera)")]
    CameraRejected { retries: u32 },

    #[error("degenerate skeleton geometry at frame {frame}: {what}")]
    DegenerateGeometry { frame: usize, what: String },

    #[error("checkpoint version mismatch: file has {got}, reader supports {want}")]
    CheckpointVersion { got: u32, want: u32 },

    #[error("checkpoint checksum mismatch: header says {expected:#010x}, blob has {actual:#010x}")]
    CheckpointChecksum { expected: u32, actual: u32 },

    #[error("checkpoint tensor {name}: header shape {header:?} does not match blob/config shape {actual:?}")]
    CheckpointShape {
        name: String,
        header: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("checkpoint config mismatch: {0}")]
    CheckpointConfig(String),

    #[error("NaN loss during {stage} at epoch {epoch}, step {step}")]
    NanLoss {
        stage: String,
        epoch: usize,
        step: usize,
    },

    #[error("validation split is empty")]
    EmptyValidationSplit,

    #[error("need at least {needed} clips, got {got}")]
    TooFewClips { got: usize, needed: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
