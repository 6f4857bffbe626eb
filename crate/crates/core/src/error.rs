use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("no supervised positions")]
    NoSupervisedPositions,

    #[error("backward called on an empty tape")]
    EmptyTape,

    #[error("unknown tape variable {0}")]
    UnknownVar(usize),

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("unknown parameter name(s) in frozen set: {0:?}")]
    UnknownFrozen(Vec<String>),

    #[error("missing gradient for trainable parameter `{0}`")]
    MissingGradient(String),

    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },

    #[error("sequence length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("empty content: sequence has no non-special tokens")]
    EmptyContent,

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("no task layers remain: k={k} must be < layer count {layers}")]
    NoTaskLayers { k: usize, layers: usize },

    #[error("checkpoint corruption in tensor `{name}`: {detail}")]
    Corrupt { name: String, detail: String },

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("incompatible checkpoints: {0}")]
    Incompatible(String),

    #[error("stage error: {0}")]
    Stage(String),

    #[error("duplicate id(s): {0:?}")]
    DuplicateIds(Vec<String>),

    #[error("unknown document id(s): {0:?}")]
    UnknownDocs(Vec<String>),

    #[error("index kind mismatch: expected {expected}, found {found}")]
    IndexKind { expected: String, found: String },

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("need at least {needed} paired observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },

    #[error("missing artifact {stage} at {path}")]
    MissingArtifact { stage: String, path: PathBuf },

    #[error("infeasible synthetic spec: {0}")]
    Infeasible(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
