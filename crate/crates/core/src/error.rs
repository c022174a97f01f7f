use thiserror::Error;

use crate::tkg::EntityKind;

pub type Result<T, E = CaperError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CaperError {
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("horizon {horizon} leaves no training snapshots (only {snapshots} snapshots)")]
    HorizonTooLarge { horizon: usize, snapshots: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("softmax over an empty candidate set")]
    EmptyCandidateSet,

    #[error("{kind} vocabulary is empty")]
    EmptyVocabulary { kind: EntityKind },

    #[error("loss is not deterministic: {first} vs {second}")]
    NonDeterministicLoss { first: f64, second: f64 },

    #[error("non-finite gradient in parameter block `{block}`")]
    NaNGradient { block: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("missing layer-0 input for {kind} {index}")]
    MissingLayer0Input { kind: EntityKind, index: usize },

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("unknown cell kind `{0}` (expected paper-lstm, lstm, gru or rnn)")]
    UnknownCellKind(String),

    #[error("unknown ablation variant `{0}`")]
    UnknownVariant(String),

    #[error("user {0} has no evolution state")]
    UnknownTestUser(usize),

    #[error("prediction for user {user} has too few candidates for an inferred snapshot")]
    InsufficientCandidates { user: usize },

    #[error("ground-truth {kind} {entity} is not among the ranked candidates")]
    TruthNotInCandidates { kind: EntityKind, entity: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
