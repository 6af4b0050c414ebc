use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("trajectory `{id}` is degenerate: {reason}")]
    DegenerateTrajectory { id: String, reason: String },

    #[error("sequence lengths differ ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty point sequence")]
    EmptySequence,

    #[error("trajectory {index} has zero displacement; cosine similarity is undefined")]
    ZeroDisplacement { index: usize },

    #[error("spectral feature {index} has an all-zero spectrum")]
    ZeroSpectrum { index: usize },

    #[error("sequence needs {needed} tokens but max_seq_len is {max}")]
    SequenceTooLong { needed: usize, max: usize },

    #[error("non-finite activation in {stage}")]
    NonFiniteActivation { stage: &'static str },

    #[error("tape does not match: {0}")]
    TapeMismatch(String),

    #[error("embedding norm is too small to normalize")]
    ZeroEmbedding,

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("need at least {needed} vectors, have {have}")]
    TooFewVectors { needed: usize, have: usize },

    #[error("unknown trajectory id `{0}`")]
    UnknownId(String),

    #[error("no candidates to evaluate")]
    EmptyCandidates,

    #[error("trajectories are missing maneuver labels (first unlabeled: `{0}`)")]
    MissingLabels(String),

    #[error("bank of {n} trajectories exceeds the pairwise-matrix limit of {limit}")]
    BankTooLarge { n: usize, limit: usize },

    #[error("expected {expected} waypoints, got {got}")]
    WaypointCountMismatch { expected: usize, got: usize },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("bad {kind} file: {reason}")]
    Format { kind: &'static str, reason: String },

    #[error("while processing `{id}`: {source}")]
    Context {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn context(self, id: impl Into<String>) -> Self {
        Error::Context {
            id: id.into(),
            source: Box::new(self),
        }
    }

    /// Stable machine-readable category, used by the CLI on failure.
    pub fn category(&self) -> &'static str {
        match self {
            Error::DegenerateTrajectory { .. }
            | Error::LengthMismatch { .. }
            | Error::EmptySequence
            | Error::ZeroDisplacement { .. }
            | Error::ZeroSpectrum { .. }
            | Error::SequenceTooLong { .. }
            | Error::WaypointCountMismatch { .. } => "data",
            Error::NonFiniteActivation { .. } | Error::NonFiniteLoss { .. } => "divergence",
            Error::TapeMismatch(_) | Error::ZeroEmbedding => "internal",
            Error::InvalidConfig(_) => "config",
            Error::TooFewVectors { .. }
            | Error::UnknownId(_)
            | Error::EmptyCandidates
            | Error::MissingLabels(_)
            | Error::BankTooLarge { .. } => "retrieval",
            Error::Parse { .. } | Error::Format { .. } | Error::Json(_) => "format",
            Error::Context { source, .. } => source.category(),
            Error::Io(_) => "io",
        }
    }
}
