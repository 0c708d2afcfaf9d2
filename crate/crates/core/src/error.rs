use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("world generation failed: {0}")]
    Generation(String),

    #[error("unknown node id {0}")]
    UnknownNode(usize),

    #[error("node {0} is not reachable from the current position")]
    Unreachable(usize),

    #[error("episode is already finished")]
    EpisodeDone,

    #[error("episode belongs to world {episode} but environment holds world {world}")]
    WorldMismatch { world: u64, episode: u64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("token id {0} is outside the vocabulary")]
    OutOfVocabulary(usize),

    #[error("unknown granularity level {0} (expected 1..=5)")]
    Granularity(u8),

    #[error("label index {label} out of range for {len} logits")]
    Label { label: usize, len: usize },

    #[error("empty candidate set while not at a target (planner bug)")]
    EmptyCandidates,

    #[error("missing embedding for node {0}")]
    MissingEmbedding(usize),

    #[error("non-finite value in {what} at iteration {iteration}")]
    NonFinite { what: String, iteration: usize },

    #[error("trajectory mode mismatch: {0}")]
    Mode(String),

    #[error("unknown parameter {0}")]
    UnknownParam(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
