use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty word")]
    EmptyWord,

    #[error("empty sequence")]
    EmptySequence,

    #[error("unknown token id {id} (vocabulary size {size})")]
    UnknownTokenId { id: usize, size: usize },

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error("non-unique vocabulary: token {0:?} appears more than once")]
    NonUniqueVocabulary(String),

    #[error("empty vocabulary")]
    EmptyVocabulary,

    #[error("score/vocabulary size mismatch: expected {expected}, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("non-finite score at index {index}")]
    NonFinite { index: usize },

    #[error("step before last insertion: i = {step}, i_n = {last_insertion}")]
    StepBeforeInsertion { step: usize, last_insertion: usize },

    #[error("score {value} outside [{min}, {max}]")]
    OutOfRange { value: f64, min: f64, max: f64 },

    #[error("degenerate distribution")]
    DegenerateDistribution,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("empty guide phrase")]
    EmptyPhrase,

    #[error("prompt tokenizes to zero tokens")]
    EmptyPrompt,

    #[error("invalid model definition: {0}")]
    InvalidModel(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn at_step(self, step: usize) -> Self {
        match self {
            e @ Error::AtStep { .. } => e,
            e => Error::AtStep {
                step,
                source: Box::new(e),
            },
        }
    }
}
