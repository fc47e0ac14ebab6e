//! Guided decoding for autoregressive language models.
//!
//! The engine steers generation through an ordered list of guide phrases by
//! adding masked-language-model scores to the autoregressive scores and
//! lifting the pending phrase's first token into the top-K candidate set.
//! It also computes perplexity, repetition and success-rate measures.

pub mod align;
pub mod decoder;
pub mod error;
pub mod metrics;
pub mod model;
pub mod normalize;
pub mod reference;
pub mod tokenizer;
pub mod types;

pub use align::{build_alignment, project_scores, AlignmentMap};
pub use decoder::{
    Backends, GenerationFailure, GenerationResult, GuidedDecoder, MaskedBackend, StepDiagnostics,
    StopReason,
};
pub use error::{Error, Result};
pub use model::{AutoregressiveModel, MaskedModel, ScorerModel};
pub use normalize::{CaseFold, LemmaTable, WordNormalizer};
pub use tokenizer::{ByteLevelBpe, Tokenizer, WordTokenizer};
pub use types::{
    DecodingConfig, GenerationState, GuidePhrase, InsertionRecord, MlmScoreScale, ScoreVector,
    Storyline, Strategy, TokenId, Vocabulary,
};
