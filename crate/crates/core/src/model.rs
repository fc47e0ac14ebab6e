//! Score-source contracts consumed by the decoder.

use crate::error::{Error, Result};
use crate::types::{MlmScoreScale, ScoreVector, TokenId, Vocabulary};

/// Next-token scorer over left context.
///
/// Implementations must be safe to call concurrently; the engine never
/// mutates a model.
pub trait AutoregressiveModel: Send + Sync {
    fn vocabulary(&self) -> &Vocabulary;

    /// True when [`score`](Self::score) returns log-probabilities.
    fn normalized(&self) -> bool {
        true
    }

    fn score(&self, context: &[TokenId]) -> Result<ScoreVector>;
}

/// Scorer for a single masked position sitting between `left` and `right`.
pub trait MaskedModel: Send + Sync {
    fn vocabulary(&self) -> &Vocabulary;

    fn normalized(&self) -> bool {
        true
    }

    fn score_masked(&self, left: &[TokenId], right: &[TokenId]) -> Result<ScoreVector>;
}

/// Whole-sequence log-likelihood, used by the perplexity metric.
pub trait ScorerModel {
    /// `Σ log p(x_i | context, x_<i)` over `continuation`.
    fn conditional_log_prob(&self, context: &[TokenId], continuation: &[TokenId]) -> Result<f64>;

    fn sequence_log_prob(&self, ids: &[TokenId]) -> Result<f64> {
        self.conditional_log_prob(&[], ids)
    }
}

impl<T: AutoregressiveModel + ?Sized> ScorerModel for T {
    fn conditional_log_prob(&self, context: &[TokenId], continuation: &[TokenId]) -> Result<f64> {
        if continuation.is_empty() {
            return Err(Error::EmptySequence);
        }
        self.vocabulary().check_ids(continuation)?;
        let mut ctx = context.to_vec();
        let mut total = 0.0;
        for &id in continuation {
            total += log_prob_score(self, &ctx)?[id];
            ctx.push(id);
        }
        Ok(total)
    }
}

/// `log p(· | context)` from an autoregressive model, normalizing raw logits
/// when the backend does not declare normalized output.
pub fn log_prob_score<M: AutoregressiveModel + ?Sized>(
    model: &M,
    context: &[TokenId],
) -> Result<ScoreVector> {
    let vocab = model.vocabulary();
    vocab.check_ids(context)?;
    let scores = model.score(context)?;
    scores.check_len(vocab.len())?;
    Ok(if model.normalized() {
        scores
    } else {
        scores.log_softmax()
    })
}

/// Masked-position scores on the requested scale.
pub fn masked_score<M: MaskedModel + ?Sized>(
    model: &M,
    left: &[TokenId],
    right: &[TokenId],
    scale: MlmScoreScale,
) -> Result<ScoreVector> {
    let vocab = model.vocabulary();
    vocab.check_ids(left)?;
    vocab.check_ids(right)?;
    let scores = model.score_masked(left, right)?;
    scores.check_len(vocab.len())?;
    Ok(match scale {
        MlmScoreScale::LogProb if !model.normalized() => scores.log_softmax(),
        _ => scores,
    })
}

pub fn sequence_log_prob<S: ScorerModel + ?Sized>(scorer: &S, ids: &[TokenId]) -> Result<f64> {
    if ids.is_empty() {
        return Err(Error::EmptySequence);
    }
    scorer.sequence_log_prob(ids)
}
