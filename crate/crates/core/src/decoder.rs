//! Guided decoding: score fusion, guide-token boost, λ schedule, top-K
//! sampling and the phrase-insertion state machine.
//!
//! At every step the decoder scores the next token with the autoregressive
//! model. While a guide phrase is pending and the strategy asks for it, the
//! masked model scores a single `<mask>` slot placed between the running text
//! and the pending phrase, and those scores are added to the AR scores. The
//! boost then lifts the phrase's first token into the top-K set with a
//! strength that grows linearly since the last insertion. Once the phrase's
//! first token (or a word normalizing to its first word) is produced, the rest
//! of the phrase is spliced in and the next phrase becomes pending.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::align::{project_scores, renormalize_shared, AlignmentMap};
use crate::error::{Error, Result};
use crate::model::{log_prob_score, masked_score, AutoregressiveModel, MaskedModel};
use crate::normalize::{trailing_word, WordNormalizer};
use crate::tokenizer::Tokenizer;
use crate::types::{
    DecodingConfig, GenerationState, GuidePhrase, InsertionRecord, ScoreVector, Storyline,
    Strategy, TokenId,
};

/// Per-session random stream. One uniform draw per sampled token.
pub type SessionRng = ChaCha8Rng;

pub fn session_rng(seed: u64) -> SessionRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fuse_scores(ar: &ScoreVector, mlm_projected: &ScoreVector) -> Result<ScoreVector> {
    mlm_projected.check_len(ar.len())?;
    ScoreVector::new(
        ar.as_slice()
            .iter()
            .zip(mlm_projected.as_slice())
            .map(|(a, m)| a + m)
            .collect(),
    )
}

/// `λ_i = λ₀ · (i − i_n)`.
pub fn lambda_at_step(lambda0: f64, i: usize, i_n: usize) -> Result<f64> {
    if i <= i_n {
        return Err(Error::StepBeforeInsertion {
            step: i,
            last_insertion: i_n,
        });
    }
    if lambda0.is_nan() || lambda0 < 0.0 {
        return Err(Error::InvalidConfig("lambda0 must be non-negative".into()));
    }
    Ok(lambda0 * (i - i_n) as f64)
}

/// Relative position of the guide token's score within `[s_min, s_max]`.
/// A flat vector yields 1.
pub fn relative_position_alpha(s_w1: f64, s_min: f64, s_max: f64) -> Result<f64> {
    if !(s_min <= s_w1 && s_w1 <= s_max) {
        return Err(Error::OutOfRange {
            value: s_w1,
            min: s_min,
            max: s_max,
        });
    }
    if s_max == s_min {
        return Ok(1.0);
    }
    Ok((s_w1 - s_min) / (s_max - s_min))
}

/// Gap between the best score and the K-th best.
pub fn headroom_delta(s_max: f64, s_k: f64) -> Result<f64> {
    if s_k > s_max {
        return Err(Error::OutOfRange {
            value: s_k,
            min: f64::NEG_INFINITY,
            max: s_max,
        });
    }
    Ok(s_max - s_k)
}

/// Value of the K-th largest entry (K clamped to the vector length).
pub fn kth_largest(scores: &ScoreVector, k: usize) -> f64 {
    let k = k.clamp(1, scores.len());
    let mut values = scores.as_slice().to_vec();
    let (_, kth, _) = values.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    *kth
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoostRecord {
    pub token_id: TokenId,
    pub pre_boost_score: f64,
    pub post_boost_score: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub delta: f64,
    pub s_k: f64,
    pub s_min: f64,
    pub s_max: f64,
    /// False when the token's own score already beat `s_K + λαΔ` and was kept.
    pub applied: bool,
}

/// Raises `w1` to `s_K + λ·α·Δ`, or keeps its own score if that is higher.
pub fn boost_guide_token(
    fused: &ScoreVector,
    w1: TokenId,
    k: usize,
    lambda_i: f64,
) -> Result<(ScoreVector, BoostRecord)> {
    let Some(s_w1) = fused.get(w1) else {
        return Err(Error::UnknownTokenId {
            id: w1,
            size: fused.len(),
        });
    };
    let s_min = fused.min();
    let s_max = fused.max();
    let s_k = kth_largest(fused, k);
    let alpha = relative_position_alpha(s_w1, s_min, s_max)?;
    let delta = headroom_delta(s_max, s_k)?;
    let target = s_k + lambda_i * alpha * delta;
    let applied = target > s_w1;
    let post = if applied { target } else { s_w1 };
    let mut out = fused.clone();
    out.set(w1, post);
    let out = ScoreVector::new(out.into_vec())?;
    Ok((
        out,
        BoostRecord {
            token_id: w1,
            pre_boost_score: s_w1,
            post_boost_score: post,
            lambda: lambda_i,
            alpha,
            delta,
            s_k,
            s_min,
            s_max,
            applied,
        },
    ))
}

/// Categorical distribution over a candidate set, in ranking order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Categorical {
    pub ids: Vec<TokenId>,
    pub probs: Vec<f64>,
}

impl Categorical {
    pub fn probability(&self, id: TokenId) -> f64 {
        self.ids
            .iter()
            .position(|&x| x == id)
            .map_or(0.0, |i| self.probs[i])
    }

    /// Inverse-CDF draw for a uniform `u ∈ [0, 1)`.
    pub fn sample_with(&self, u: f64) -> TokenId {
        let mut acc = 0.0;
        for (&id, &p) in self.ids.iter().zip(&self.probs) {
            acc += p;
            if u < acc {
                return id;
            }
        }
        *self.ids.last().expect("non-empty distribution")
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TokenId {
        self.sample_with(rng.random::<f64>())
    }
}

/// Softmax of `score / temperature` over the `k` best tokens.
pub fn top_k_distribution(scores: &ScoreVector, k: usize, temperature: f64) -> Result<Categorical> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::InvalidConfig("temperature must be positive".into()));
    }
    if scores.is_empty() {
        return Err(Error::DegenerateDistribution);
    }
    let ids = scores.top_k(k);
    let best = scores[ids[0]];
    let weights: Vec<f64> = ids
        .iter()
        .map(|&id| ((scores[id] - best) / temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::DegenerateDistribution);
    }
    let probs = weights.into_iter().map(|w| w / total).collect();
    Ok(Categorical { ids, probs })
}

pub fn top_k_sample<R: Rng + ?Sized>(
    scores: &ScoreVector,
    k: usize,
    temperature: f64,
    rng: &mut R,
) -> Result<TokenId> {
    Ok(top_k_distribution(scores, k, temperature)?.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    /// The sampled token is the phrase's first token.
    ExactToken,
    /// The word just produced normalizes to the phrase's first word.
    NormalizedWord,
}

pub fn phrase_trigger(
    chosen_id: TokenId,
    current_word: Option<&str>,
    pending: &GuidePhrase,
    normalizer: &dyn WordNormalizer,
) -> Option<Trigger> {
    if chosen_id == pending.first_token_id {
        return Some(Trigger::ExactToken);
    }
    let word = current_word?;
    match normalizer.normalize(word) {
        Ok(n) if n == pending.normalized_first_word => Some(Trigger::NormalizedWord),
        _ => None,
    }
}

pub fn detect_phrase_trigger(
    chosen_id: TokenId,
    current_word: Option<&str>,
    pending: &GuidePhrase,
    normalizer: &dyn WordNormalizer,
) -> bool {
    phrase_trigger(chosen_id, current_word, pending, normalizer).is_some()
}

/// Tokens to splice after a trigger: the rest of the phrase's tokens after an
/// exact first-token hit, or the remaining words after a matching word.
pub fn splice_tokens(
    pending: &GuidePhrase,
    trigger: Trigger,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<TokenId>> {
    match trigger {
        Trigger::ExactToken => Ok(pending.token_ids[1..].to_vec()),
        Trigger::NormalizedWord => {
            let rest: Vec<&str> = pending.words().skip(1).collect();
            if rest.is_empty() {
                Ok(Vec::new())
            } else {
                tokenizer.encode_continuation(&rest.join(" "))
            }
        }
    }
}

/// Splices `tokens` (cut to the remaining budget), logs the insertion, resets
/// `i_n` and advances to the next phrase.
pub fn insert_phrase(
    mut state: GenerationState,
    tokens: &[TokenId],
    max_new_tokens: usize,
) -> GenerationState {
    let room = max_new_tokens.saturating_sub(state.generated_ids.len());
    let take = tokens.len().min(room);
    for &id in &tokens[..take] {
        state.push(id);
    }
    state.step_i = state.generated_ids.len();
    state.insertion_log.push(InsertionRecord {
        phrase_index: state.phrase_index,
        step: state.step_i,
        truncated: take < tokens.len(),
    });
    state.last_insertion_step_i_n = state.step_i;
    state.phrase_index += 1;
    state
}

/// Masked-model side of the fusion.
pub struct MaskedBackend<'a> {
    pub model: &'a dyn MaskedModel,
    /// `None` when the masked model shares the AR vocabulary and ids.
    pub tokenizer: Option<&'a dyn Tokenizer>,
    pub alignment: AlignmentMap,
}

pub struct Backends<'a> {
    pub ar: &'a dyn AutoregressiveModel,
    pub ar_tokenizer: &'a dyn Tokenizer,
    pub mlm: Option<MaskedBackend<'a>>,
    /// AR id that ends generation when sampled.
    pub eos: Option<TokenId>,
}

/// Everything computed for one step before sampling.
#[derive(Debug, Clone)]
pub struct StepPlan {
    pub ar: ScoreVector,
    pub mlm: Option<ScoreVector>,
    pub fused: ScoreVector,
    pub boost: Option<BoostRecord>,
    /// Scores the candidate set is drawn from.
    pub final_scores: ScoreVector,
    pub distribution: Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub token_id: TokenId,
    pub token: String,
    pub ar_score: f64,
    pub mlm_score: Option<f64>,
    pub fused_score: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepDiagnostics {
    /// 1-based index of the sampled token among generated tokens.
    pub step: usize,
    pub phrase_index: Option<usize>,
    pub top_candidates: Vec<Candidate>,
    pub boosted_token: Option<BoostRecord>,
    pub chosen_id: TokenId,
    pub chosen_token: String,
    pub trigger: Option<Trigger>,
    /// Spliced phrase tokens, not sampled.
    pub forced_ids: Vec<TokenId>,
    pub end_of_text: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Budget,
    EndOfText,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationResult {
    pub prompt_ids: Vec<TokenId>,
    pub generated_ids: Vec<TokenId>,
    /// Prompt followed by the continuation.
    pub text: String,
    pub generated_text: String,
    pub insertion_log: Vec<InsertionRecord>,
    pub stop_reason: StopReason,
    /// Storyline indices never inserted.
    pub unmet_phrases: Vec<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<StepDiagnostics>,
}

#[derive(Debug)]
pub struct GenerationFailure {
    pub error: Error,
    pub partial: GenerationResult,
}

impl std::fmt::Display for GenerationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "generation aborted after {} tokens: {}",
            self.partial.generated_ids.len(),
            self.error
        )
    }
}

impl std::error::Error for GenerationFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

pub struct GuidedDecoder<'a> {
    backends: Backends<'a>,
    storyline: Storyline,
    config: DecodingConfig,
    normalizer: &'a dyn WordNormalizer,
}

impl<'a> GuidedDecoder<'a> {
    pub fn new(
        backends: Backends<'a>,
        storyline: Storyline,
        config: DecodingConfig,
        normalizer: &'a dyn WordNormalizer,
    ) -> Result<Self> {
        config.validate()?;
        let ar_size = backends.ar.vocabulary().len();
        if backends.ar_tokenizer.vocabulary().len() != ar_size {
            return Err(Error::InvalidConfig(
                "AR tokenizer and model vocabularies differ in size".into(),
            ));
        }
        if let Some(eos) = backends.eos {
            backends.ar.vocabulary().check_ids(&[eos])?;
        }
        for p in &storyline.phrases {
            backends.ar.vocabulary().check_ids(&p.token_ids)?;
        }
        if config.strategy != Strategy::ArOnly {
            let Some(mlm) = &backends.mlm else {
                return Err(Error::InvalidConfig(format!(
                    "strategy {} needs a masked model",
                    config.strategy
                )));
            };
            let mlm_size = mlm.model.vocabulary().len();
            if mlm.alignment.ar_size != ar_size || mlm.alignment.mlm_size != mlm_size {
                return Err(Error::InvalidConfig(
                    "alignment does not match the model vocabularies".into(),
                ));
            }
            if mlm.tokenizer.is_none() && mlm_size != ar_size {
                return Err(Error::InvalidConfig(
                    "a masked model with its own vocabulary needs its own tokenizer".into(),
                ));
            }
        }
        Ok(Self {
            backends,
            storyline,
            config,
            normalizer,
        })
    }

    pub fn config(&self) -> &DecodingConfig {
        &self.config
    }

    pub fn storyline(&self) -> &Storyline {
        &self.storyline
    }

    pub fn tokenizer(&self) -> &dyn Tokenizer {
        self.backends.ar_tokenizer
    }

    pub fn initial_state(&self, prompt: &str) -> Result<GenerationState> {
        let ids = self.backends.ar_tokenizer.encode(prompt)?;
        if ids.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        Ok(GenerationState::new(ids))
    }

    /// Scores for the next token after `context`, with `pending` as the
    /// right-hand context of the mask and `i`, `i_n` feeding the λ schedule.
    pub fn score_step(
        &self,
        context: &[TokenId],
        pending: Option<&GuidePhrase>,
        i: usize,
        i_n: usize,
    ) -> Result<StepPlan> {
        let cfg = &self.config;
        let ar = log_prob_score(self.backends.ar, context)?;
        let guided = match (cfg.strategy, pending, &self.backends.mlm) {
            (Strategy::ArOnly, _, _) | (_, None, _) | (_, _, None) => None,
            (_, Some(p), Some(mlm)) => Some((p, mlm)),
        };
        let (mlm, fused) = match guided {
            None => (None, ar.clone()),
            Some((phrase, backend)) => {
                let projected = self.masked_contribution(backend, context, phrase)?;
                let fused = fuse_scores(&ar, &projected)?;
                (Some(projected), fused)
            }
        };
        let (final_scores, boost) = match (cfg.strategy, pending) {
            (Strategy::FusionBoost, Some(phrase)) => {
                let lambda = lambda_at_step(cfg.lambda0, i, i_n)?;
                let (boosted, record) =
                    boost_guide_token(&fused, phrase.first_token_id, cfg.k, lambda)?;
                (boosted, Some(record))
            }
            _ => (fused.clone(), None),
        };
        let distribution = top_k_distribution(&final_scores, cfg.k, cfg.temperature)?;
        Ok(StepPlan {
            ar,
            mlm,
            fused,
            boost,
            final_scores,
            distribution,
        })
    }

    fn masked_contribution(
        &self,
        backend: &MaskedBackend<'_>,
        context: &[TokenId],
        phrase: &GuidePhrase,
    ) -> Result<ScoreVector> {
        let (left, right) = match backend.tokenizer {
            None => (context.to_vec(), phrase.token_ids.clone()),
            Some(tok) => {
                let text = self.backends.ar_tokenizer.decode(context)?;
                (
                    tok.encode(&text)?,
                    tok.encode_continuation(&phrase.surface)?,
                )
            }
        };
        let mut scores = masked_score(backend.model, &left, &right, self.config.mlm_scale)?;
        if self.config.renormalize_shared {
            scores = renormalize_shared(&scores, &backend.alignment)?;
        }
        project_scores(&scores, &backend.alignment, self.config.unshared_fill)
    }

    pub fn plan(&self, state: &GenerationState) -> Result<StepPlan> {
        self.score_step(
            &state.context(),
            state.pending_phrase(&self.storyline),
            state.step_i + 1,
            state.last_insertion_step_i_n,
        )
    }

    /// Applies a chosen token: appends it, checks the pending phrase and
    /// splices on a trigger. Returns `None` for the state when the token ends
    /// the text.
    pub fn commit(
        &self,
        state: &GenerationState,
        chosen: TokenId,
    ) -> Result<(Option<GenerationState>, Option<Trigger>, Vec<TokenId>)> {
        if Some(chosen) == self.backends.eos {
            return Ok((None, None, Vec::new()));
        }
        let mut next = state.clone();
        next.push(chosen);
        // the unguided baseline never splices phrases
        if self.config.strategy == Strategy::ArOnly {
            return Ok((Some(next), None, Vec::new()));
        }
        let Some(pending) = next.pending_phrase(&self.storyline) else {
            return Ok((Some(next), None, Vec::new()));
        };
        let generated = self.backends.ar_tokenizer.decode(&next.generated_ids)?;
        let trigger = phrase_trigger(chosen, trailing_word(&generated), pending, self.normalizer);
        let Some(trigger) = trigger else {
            return Ok((Some(next), None, Vec::new()));
        };
        let splice = splice_tokens(pending, trigger, self.backends.ar_tokenizer)?;
        let before = next.generated_ids.len();
        let next = insert_phrase(next, &splice, self.config.max_new_tokens);
        let forced = next.generated_ids[before..].to_vec();
        Ok((Some(next), Some(trigger), forced))
    }

    pub fn step(
        &self,
        state: &GenerationState,
        rng: &mut SessionRng,
    ) -> Result<(Option<GenerationState>, StepDiagnostics)> {
        let step = state.step_i + 1;
        let plan = self.plan(state).map_err(|e| e.at_step(step))?;
        let chosen = plan.distribution.sample(rng);
        let (next, trigger, forced_ids) =
            self.commit(state, chosen).map_err(|e| e.at_step(step))?;
        let diag = self.diagnostics(state, &plan, chosen, trigger, forced_ids, next.is_none());
        Ok((next, diag))
    }

    fn diagnostics(
        &self,
        state: &GenerationState,
        plan: &StepPlan,
        chosen: TokenId,
        trigger: Option<Trigger>,
        forced_ids: Vec<TokenId>,
        end_of_text: bool,
    ) -> StepDiagnostics {
        let vocab = self.backends.ar.vocabulary();
        let top_candidates = plan
            .distribution
            .ids
            .iter()
            .zip(&plan.distribution.probs)
            .map(|(&id, &p)| Candidate {
                token_id: id,
                token: vocab.token(id).unwrap_or_default().to_string(),
                ar_score: plan.ar[id],
                mlm_score: plan.mlm.as_ref().map(|m| m[id]),
                fused_score: plan.final_scores[id],
                probability: p,
            })
            .collect();
        StepDiagnostics {
            step: state.step_i + 1,
            phrase_index: (state.phrase_index < self.storyline.len()).then_some(state.phrase_index),
            top_candidates,
            boosted_token: plan.boost,
            chosen_id: chosen,
            chosen_token: vocab.token(chosen).unwrap_or_default().to_string(),
            trigger,
            forced_ids,
            end_of_text,
        }
    }

    /// Runs until the token budget is spent or end-of-text is sampled.
    pub fn generate(
        &self,
        prompt: &str,
        trace: bool,
    ) -> std::result::Result<GenerationResult, Box<GenerationFailure>> {
        let state = match self.initial_state(prompt) {
            Ok(s) => s,
            Err(error) => {
                return Err(Box::new(GenerationFailure {
                    error,
                    partial: self.empty_result(),
                }))
            }
        };
        self.generate_from(state, trace)
    }

    pub fn generate_from(
        &self,
        mut state: GenerationState,
        trace: bool,
    ) -> std::result::Result<GenerationResult, Box<GenerationFailure>> {
        let mut rng = session_rng(self.config.seed);
        let mut diags = Vec::new();
        let mut stop = StopReason::Budget;
        while state.generated_ids.len() < self.config.max_new_tokens {
            match self.step(&state, &mut rng) {
                Ok((next, diag)) => {
                    if trace {
                        diags.push(diag);
                    }
                    match next {
                        Some(n) => state = n,
                        None => {
                            stop = StopReason::EndOfText;
                            break;
                        }
                    }
                }
                Err(error) => {
                    let partial = self.finish(&state, stop, diags);
                    return Err(Box::new(GenerationFailure { error, partial }));
                }
            }
        }
        Ok(self.finish(&state, stop, diags))
    }

    fn empty_result(&self) -> GenerationResult {
        GenerationResult {
            prompt_ids: Vec::new(),
            generated_ids: Vec::new(),
            text: String::new(),
            generated_text: String::new(),
            insertion_log: Vec::new(),
            stop_reason: StopReason::Budget,
            unmet_phrases: (0..self.storyline.len()).collect(),
            trace: Vec::new(),
        }
    }

    fn finish(
        &self,
        state: &GenerationState,
        stop_reason: StopReason,
        trace: Vec<StepDiagnostics>,
    ) -> GenerationResult {
        let tok = self.backends.ar_tokenizer;
        let text = tok.decode(&state.context()).unwrap_or_default();
        let generated_text = tok.decode(&state.generated_ids).unwrap_or_default();
        let inserted: Vec<usize> = state
            .insertion_log
            .iter()
            .filter(|r| !r.truncated)
            .map(|r| r.phrase_index)
            .collect();
        GenerationResult {
            prompt_ids: state.prompt_ids.clone(),
            generated_ids: state.generated_ids.clone(),
            text,
            generated_text,
            insertion_log: state.insertion_log.clone(),
            stop_reason,
            unmet_phrases: (0..self.storyline.len())
                .filter(|i| !inserted.contains(i))
                .collect(),
            trace,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normalize::{CaseFold, LemmaTable};
    use crate::tokenizer::WordTokenizer;
    use crate::types::Vocabulary;

    fn sv(v: &[f64]) -> ScoreVector {
        ScoreVector::new(v.to_vec()).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn fusion_examples() {
        let f = fuse_scores(&sv(&[0.1, -1.0, 2.0]), &sv(&[1.0, 0.5, -0.5])).unwrap();
        for (got, want) in f.as_slice().iter().zip([1.1, -0.5, 1.5]) {
            assert!(close(*got, want));
        }
        let a = sv(&[0.3, -2.0, 7.5]);
        assert_eq!(fuse_scores(&a, &ScoreVector::zeros(3)).unwrap(), a);
        let flipped = fuse_scores(&sv(&[3.0, 1.0]), &sv(&[0.0, 4.0])).unwrap();
        assert_eq!(flipped.as_slice(), &[3.0, 5.0]);
        assert_eq!(flipped.ranking()[0], 1);
        assert!(fuse_scores(&sv(&[1.0]), &sv(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn lambda_schedule() {
        assert!(close(lambda_at_step(0.3, 7, 2).unwrap(), 1.5));
        assert_eq!(lambda_at_step(0.0, 9, 4).unwrap(), 0.0);
        assert!(close(lambda_at_step(0.5, 1, 0).unwrap(), 0.5));
        let err = lambda_at_step(0.5, 3, 3).unwrap_err();
        assert!(err.to_string().contains("step before last insertion"));
    }

    #[test]
    fn alpha_and_delta() {
        assert!(close(relative_position_alpha(5.0, 0.0, 10.0).unwrap(), 0.5));
        assert!(close(
            relative_position_alpha(10.0, 0.0, 10.0).unwrap(),
            1.0
        ));
        assert_eq!(relative_position_alpha(3.0, 3.0, 3.0).unwrap(), 1.0);
        assert!(relative_position_alpha(11.0, 0.0, 10.0).is_err());
        assert!(close(headroom_delta(10.0, 6.0).unwrap(), 4.0));
        assert_eq!(headroom_delta(10.0, 10.0).unwrap(), 0.0);
        assert!(close(headroom_delta(-1.2, -3.7).unwrap(), 2.5));
        assert!(headroom_delta(1.0, 2.0).is_err());
    }

    #[test]
    fn boost_composite_example() {
        // s_min = 0, s_max = 10, s_K(K=3) = 6, s_w1 = 5
        let fused = sv(&[10.0, 8.0, 6.0, 5.0, 0.0]);
        let (out, rec) = boost_guide_token(&fused, 3, 3, 2.0).unwrap();
        assert_eq!(out[3], 10.0);
        assert_eq!((rec.s_k, rec.alpha, rec.delta), (6.0, 0.5, 4.0));
        assert!(rec.applied);
        for i in [0, 1, 2, 4] {
            assert_eq!(out[i], fused[i]);
        }
        let (out, _) = boost_guide_token(&fused, 3, 3, 0.0).unwrap();
        assert_eq!(out[3], 6.0);
    }

    #[test]
    fn boost_six_token_example() {
        let fused = sv(&[9.0, 7.0, 5.0, 3.0, 1.0, 0.0]);
        let (out, rec) = boost_guide_token(&fused, 4, 3, 1.0).unwrap();
        assert_eq!(rec.s_k, 5.0);
        assert!(close(rec.alpha, 1.0 / 9.0));
        assert_eq!(rec.delta, 4.0);
        assert!(close(out[4], 5.0 + 4.0 / 9.0));
        assert_eq!(out.ranking().iter().position(|&i| i == 4), Some(2));
        assert!(boost_guide_token(&fused, 6, 3, 1.0).is_err());
    }

    #[test]
    fn boost_keeps_naturally_strong_token() {
        let fused = sv(&[9.0, 7.0, 5.0]);
        let (out, rec) = boost_guide_token(&fused, 0, 2, 0.1).unwrap();
        assert_eq!(out[0], 9.0);
        assert!(!rec.applied);
    }

    #[test]
    fn top_k_examples() {
        let d = top_k_distribution(&sv(&[3.0, 1.0, 2.0, 0.0]), 2, 1.0).unwrap();
        assert_eq!(d.ids, vec![0, 2]);
        let e = std::f64::consts::E;
        assert!(close(d.probs[0], e / (e + 1.0)));
        assert!((d.probs[0] - 0.7311).abs() < 1e-4);
        assert!((d.probs[1] - 0.2689).abs() < 1e-4);

        let d = top_k_distribution(&sv(&[1.0, 2.0, 3.0]), 50, 1.0).unwrap();
        assert_eq!(d.ids.len(), 3);

        let d = top_k_distribution(&sv(&[2.0, 2.0, 2.0]), 2, 1.0).unwrap();
        assert_eq!(d.ids, vec![0, 1]);
        assert_eq!(d.probs, vec![0.5, 0.5]);

        assert!(top_k_distribution(&sv(&[]), 1, 1.0).is_err());
        assert!(top_k_distribution(&sv(&[1.0]), 1, 0.0).is_err());
    }

    #[test]
    fn top_k_sampling_frequencies() {
        let scores = sv(&[3.0, 1.0, 2.0, 0.0]);
        let mut rng = session_rng(42);
        let n = 20_000;
        let hits = (0..n)
            .filter(|_| top_k_sample(&scores, 2, 1.0, &mut rng).unwrap() == 0)
            .count();
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.7311).abs() < 0.015, "{freq}");
    }

    #[test]
    fn temperature_sharpens() {
        let s = sv(&[1.0, 0.0]);
        let cold = top_k_distribution(&s, 2, 0.5).unwrap();
        let hot = top_k_distribution(&s, 2, 2.0).unwrap();
        assert!(cold.probs[0] > hot.probs[0]);
    }

    fn phrase(surface: &str, tok: &WordTokenizer) -> GuidePhrase {
        GuidePhrase::new(surface, tok, &CaseFold).unwrap()
    }

    #[test]
    fn trigger_detection() {
        let tok = WordTokenizer::new(
            Vocabulary::new(
                ["a", "Планах", "планы", "b", "c"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
            )
            .unwrap(),
        );
        let p = phrase("планы b", &tok);
        assert!(detect_phrase_trigger(2, Some("планы"), &p, &CaseFold));
        assert!(!detect_phrase_trigger(1, Some("Планах"), &p, &CaseFold));
        let lemmas = LemmaTable::new([("планах", "планы")]);
        assert_eq!(
            phrase_trigger(1, Some("Планах"), &p, &lemmas),
            Some(Trigger::NormalizedWord)
        );
        assert!(!detect_phrase_trigger(0, None, &p, &CaseFold));
        assert_eq!(
            splice_tokens(&p, Trigger::NormalizedWord, &tok).unwrap(),
            vec![3]
        );
    }

    #[test]
    fn insertion_bookkeeping() {
        let mut s = GenerationState::new(vec![0]);
        s.push(1);
        let s = insert_phrase(s, &[2], 90);
        assert_eq!(s.generated_ids, vec![1, 2]);
        assert_eq!(s.step_i, 2);
        assert_eq!(s.last_insertion_step_i_n, 2);
        assert_eq!(s.phrase_index, 1);
        assert_eq!(
            s.insertion_log,
            vec![InsertionRecord {
                phrase_index: 0,
                step: 2,
                truncated: false
            }]
        );
        // λ restarts at λ₀·1 for the next sampled token
        assert!(close(
            lambda_at_step(0.5, s.step_i + 1, s.last_insertion_step_i_n).unwrap(),
            0.5
        ));

        let mut s = GenerationState::new(vec![0]);
        s.push(1);
        let s = insert_phrase(s, &[], 90);
        assert_eq!(s.generated_ids, vec![1]);
        assert_eq!(s.phrase_index, 1);

        let mut s = GenerationState::new(vec![0]);
        s.push(1);
        let s = insert_phrase(s, &[2, 3, 4], 2);
        assert_eq!(s.generated_ids, vec![1, 2]);
        assert!(s.insertion_log[0].truncated);
    }
}
