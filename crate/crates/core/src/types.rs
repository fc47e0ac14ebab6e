//! Value types shared across the engine: vocabularies, score vectors,
//! guide phrases, decoding configuration and per-session generation state.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normalize::WordNormalizer;
use crate::tokenizer::Tokenizer;

pub type TokenId = usize;

/// Ordered, duplicate-free list of token strings. A token's id is its position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::NonUniqueVocabulary(tok.clone()));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Reads a JSON array of token strings in id order.
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let tokens: Vec<String> = serde_json::from_str(text)?;
        Self::new(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn check_ids(&self, ids: &[TokenId]) -> Result<()> {
        match ids.iter().find(|&&id| id >= self.len()) {
            Some(&id) => Err(Error::UnknownTokenId {
                id,
                size: self.len(),
            }),
            None => Ok(()),
        }
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(d)?;
        Vocabulary::new(tokens).map_err(serde::de::Error::custom)
    }
}

/// Dense per-token scores on a log scale. Every entry is finite.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ScoreVector {
    values: Vec<f64>,
}

impl ScoreVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { values })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    /// Natural-log of a probability row. Zero probabilities are rejected
    /// because they have no finite log.
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        Self::new(probs.iter().map(|p| p.ln()).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, id: TokenId) -> Option<f64> {
        self.values.get(id).copied()
    }

    pub(crate) fn set(&mut self, id: TokenId, value: f64) {
        self.values[id] = value;
    }

    pub fn check_len(&self, expected: usize) -> Result<()> {
        if self.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                actual: self.len(),
            });
        }
        Ok(())
    }

    /// `log_softmax` of the vector, computed with the max-shift trick.
    pub fn log_softmax(&self) -> ScoreVector {
        let max = self
            .values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = max
            + self
                .values
                .iter()
                .map(|v| (v - max).exp())
                .sum::<f64>()
                .ln();
        ScoreVector {
            values: self.values.iter().map(|v| v - lse).collect(),
        }
    }

    pub fn exp_sum(&self) -> f64 {
        self.values.iter().map(|v| v.exp()).sum()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Token ids ordered by score descending, ties by ascending id.
    pub fn ranking(&self) -> Vec<TokenId> {
        let mut ids: Vec<TokenId> = (0..self.values.len()).collect();
        ids.sort_by(|&a, &b| self.values[b].total_cmp(&self.values[a]).then(a.cmp(&b)));
        ids
    }

    /// The `k` best token ids (clamped to the vector length) in ranking order.
    pub fn top_k(&self, k: usize) -> Vec<TokenId> {
        let k = k.min(self.values.len());
        let mut ranked = self.ranking();
        ranked.truncate(k);
        ranked
    }
}

impl std::ops::Index<TokenId> for ScoreVector {
    type Output = f64;

    fn index(&self, id: TokenId) -> &f64 {
        &self.values[id]
    }
}

/// A guide expression that must appear in the generated text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidePhrase {
    pub surface: String,
    pub token_ids: Vec<TokenId>,
    pub first_token_id: TokenId,
    pub normalized_first_word: String,
    /// Normalized form of every word, used for text-occurrence checks.
    pub normalized_words: Vec<String>,
}

impl GuidePhrase {
    /// Tokenizes `surface` as a continuation of running text.
    pub fn new(
        surface: &str,
        tokenizer: &dyn Tokenizer,
        normalizer: &dyn WordNormalizer,
    ) -> Result<Self> {
        let surface = surface.trim();
        let words: Vec<&str> = surface.split_whitespace().collect();
        if words.is_empty() {
            return Err(Error::EmptyPhrase);
        }
        let token_ids = tokenizer.encode_continuation(surface)?;
        let Some(&first_token_id) = token_ids.first() else {
            return Err(Error::EmptyPhrase);
        };
        let normalized_words = words
            .iter()
            .map(|w| normalizer.normalize(w))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            surface: surface.to_string(),
            token_ids,
            first_token_id,
            normalized_first_word: normalized_words[0].clone(),
            normalized_words,
        })
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.surface.split_whitespace()
    }
}

/// Guide phrases consumed left to right during one generation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Storyline {
    pub phrases: Vec<GuidePhrase>,
}

impl Storyline {
    pub fn new(phrases: Vec<GuidePhrase>) -> Self {
        Self { phrases }
    }

    pub fn from_surfaces<S: AsRef<str>>(
        surfaces: &[S],
        tokenizer: &dyn Tokenizer,
        normalizer: &dyn WordNormalizer,
    ) -> Result<Self> {
        let phrases = surfaces
            .iter()
            .map(|s| GuidePhrase::new(s.as_ref(), tokenizer, normalizer))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { phrases })
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&GuidePhrase> {
        self.phrases.get(index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Plain top-K sampling from the autoregressive model.
    #[serde(rename = "ar", alias = "AR_ONLY")]
    ArOnly,
    /// AR scores plus masked-model scores.
    #[serde(rename = "fusion", alias = "FUSION")]
    Fusion,
    /// Fusion plus the guide-token boost.
    #[serde(rename = "boost", alias = "FUSION_BOOST")]
    FusionBoost,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::ArOnly, Strategy::Fusion, Strategy::FusionBoost];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::ArOnly => "ar",
            Strategy::Fusion => "fusion",
            Strategy::FusionBoost => "boost",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ar" | "AR_ONLY" => Ok(Strategy::ArOnly),
            "fusion" | "FUSION" => Ok(Strategy::Fusion),
            "boost" | "FUSION_BOOST" => Ok(Strategy::FusionBoost),
            other => Err(Error::InvalidConfig(format!("unknown strategy {other:?}"))),
        }
    }
}

/// How masked-model outputs enter the fusion sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlmScoreScale {
    /// Log-probabilities (log-softmax applied when the backend emits logits).
    #[default]
    LogProb,
    /// Backend output used as-is.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodingConfig {
    pub strategy: Strategy,
    pub k: usize,
    pub lambda0: f64,
    pub max_new_tokens: usize,
    pub seed: u64,
    pub temperature: f64,
    pub mlm_scale: MlmScoreScale,
    /// Masked-model contribution for AR tokens with no masked-model counterpart.
    pub unshared_fill: f64,
    /// Re-normalize masked-model log-probabilities over the shared tokens.
    pub renormalize_shared: bool,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::FusionBoost,
            k: 10,
            lambda0: 0.3,
            max_new_tokens: 90,
            seed: 0,
            temperature: 1.0,
            mlm_scale: MlmScoreScale::LogProb,
            unshared_fill: 0.0,
            renormalize_shared: false,
        }
    }
}

impl DecodingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if !(self.lambda0 >= 0.0 && self.lambda0.is_finite()) {
            return Err(Error::InvalidConfig(
                "lambda0 must be a non-negative real".into(),
            ));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::InvalidConfig(
                "max_new_tokens must be positive".into(),
            ));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig("temperature must be positive".into()));
        }
        if !self.unshared_fill.is_finite() {
            return Err(Error::InvalidConfig("unshared_fill must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsertionRecord {
    pub phrase_index: usize,
    pub step: usize,
    /// Set when the token budget cut the splice short.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationState {
    pub prompt_ids: Vec<TokenId>,
    pub generated_ids: Vec<TokenId>,
    /// Generated tokens so far, spliced ones included.
    pub step_i: usize,
    pub phrase_index: usize,
    pub last_insertion_step_i_n: usize,
    pub insertion_log: Vec<InsertionRecord>,
}

impl GenerationState {
    pub fn new(prompt_ids: Vec<TokenId>) -> Self {
        Self {
            prompt_ids,
            generated_ids: Vec::new(),
            step_i: 0,
            phrase_index: 0,
            last_insertion_step_i_n: 0,
            insertion_log: Vec::new(),
        }
    }

    pub fn context(&self) -> Vec<TokenId> {
        let mut ctx = Vec::with_capacity(self.prompt_ids.len() + self.generated_ids.len());
        ctx.extend_from_slice(&self.prompt_ids);
        ctx.extend_from_slice(&self.generated_ids);
        ctx
    }

    pub fn pending_phrase<'a>(&self, storyline: &'a Storyline) -> Option<&'a GuidePhrase> {
        storyline.get(self.phrase_index)
    }

    pub(crate) fn push(&mut self, id: TokenId) {
        self.generated_ids.push(id);
        self.step_i = self.generated_ids.len();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_rejects_duplicates() {
        let err = Vocabulary::new(vec!["a".into(), "b".into(), "a".into()]).unwrap_err();
        assert!(matches!(err, Error::NonUniqueVocabulary(ref t) if t == "a"));
        assert!(err.to_string().contains("non-unique vocabulary"));
    }

    #[test]
    fn vocabulary_json_roundtrip() {
        let v = Vocabulary::from_json_str(r#"["x","y","Ġz"]"#).unwrap();
        assert_eq!(v.id("Ġz"), Some(2));
        assert_eq!(v.token(1), Some("y"));
        assert_eq!(serde_json::to_string(&v).unwrap(), r#"["x","y","Ġz"]"#);
        assert!(v.check_ids(&[0, 3]).is_err());
    }

    #[test]
    fn score_vector_rejects_non_finite() {
        assert!(matches!(
            ScoreVector::new(vec![0.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(ScoreVector::from_probs(&[0.5, 0.0]).is_err());
    }

    #[test]
    fn ranking_breaks_ties_by_id() {
        let s = ScoreVector::new(vec![2.0, 3.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.ranking(), vec![1, 3, 0, 2]);
        assert_eq!(s.top_k(10), vec![1, 3, 0, 2]);
    }

    #[test]
    fn config_defaults() {
        let c = DecodingConfig::default();
        assert_eq!((c.k, c.max_new_tokens, c.lambda0), (10, 90, 0.3));
        assert!(DecodingConfig { k: 0, ..c.clone() }.validate().is_err());
        assert!(DecodingConfig {
            temperature: 0.0,
            ..c
        }
        .validate()
        .is_err());
    }

    #[test]
    fn strategy_names() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
        assert!("beam".parse::<Strategy>().is_err());
        assert_eq!(
            serde_json::to_string(&Strategy::FusionBoost).unwrap(),
            "\"boost\""
        );
    }
}
