//! Table-driven toy backends and a brute-force decoding oracle.
//!
//! Toy models are loaded from a JSON fixture:
//!
//! ```json
//! {
//!   "vocabulary": ["A", "B", "C", "D"],
//!   "eos": null,
//!   "ar": {
//!     "order": 1,
//!     "rows": [{"context": ["A"], "probs": {"A": 0.1, "B": 0.2, "C": 0.3, "D": 0.4}}],
//!     "default": [0.25, 0.25, 0.25, 0.25]
//!   },
//!   "mlm": {
//!     "rows": [
//!       {"left": "A", "right": "C", "probs": [0.1, 0.6, 0.2, 0.1]},
//!       {"left": "*", "right": "B", "probs": [0.4, 0.1, 0.4, 0.1]}
//!     ],
//!     "default": [0.25, 0.25, 0.25, 0.25]
//!   }
//! }
//! ```
//!
//! A probability row is either an array in id order or an object keyed by
//! token. Rows must be strictly positive and sum to 1. Masked-model rows are
//! keyed by the token left of the mask and the first token right of it;
//! `null` means no token on that side and `"*"` matches any.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{AutoregressiveModel, MaskedModel};
use crate::tokenizer::WordTokenizer;
use crate::types::{
    DecodingConfig, GenerationState, ScoreVector, Storyline, Strategy, TokenId, Vocabulary,
};

const ROW_TOLERANCE: f64 = 1e-9;

/// Same log-probability for every token regardless of context.
#[derive(Debug, Clone)]
pub struct UniformModel {
    vocab: Vocabulary,
}

impl UniformModel {
    pub fn new(size: usize) -> Self {
        let tokens = (0..size).map(|i| format!("t{i}")).collect();
        Self {
            vocab: Vocabulary::new(tokens).expect("non-empty vocabulary"),
        }
    }

    pub fn with_vocabulary(vocab: Vocabulary) -> Self {
        Self { vocab }
    }

    fn row(&self) -> Result<ScoreVector> {
        let lp = -(self.vocab.len() as f64).ln();
        ScoreVector::new(vec![lp; self.vocab.len()])
    }
}

impl AutoregressiveModel for UniformModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn score(&self, _context: &[TokenId]) -> Result<ScoreVector> {
        self.row()
    }
}

impl MaskedModel for UniformModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn score_masked(&self, _left: &[TokenId], _right: &[TokenId]) -> Result<ScoreVector> {
        self.row()
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum RowSpec {
    Dense(Vec<f64>),
    Keyed(BTreeMap<String, f64>),
}

impl RowSpec {
    fn resolve(&self, vocab: &Vocabulary) -> Result<Vec<f64>> {
        let probs = match self {
            RowSpec::Dense(v) => v.clone(),
            RowSpec::Keyed(map) => {
                let mut row = vec![f64::NAN; vocab.len()];
                for (tok, &p) in map {
                    let id = vocab
                        .id(tok)
                        .ok_or_else(|| Error::UnknownToken(tok.clone()))?;
                    row[id] = p;
                }
                row
            }
        };
        check_row(&probs, vocab.len())?;
        Ok(probs)
    }
}

fn check_row(probs: &[f64], size: usize) -> Result<()> {
    if probs.len() != size {
        return Err(Error::InvalidModel(format!(
            "probability row has {} entries, vocabulary has {size}",
            probs.len()
        )));
    }
    if probs.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
        return Err(Error::InvalidModel(
            "probabilities must be finite and strictly positive".into(),
        ));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > ROW_TOLERANCE {
        return Err(Error::InvalidModel(format!(
            "probability row sums to {sum}"
        )));
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct ArRowSpec {
    context: Vec<String>,
    probs: RowSpec,
}

#[derive(Debug, Deserialize)]
struct ArSpec {
    order: usize,
    #[serde(default)]
    rows: Vec<ArRowSpec>,
    default: Option<RowSpec>,
}

#[derive(Debug, Deserialize)]
struct MlmRowSpec {
    left: Option<String>,
    right: Option<String>,
    probs: RowSpec,
}

#[derive(Debug, Deserialize)]
struct MlmSpec {
    vocabulary: Option<Vec<String>>,
    #[serde(default)]
    rows: Vec<MlmRowSpec>,
    default: RowSpec,
}

#[derive(Debug, Deserialize)]
struct FixtureSpec {
    vocabulary: Vec<String>,
    eos: Option<String>,
    unk: Option<String>,
    ar: Option<ArSpec>,
    mlm: Option<MlmSpec>,
}

/// n-gram table model with a context window of 0, 1 or 2 tokens.
#[derive(Debug, Clone)]
pub struct TableArModel {
    vocab: Vocabulary,
    order: usize,
    rows: HashMap<Vec<TokenId>, Vec<f64>>,
    default: Option<Vec<f64>>,
}

impl TableArModel {
    pub fn new(
        vocab: Vocabulary,
        order: usize,
        rows: HashMap<Vec<TokenId>, Vec<f64>>,
        default: Option<Vec<f64>>,
    ) -> Result<Self> {
        if order > 2 {
            return Err(Error::InvalidModel("order must be 0, 1 or 2".into()));
        }
        for (ctx, row) in &rows {
            if ctx.len() > order {
                return Err(Error::InvalidModel(format!(
                    "context {ctx:?} longer than order {order}"
                )));
            }
            vocab.check_ids(ctx)?;
            check_row(row, vocab.len())?;
        }
        if let Some(row) = &default {
            check_row(row, vocab.len())?;
        } else {
            // every context reachable from the start must have a row
            let mut contexts: Vec<Vec<TokenId>> = vec![vec![]];
            for len in 1..=order {
                let prev: Vec<_> = contexts
                    .iter()
                    .filter(|c| c.len() == len - 1)
                    .cloned()
                    .collect();
                for c in prev {
                    for t in 0..vocab.len() {
                        let mut c2 = c.clone();
                        c2.push(t);
                        contexts.push(c2);
                    }
                }
            }
            if let Some(missing) = contexts.iter().find(|c| !rows.contains_key(*c)) {
                return Err(Error::InvalidModel(format!(
                    "no row for context {missing:?} and no default row"
                )));
            }
        }
        Ok(Self {
            vocab,
            order,
            rows,
            default,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        ToyFixture::from_json_str(text)?
            .ar
            .ok_or_else(|| Error::InvalidModel("fixture has no \"ar\" section".into()))
    }

    /// Random strictly-positive rows for every context; reproducible by seed.
    pub fn pseudo_random(size: usize, order: usize, seed: u64) -> Self {
        let vocab = Vocabulary::new((0..size).map(|i| format!("w{i}")).collect()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = HashMap::new();
        let mut frontier: Vec<Vec<TokenId>> = vec![vec![]];
        for len in 0..=order {
            for ctx in &frontier {
                rows.insert(ctx.clone(), random_row(&mut rng, size));
            }
            if len < order {
                frontier = frontier
                    .iter()
                    .flat_map(|c| (0..size).map(move |t| [c.as_slice(), &[t]].concat()))
                    .collect();
            }
        }
        Self::new(vocab, order, rows, None).unwrap()
    }

    fn key<'c>(&self, context: &'c [TokenId]) -> &'c [TokenId] {
        &context[context.len().saturating_sub(self.order)..]
    }

    fn row(&self, context: &[TokenId]) -> Result<&[f64]> {
        self.rows
            .get(self.key(context))
            .or(self.default.as_ref())
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InvalidModel(format!("no row for context {context:?}")))
    }

    /// Direct table lookup of `p(token | context)`.
    pub fn probability(&self, context: &[TokenId], token: TokenId) -> f64 {
        self.row(context).map(|r| r[token]).unwrap_or(0.0)
    }
}

fn random_row(rng: &mut ChaCha8Rng, size: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..size).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

impl AutoregressiveModel for TableArModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn score(&self, context: &[TokenId]) -> Result<ScoreVector> {
        ScoreVector::from_probs(self.row(context)?)
    }
}

/// One side of a masked-model table key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MlmSide {
    /// No context on this side of the mask.
    Absent,
    Token(TokenId),
    /// Matches anything (`"*"` in fixtures).
    Any,
}

impl MlmSide {
    fn of(id: Option<TokenId>) -> Self {
        id.map_or(MlmSide::Absent, MlmSide::Token)
    }
}

/// Masked-position table keyed by the token left of the mask and the token
/// right of it. Lookup tries `(left, right)`, then `(*, right)`, then
/// `(left, *)`, then the default row.
#[derive(Debug, Clone)]
pub struct TableMlmModel {
    vocab: Vocabulary,
    rows: HashMap<(MlmSide, MlmSide), Vec<f64>>,
    default: Vec<f64>,
}

impl TableMlmModel {
    pub fn new(
        vocab: Vocabulary,
        rows: HashMap<(MlmSide, MlmSide), Vec<f64>>,
        default: Vec<f64>,
    ) -> Result<Self> {
        check_row(&default, vocab.len())?;
        for ((l, r), row) in &rows {
            for side in [l, r] {
                if let MlmSide::Token(id) = side {
                    vocab.check_ids(&[*id])?;
                }
            }
            check_row(row, vocab.len())?;
        }
        Ok(Self {
            vocab,
            rows,
            default,
        })
    }

    pub fn pseudo_random(size: usize, seed: u64) -> Self {
        let vocab = Vocabulary::new((0..size).map(|i| format!("w{i}")).collect()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sides: Vec<MlmSide> = std::iter::once(MlmSide::Absent)
            .chain((0..size).map(MlmSide::Token))
            .collect();
        let mut rows = HashMap::new();
        for &l in &sides {
            for &r in &sides {
                rows.insert((l, r), random_row(&mut rng, size));
            }
        }
        let default = random_row(&mut rng, size);
        Self::new(vocab, rows, default).unwrap()
    }

    pub fn probability(&self, left: &[TokenId], right: &[TokenId], token: TokenId) -> f64 {
        self.row(left, right)[token]
    }

    fn row(&self, left: &[TokenId], right: &[TokenId]) -> &[f64] {
        let l = MlmSide::of(left.last().copied());
        let r = MlmSide::of(right.first().copied());
        [(l, r), (MlmSide::Any, r), (l, MlmSide::Any)]
            .iter()
            .find_map(|k| self.rows.get(k))
            .unwrap_or(&self.default)
    }
}

impl MaskedModel for TableMlmModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn score_masked(&self, left: &[TokenId], right: &[TokenId]) -> Result<ScoreVector> {
        ScoreVector::from_probs(self.row(left, right))
    }
}

/// A parsed fixture file: vocabulary, optional end-of-text and unknown
/// tokens, and whichever of the two models it defines.
#[derive(Debug, Clone)]
pub struct ToyFixture {
    pub vocabulary: Vocabulary,
    pub eos: Option<TokenId>,
    pub unk: Option<TokenId>,
    pub ar: Option<TableArModel>,
    pub mlm: Option<TableMlmModel>,
}

impl ToyFixture {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: FixtureSpec = serde_json::from_str(text)?;
        let vocabulary = Vocabulary::new(spec.vocabulary)?;
        if vocabulary
            .tokens()
            .iter()
            .any(|t| t.chars().any(char::is_whitespace))
        {
            return Err(Error::InvalidModel(
                "toy tokens must not contain whitespace".into(),
            ));
        }
        let lookup = |name: &Option<String>, v: &Vocabulary| -> Result<Option<TokenId>> {
            name.as_ref()
                .map(|t| v.id(t).ok_or_else(|| Error::UnknownToken(t.clone())))
                .transpose()
        };
        let side = |name: &Option<String>, v: &Vocabulary| -> Result<MlmSide> {
            match name.as_deref() {
                Some("*") => Ok(MlmSide::Any),
                other => Ok(MlmSide::of(lookup(&other.map(String::from), v)?)),
            }
        };
        let eos = lookup(&spec.eos, &vocabulary)?;
        let unk = lookup(&spec.unk, &vocabulary)?;

        let ar = match spec.ar {
            None => None,
            Some(ar) => {
                let mut rows = HashMap::new();
                for r in &ar.rows {
                    let ctx = r
                        .context
                        .iter()
                        .map(|t| {
                            vocabulary
                                .id(t)
                                .ok_or_else(|| Error::UnknownToken(t.clone()))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    if rows.insert(ctx, r.probs.resolve(&vocabulary)?).is_some() {
                        return Err(Error::InvalidModel(format!(
                            "duplicate row for context {:?}",
                            r.context
                        )));
                    }
                }
                let default = ar
                    .default
                    .as_ref()
                    .map(|d| d.resolve(&vocabulary))
                    .transpose()?;
                Some(TableArModel::new(
                    vocabulary.clone(),
                    ar.order,
                    rows,
                    default,
                )?)
            }
        };

        let mlm = match spec.mlm {
            None => None,
            Some(mlm) => {
                let vocab = match mlm.vocabulary {
                    Some(tokens) => Vocabulary::new(tokens)?,
                    None => vocabulary.clone(),
                };
                let mut rows = HashMap::new();
                for r in &mlm.rows {
                    let l = side(&r.left, &vocab)?;
                    let rt = side(&r.right, &vocab)?;
                    if rows.insert((l, rt), r.probs.resolve(&vocab)?).is_some() {
                        return Err(Error::InvalidModel(format!(
                            "duplicate row for ({:?}, {:?})",
                            r.left, r.right
                        )));
                    }
                }
                let default = mlm.default.resolve(&vocab)?;
                Some(TableMlmModel::new(vocab, rows, default)?)
            }
        };

        Ok(Self {
            vocabulary,
            eos,
            unk,
            ar,
            mlm,
        })
    }

    pub fn tokenizer(&self) -> WordTokenizer {
        match self.unk {
            Some(unk) => WordTokenizer::with_unk(self.vocabulary.clone(), unk).unwrap(),
            None => WordTokenizer::new(self.vocabulary.clone()),
        }
    }

    /// Tokenizer over the masked model's vocabulary, or `None` when it shares
    /// the AR vocabulary.
    pub fn mlm_tokenizer(&self) -> Option<WordTokenizer> {
        let mlm = self.mlm.as_ref()?;
        if mlm.vocab == self.vocabulary {
            return None;
        }
        let unk = self
            .unk
            .and_then(|u| mlm.vocab.id(self.vocabulary.token(u)?));
        Some(match unk {
            Some(u) => WordTokenizer::with_unk(mlm.vocab.clone(), u).unwrap(),
            None => WordTokenizer::new(mlm.vocab.clone()),
        })
    }
}

/// Exact sampling distribution (dense over the AR vocabulary) that the
/// guided decoder should use at `state`, recomputed from the model outputs by
/// full enumeration and naive sorting.
///
/// The masked model's ids are found by token string, so every AR token in
/// the context and the pending phrase must exist in its vocabulary.
pub fn oracle_step_distribution(
    state: &GenerationState,
    ar: &dyn AutoregressiveModel,
    mlm: Option<&dyn MaskedModel>,
    storyline: &Storyline,
    config: &DecodingConfig,
) -> Vec<f64> {
    let ar_vocab = ar.vocabulary();
    let n = ar_vocab.len();
    let context: Vec<TokenId> = state
        .prompt_ids
        .iter()
        .chain(&state.generated_ids)
        .copied()
        .collect();

    let mut scores = ar.score(&context).expect("AR scores").into_vec();
    if !ar.normalized() {
        scores = naive_log_softmax(&scores);
    }

    let pending = storyline.phrases.get(state.phrase_index);
    if let (Some(phrase), Some(mlm), true) = (pending, mlm, config.strategy != Strategy::ArOnly) {
        let mlm_vocab = mlm.vocabulary();
        let to_mlm = |id: &TokenId| -> TokenId {
            let s = ar_vocab.token(*id).unwrap();
            mlm_vocab
                .id(s)
                .expect("oracle needs every context token in the masked vocabulary")
        };
        let left: Vec<TokenId> = context.iter().map(to_mlm).collect();
        let right: Vec<TokenId> = phrase.token_ids.iter().map(to_mlm).collect();
        let mut masked = mlm
            .score_masked(&left, &right)
            .expect("MLM scores")
            .into_vec();
        if config.mlm_scale == crate::types::MlmScoreScale::LogProb && !mlm.normalized() {
            masked = naive_log_softmax(&masked);
        }
        if config.renormalize_shared {
            let shared: Vec<usize> = (0..masked.len())
                .filter(|&m| ar_vocab.id(mlm_vocab.token(m).unwrap()).is_some())
                .collect();
            if !shared.is_empty() {
                let mass: f64 = shared.iter().map(|&m| masked[m].exp()).sum();
                let log_mass = mass.ln();
                masked.iter_mut().for_each(|v| *v -= log_mass);
            }
        }
        for (a, score) in scores.iter_mut().enumerate() {
            *score += match mlm_vocab.id(ar_vocab.token(a).unwrap()) {
                Some(m) => masked[m],
                None => config.unshared_fill,
            };
        }
    }

    let kk = config.k.min(n);
    if let (Some(phrase), Strategy::FusionBoost) = (pending, config.strategy) {
        let sorted = sorted_desc(&scores);
        let s_k = sorted[kk - 1].0;
        let s_min = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let s_max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w1 = phrase.first_token_id;
        let s_w1 = scores[w1];
        let alpha = if s_max == s_min {
            1.0
        } else {
            (s_w1 - s_min) / (s_max - s_min)
        };
        let delta = s_max - s_k;
        let i = (state.step_i + 1) as f64;
        let lambda = config.lambda0 * (i - state.last_insertion_step_i_n as f64);
        let boosted = s_k + lambda * alpha * delta;
        if boosted > s_w1 {
            scores[w1] = boosted;
        }
    }

    let top: Vec<(f64, TokenId)> = sorted_desc(&scores).into_iter().take(kk).collect();
    let weights: Vec<f64> = top
        .iter()
        .map(|(s, _)| (s / config.temperature).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut dist = vec![0.0; n];
    for ((_, id), w) in top.iter().zip(weights) {
        dist[*id] = w / total;
    }
    dist
}

fn naive_log_softmax(v: &[f64]) -> Vec<f64> {
    let lse = v.iter().map(|x| x.exp()).sum::<f64>().ln();
    v.iter().map(|x| x - lse).collect()
}

/// `(score, id)` pairs sorted by score descending, then id ascending.
fn sorted_desc(scores: &[f64]) -> Vec<(f64, TokenId)> {
    let mut pairs: Vec<(f64, TokenId)> = scores.iter().copied().zip(0..).collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    pairs
}
