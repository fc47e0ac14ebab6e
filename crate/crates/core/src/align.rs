//! Token-level mapping between the autoregressive and masked-model vocabularies.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::{ScoreVector, TokenId, Vocabulary};

/// Partial injective map from AR token ids to masked-model token ids whose
/// strings are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentMap {
    ar_to_mlm: Vec<Option<TokenId>>,
    pub shared_count: usize,
    pub ar_size: usize,
    pub mlm_size: usize,
}

impl AlignmentMap {
    pub fn identity(size: usize) -> Self {
        Self {
            ar_to_mlm: (0..size).map(Some).collect(),
            shared_count: size,
            ar_size: size,
            mlm_size: size,
        }
    }

    pub fn get(&self, ar_id: TokenId) -> Option<TokenId> {
        self.ar_to_mlm.get(ar_id).copied().flatten()
    }

    pub fn is_identity(&self) -> bool {
        self.ar_size == self.mlm_size
            && self
                .ar_to_mlm
                .iter()
                .enumerate()
                .all(|(a, m)| *m == Some(a))
    }

    /// Mapped `(ar_id, mlm_id)` pairs in AR id order.
    pub fn pairs(&self) -> impl Iterator<Item = (TokenId, TokenId)> + '_ {
        self.ar_to_mlm
            .iter()
            .enumerate()
            .filter_map(|(a, m)| m.map(|m| (a, m)))
    }

    /// Proportion of AR tokens that also exist in the masked vocabulary.
    pub fn shared_fraction(&self) -> f64 {
        self.shared_count as f64 / self.ar_size as f64
    }
}

pub fn build_alignment(ar_vocab: &Vocabulary, mlm_vocab: &Vocabulary) -> Result<AlignmentMap> {
    if ar_vocab.is_empty() || mlm_vocab.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let mlm_index: HashMap<&str, TokenId> = mlm_vocab
        .tokens()
        .iter()
        .enumerate()
        .map(|(id, t)| (t.as_str(), id))
        .collect();
    let ar_to_mlm: Vec<Option<TokenId>> = ar_vocab
        .tokens()
        .iter()
        .map(|t| mlm_index.get(t.as_str()).copied())
        .collect();
    let shared_count = ar_to_mlm.iter().flatten().count();
    Ok(AlignmentMap {
        ar_to_mlm,
        shared_count,
        ar_size: ar_vocab.len(),
        mlm_size: mlm_vocab.len(),
    })
}

/// Relabels masked-model scores onto AR ids. Unmapped AR ids get `fill`.
pub fn project_scores(
    mlm_scores: &ScoreVector,
    map: &AlignmentMap,
    fill: f64,
) -> Result<ScoreVector> {
    mlm_scores.check_len(map.mlm_size)?;
    let values = map
        .ar_to_mlm
        .iter()
        .map(|m| m.map_or(fill, |m| mlm_scores[m]))
        .collect();
    ScoreVector::new(values)
}

/// Log-softmax restricted to the masked ids that have an AR counterpart.
pub fn renormalize_shared(mlm_scores: &ScoreVector, map: &AlignmentMap) -> Result<ScoreVector> {
    mlm_scores.check_len(map.mlm_size)?;
    let shared: Vec<TokenId> = map.pairs().map(|(_, m)| m).collect();
    if shared.is_empty() {
        return Ok(mlm_scores.clone());
    }
    let max = shared
        .iter()
        .map(|&m| mlm_scores[m])
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = max
        + shared
            .iter()
            .map(|&m| (mlm_scores[m] - max).exp())
            .sum::<f64>()
            .ln();
    ScoreVector::new(mlm_scores.as_slice().iter().map(|v| v - lse).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab(tokens: &[&str]) -> Vocabulary {
        Vocabulary::new(tokens.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    fn sv(v: &[f64]) -> ScoreVector {
        ScoreVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn identical_vocabularies() {
        let v = vocab(&["a", "b", "c"]);
        let map = build_alignment(&v, &v).unwrap();
        assert_eq!(map.shared_count, 3);
        assert!(map.is_identity());
        assert_eq!(map, AlignmentMap::identity(3));
    }

    #[test]
    fn partial_overlap() {
        let map = build_alignment(&vocab(&["a", "b", "c"]), &vocab(&["b", "c", "d"])).unwrap();
        assert_eq!(map.pairs().collect::<Vec<_>>(), vec![(1, 0), (2, 1)]);
        assert_eq!(map.shared_count, 2);
        assert_eq!(map.get(0), None);
    }

    #[test]
    fn matching_is_byte_exact() {
        let map = build_alignment(&vocab(&["Ġcity", "city"]), &vocab(&["City", "Ġcity"])).unwrap();
        assert_eq!(map.pairs().collect::<Vec<_>>(), vec![(0, 1)]);
    }

    #[test]
    fn projection_examples() {
        let id = AlignmentMap::identity(3);
        assert_eq!(
            project_scores(&sv(&[1.0, 2.0, 3.0]), &id, 0.0).unwrap(),
            sv(&[1.0, 2.0, 3.0])
        );

        let map = build_alignment(&vocab(&["a", "b", "c"]), &vocab(&["b", "c", "d"])).unwrap();
        assert_eq!(
            project_scores(&sv(&[5.0, 7.0, 9.0]), &map, 0.0).unwrap(),
            sv(&[0.0, 5.0, 7.0])
        );

        let map = build_alignment(&vocab(&["a", "x"]), &vocab(&["a", "b"])).unwrap();
        assert_eq!(
            project_scores(&sv(&[2.0, 1.0]), &map, -4.0).unwrap(),
            sv(&[2.0, -4.0])
        );

        let err = project_scores(&sv(&[1.0]), &map, 0.0).unwrap_err();
        assert!(err.to_string().contains("score/vocabulary size mismatch"));
    }

    #[test]
    fn shared_renormalization_sums_to_one() {
        let map = build_alignment(&vocab(&["a", "b", "c"]), &vocab(&["b", "c", "d"])).unwrap();
        let s = renormalize_shared(&sv(&[-1.0, -2.0, -0.5]), &map).unwrap();
        let mass: f64 = [0, 1].iter().map(|&m| s[m].exp()).sum();
        assert!((mass - 1.0).abs() < 1e-12);
    }

    fn vocab_strategy() -> impl Strategy<Value = Vocabulary> {
        proptest::collection::btree_set("[a-f]{1,2}", 1..20)
            .prop_map(|set| Vocabulary::new(set.into_iter().collect()).unwrap())
    }

    proptest! {
        #[test]
        fn overlap_is_symmetric(a in vocab_strategy(), b in vocab_strategy()) {
            let ab = build_alignment(&a, &b).unwrap();
            let ba = build_alignment(&b, &a).unwrap();
            prop_assert_eq!(ab.shared_count, ba.shared_count);
            prop_assert!(ab.shared_count <= a.len().min(b.len()));
        }

        #[test]
        fn alignment_is_injective_and_exact(a in vocab_strategy(), b in vocab_strategy()) {
            let map = build_alignment(&a, &b).unwrap();
            let mut targets: Vec<_> = map.pairs().map(|(_, m)| m).collect();
            for (x, m) in map.pairs() {
                prop_assert_eq!(a.token(x), b.token(m));
            }
            let n = targets.len();
            targets.sort();
            targets.dedup();
            prop_assert_eq!(targets.len(), n);
        }

        #[test]
        fn projection_preserves_mapped_values(
            a in vocab_strategy(),
            b in vocab_strategy(),
            seed in any::<u64>(),
        ) {
            let map = build_alignment(&a, &b).unwrap();
            let scores: Vec<f64> = (0..b.len())
                .map(|i| ((seed.wrapping_mul(i as u64 + 1) % 1000) as f64) / -100.0)
                .collect();
            let scores = ScoreVector::new(scores).unwrap();
            let out = project_scores(&scores, &map, 0.0).unwrap();
            prop_assert_eq!(out.len(), a.len());
            for (x, m) in map.pairs() {
                prop_assert_eq!(out[x], scores[m]);
            }
        }
    }
}
