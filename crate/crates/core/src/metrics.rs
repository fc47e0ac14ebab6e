//! Perplexity, repetition and success rate, plus mean ± std aggregation.

use std::collections::HashSet;
use std::fmt;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::decoder::GenerationResult;
use crate::error::{Error, Result};
use crate::model::ScorerModel;
use crate::normalize::{words, WordNormalizer};
use crate::types::{InsertionRecord, Storyline, Strategy, TokenId};

pub const DEFAULT_NGRAM: usize = 4;

/// `exp(−mean log p)` over `ids` scored from an empty context.
pub fn perplexity<S: ScorerModel + ?Sized>(ids: &[TokenId], scorer: &S) -> Result<f64> {
    conditional_perplexity(&[], ids, scorer)
}

/// Perplexity of `ids` given a conditioning prefix that is not itself scored.
pub fn conditional_perplexity<S: ScorerModel + ?Sized>(
    context: &[TokenId],
    ids: &[TokenId],
    scorer: &S,
) -> Result<f64> {
    if ids.is_empty() {
        return Err(Error::EmptySequence);
    }
    let lp = scorer.conditional_log_prob(context, ids)?;
    Ok((-lp / ids.len() as f64).exp())
}

/// `1 − unique/total` over the sequence's n-grams; 0 when shorter than `n`.
pub fn repetition<T: Hash + Eq>(items: &[T], n: usize) -> f64 {
    if n == 0 || items.len() < n {
        return 0.0;
    }
    let grams: Vec<&[T]> = items.windows(n).collect();
    let unique: HashSet<&[T]> = grams.iter().copied().collect();
    1.0 - unique.len() as f64 / grams.len() as f64
}

/// Repetition over normalized words instead of tokens.
pub fn word_repetition(text: &str, n: usize, normalizer: &dyn WordNormalizer) -> f64 {
    let ws: Vec<String> = words(text)
        .filter_map(|w| normalizer.normalize(w).ok())
        .collect();
    repetition(&ws, n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhraseOutcome {
    pub phrase: String,
    pub occurred: bool,
    pub step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessReport {
    pub sr: f64,
    pub per_phrase: Vec<PhraseOutcome>,
    /// Set when the storyline was empty and `sr` defaulted to 1.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub empty_storyline: bool,
}

/// A phrase counts when its insertion completed, or when its normalized
/// words appear as a contiguous run in the generated text.
pub fn success_rate(
    generated_text: &str,
    insertion_log: &[InsertionRecord],
    storyline: &Storyline,
    normalizer: &dyn WordNormalizer,
) -> SuccessReport {
    let surfaces: Vec<&str> = storyline
        .phrases
        .iter()
        .map(|p| p.surface.as_str())
        .collect();
    phrase_success_rate(generated_text, insertion_log, &surfaces, normalizer)
}

/// [`success_rate`] over raw phrase strings, for scoring stored outputs
/// without a tokenizer.
pub fn phrase_success_rate<S: AsRef<str>>(
    generated_text: &str,
    insertion_log: &[InsertionRecord],
    phrases: &[S],
    normalizer: &dyn WordNormalizer,
) -> SuccessReport {
    let text_words: Vec<String> = words(generated_text)
        .filter_map(|w| normalizer.normalize(w).ok())
        .collect();
    let per_phrase: Vec<PhraseOutcome> = phrases
        .iter()
        .enumerate()
        .map(|(idx, phrase)| {
            let phrase = phrase.as_ref().trim();
            let step = insertion_log
                .iter()
                .find(|r| r.phrase_index == idx && !r.truncated)
                .map(|r| r.step);
            let target: Vec<String> = words(phrase)
                .filter_map(|w| normalizer.normalize(w).ok())
                .collect();
            let in_text = !target.is_empty()
                && text_words
                    .windows(target.len())
                    .any(|w| w == target.as_slice());
            PhraseOutcome {
                phrase: phrase.to_string(),
                occurred: step.is_some() || in_text,
                step,
            }
        })
        .collect();
    if per_phrase.is_empty() {
        return SuccessReport {
            sr: 1.0,
            per_phrase,
            empty_storyline: true,
        };
    }
    let hits = per_phrase.iter().filter(|p| p.occurred).count();
    SuccessReport {
        sr: hits as f64 / per_phrase.len() as f64,
        per_phrase,
        empty_storyline: false,
    }
}

pub fn result_success_rate(
    result: &GenerationResult,
    storyline: &Storyline,
    normalizer: &dyn WordNormalizer,
) -> SuccessReport {
    success_rate(
        &result.generated_text,
        &result.insertion_log,
        storyline,
        normalizer,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeasures {
    pub ppl: f64,
    pub rep: f64,
    pub sr: f64,
    pub per_phrase: Vec<PhraseOutcome>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub empty_storyline: bool,
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySequence);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            mean,
            std: var.sqrt(),
        })
    }
}

impl fmt::Display for Stat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = f.precision().unwrap_or(1);
        write!(f, "{:.p$} ± {:.p$}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: usize,
    pub ppl: Stat,
    pub rep: Stat,
    pub sr: Stat,
}

pub fn aggregate(runs: &[RunMeasures]) -> Result<Summary> {
    if runs.is_empty() {
        return Err(Error::EmptySequence);
    }
    let col = |f: fn(&RunMeasures) -> f64| Stat::of(&runs.iter().map(f).collect::<Vec<_>>());
    Ok(Summary {
        runs: runs.len(),
        ppl: col(|r| r.ppl)?,
        rep: col(|r| r.rep)?,
        sr: col(|r| r.sr)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub strategy: Strategy,
    /// Only meaningful for the boosted strategy.
    pub lambda0: Option<f64>,
    pub summary: Summary,
}

/// Plain-text table with columns strategy, λ₀, PPL ± Std, Rep %, SR %.
pub fn render_table(rows: &[ReportRow]) -> String {
    let header = ["Strategy", "λ0", "PPL ± Std", "Rep, %", "SR, %", "Runs"];
    let body: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.strategy.to_string(),
                r.lambda0.map_or("–".to_string(), |l| format!("{l}")),
                format!("{:.1}", r.summary.ppl),
                format!("{:.2}", r.summary.rep.mean * 100.0),
                format!("{:.2}", r.summary.sr.mean * 100.0),
                r.summary.runs.to_string(),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| -> String {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(&header.map(String::from));
    out.push('\n');
    for row in &body {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normalize::CaseFold;
    use crate::reference::{TableArModel, UniformModel};
    use crate::tokenizer::WordTokenizer;
    use crate::types::{GuidePhrase, Vocabulary};
    use proptest::prelude::{any, prop_assert, proptest};

    fn brute_force_repetition(seq: &[u8], n: usize) -> f64 {
        if seq.len() < n {
            return 0.0;
        }
        let total = seq.len() - n + 1;
        let mut distinct = 0;
        for i in 0..total {
            if (0..i).all(|j| seq[j..j + n] != seq[i..i + n]) {
                distinct += 1;
            }
        }
        1.0 - distinct as f64 / total as f64
    }

    #[test]
    fn repetition_examples() {
        assert_eq!(repetition(&[1, 2, 3, 4, 5, 6], 4), 0.0);
        let abcd: Vec<&str> = "a b c d a b c d a b c d".split(' ').collect();
        assert!((repetition(&abcd, 4) - (1.0 - 4.0 / 9.0)).abs() < 1e-12);
        assert_eq!(repetition(&[1, 2, 3], 4), 0.0);
        assert!(
            (word_repetition("A b c d a B c d a b C d", 4, &CaseFold) - 5.0 / 9.0).abs() < 1e-12
        );
    }

    #[test]
    fn perplexity_examples() {
        let m = UniformModel::new(4);
        assert!((perplexity(&[0, 1, 2, 3, 3], &m).unwrap() - 4.0).abs() < 1e-12);

        let certain = TableArModel::from_json_str(
            r#"{"vocabulary": ["A", "B"], "ar": {"order": 0, "default": [0.999999999999, 1e-12]}}"#,
        )
        .unwrap();
        assert!((perplexity(&[0, 0, 0], &certain).unwrap() - 1.0).abs() < 1e-9);

        let t = TableArModel::from_json_str(
            r#"{"vocabulary": ["A", "B"], "ar": {"order": 1, "rows": [
                {"context": [], "probs": [0.5, 0.5]},
                {"context": ["A"], "probs": [0.75, 0.25]},
                {"context": ["B"], "probs": [0.5, 0.5]}
            ]}}"#,
        )
        .unwrap();
        let ppl = perplexity(&[0, 1], &t).unwrap();
        assert!((ppl - 8f64.sqrt()).abs() < 1e-12);
        assert!((ppl - 2.828).abs() < 1e-3);
        assert!(perplexity(&[], &t).is_err());
    }

    fn story(surfaces: &[&str]) -> (Storyline, WordTokenizer) {
        let tok = WordTokenizer::new(
            Vocabulary::new(
                ["a", "b", "c", "d", "e", "f"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
            )
            .unwrap(),
        );
        let s = Storyline::from_surfaces(surfaces, &tok, &CaseFold).unwrap();
        (s, tok)
    }

    #[test]
    fn success_rate_examples() {
        let (s, _) = story(&["a", "b c", "d", "e"]);
        let log = [
            InsertionRecord {
                phrase_index: 0,
                step: 3,
                truncated: false,
            },
            InsertionRecord {
                phrase_index: 1,
                step: 7,
                truncated: false,
            },
        ];
        let r = success_rate("f f f", &log, &s, &CaseFold);
        assert_eq!(r.sr, 0.5);
        assert_eq!(r.per_phrase[1].step, Some(7));

        let log4: Vec<_> = (0..4)
            .map(|i| InsertionRecord {
                phrase_index: i,
                step: i + 1,
                truncated: false,
            })
            .collect();
        assert_eq!(success_rate("", &log4, &s, &CaseFold).sr, 1.0);

        // text occurrence without an insertion record, case-folded
        let r = success_rate("f B C f", &[], &s, &CaseFold);
        assert_eq!(r.sr, 0.25);
        assert!(r.per_phrase[1].occurred && r.per_phrase[1].step.is_none());

        // split phrase words do not count
        assert_eq!(success_rate("b f c", &[], &s, &CaseFold).sr, 0.0);

        let r = success_rate("a", &[], &Storyline::default(), &CaseFold);
        assert!(r.empty_storyline && r.sr == 1.0);

        let truncated = [InsertionRecord {
            phrase_index: 1,
            step: 2,
            truncated: true,
        }];
        assert_eq!(success_rate("f b", &truncated, &s, &CaseFold).sr, 0.0);
    }

    #[test]
    fn punctuation_is_ignored_on_both_sides() {
        let phrases = ["press conference."];
        let r = phrase_success_rate(
            "held a Press Conference, then left",
            &[],
            &phrases,
            &CaseFold,
        );
        assert_eq!(r.sr, 1.0);
        assert_eq!(r.per_phrase[0].phrase, "press conference.");
    }

    #[test]
    fn phrase_in_prompt_only_does_not_count() {
        let (s, tok) = story(&["d"]);
        let phrase = GuidePhrase::new("d", &tok, &CaseFold).unwrap();
        assert_eq!(phrase.token_ids, vec![3]);
        // the prompt "d a" is not part of the generated text
        assert_eq!(success_rate("a b", &[], &s, &CaseFold).sr, 0.0);
    }

    #[test]
    fn aggregation() {
        let run = |ppl| RunMeasures {
            ppl,
            rep: 0.1,
            sr: 1.0,
            per_phrase: vec![],
            empty_storyline: false,
        };
        let one = aggregate(&[run(2.5)]).unwrap();
        assert_eq!((one.ppl.mean, one.ppl.std), (2.5, 0.0));
        let two = aggregate(&[run(2.0), run(4.0)]).unwrap();
        assert_eq!((two.ppl.mean, two.ppl.std), (3.0, 1.0));
        assert_eq!(two.ppl.to_string(), "3.0 ± 1.0");
        assert!(aggregate(&[]).is_err());

        let table = render_table(&[
            ReportRow {
                strategy: Strategy::ArOnly,
                lambda0: None,
                summary: two,
            },
            ReportRow {
                strategy: Strategy::FusionBoost,
                lambda0: Some(0.5),
                summary: one,
            },
        ]);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("Strategy"));
        assert!(lines[1].contains("3.0 ± 1.0") && lines[1].contains("–"));
        assert!(lines[2].contains("0.5") && lines[2].contains("100.00"));
    }

    proptest! {
        #[test]
        fn repetition_matches_brute_force(seq in proptest::collection::vec(0u8..5, 0..50), n in 1usize..6) {
            let fast = repetition(&seq, n);
            prop_assert!((fast - brute_force_repetition(&seq, n)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&fast));
        }

        #[test]
        fn self_concatenation_never_lowers_repetition(seq in proptest::collection::vec(0u8..5, 0..30)) {
            let doubled: Vec<u8> = seq.iter().chain(&seq).copied().collect();
            prop_assert!(repetition(&doubled, 4) >= repetition(&seq, 4) - 1e-12);
        }

        #[test]
        fn uniform_perplexity_is_vocab_size(seq in proptest::collection::vec(0usize..6, 1..20)) {
            let m = UniformModel::new(6);
            prop_assert!((perplexity(&seq, &m).unwrap() - 6.0).abs() < 1e-9);
        }

        #[test]
        fn normalized_perplexity_at_least_one(seq in proptest::collection::vec(0usize..4, 1..12), seed in 0u64..50) {
            let m = TableArModel::pseudo_random(4, 1, seed);
            prop_assert!(perplexity(&seq, &m).unwrap() >= 1.0);
        }

        #[test]
        fn adding_an_occurrence_never_lowers_sr(hit in proptest::collection::vec(any::<bool>(), 1..6), extra in 0usize..6) {
            let surfaces = ["a", "b", "c", "d", "e", "f"];
            let (s, _) = story(&surfaces[..hit.len()]);
            let log: Vec<_> = hit.iter().enumerate().filter(|(_, &h)| h)
                .map(|(i, _)| InsertionRecord { phrase_index: i, step: i + 1, truncated: false }).collect();
            let before = success_rate("", &log, &s, &CaseFold).sr;
            let mut more = log.clone();
            let idx = extra % hit.len();
            more.push(InsertionRecord { phrase_index: idx, step: 100, truncated: false });
            let after = success_rate("", &more, &s, &CaseFold).sr;
            prop_assert!(after >= before);
            prop_assert!((0.0..=1.0).contains(&after));
        }
    }
}
