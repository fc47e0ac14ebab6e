//! Word normalization used to decide whether generated text contains a guide phrase.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Maps a word to the canonical form used for phrase-occurrence matching.
///
/// Implementations must be pure. A lemmatizer plugs in here.
pub trait WordNormalizer: Send + Sync {
    fn normalize(&self, word: &str) -> Result<String>;
}

/// Trims surrounding whitespace and lowercases.
#[derive(Debug, Clone, Copy, Default)]
pub struct CaseFold;

impl WordNormalizer for CaseFold {
    fn normalize(&self, word: &str) -> Result<String> {
        let trimmed = word.trim();
        if trimmed.is_empty() {
            return Err(Error::EmptyWord);
        }
        Ok(trimmed.to_lowercase())
    }
}

/// Case-folds, then replaces word forms found in a user-supplied lemma table.
#[derive(Debug, Clone, Default)]
pub struct LemmaTable {
    lemmas: HashMap<String, String>,
}

impl LemmaTable {
    pub fn new<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let lemmas = pairs
            .into_iter()
            .map(|(k, v)| (k.as_ref().to_lowercase(), v.as_ref().to_lowercase()))
            .collect();
        Self { lemmas }
    }
}

impl WordNormalizer for LemmaTable {
    fn normalize(&self, word: &str) -> Result<String> {
        let folded = CaseFold.normalize(word)?;
        Ok(self.lemmas.get(&folded).cloned().unwrap_or(folded))
    }
}

pub fn normalize_word(word: &str, normalizer: &dyn WordNormalizer) -> Result<String> {
    normalizer.normalize(word)
}

fn trim_punct(word: &str) -> &str {
    word.trim_matches(|c: char| !c.is_alphanumeric())
}

/// Whitespace-separated words with surrounding punctuation stripped.
pub fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
        .map(trim_punct)
        .filter(|w| !w.is_empty())
}

/// The word the text currently ends in, if the text does not end in
/// whitespace or punctuation.
pub fn trailing_word(text: &str) -> Option<&str> {
    let last = text.rsplit(char::is_whitespace).next()?;
    if last.is_empty() || !last.ends_with(char::is_alphanumeric) {
        return None;
    }
    let word = trim_punct(last);
    (!word.is_empty()).then_some(word)
}
