//! Tokenizers mapping text to vocabulary ids and back.
//!
//! Two implementations ship with the engine: a whitespace word tokenizer for
//! table-driven reference models, and a GPT-2 style byte-level BPE tokenizer
//! built from a served vocabulary and merge list.

use std::collections::HashMap;

use regex::Regex;

use crate::error::{Error, Result};
use crate::types::{TokenId, Vocabulary};

pub trait Tokenizer: Send + Sync {
    fn vocabulary(&self) -> &Vocabulary;

    /// Encodes standalone text (start of a document).
    fn encode(&self, text: &str) -> Result<Vec<TokenId>>;

    /// Encodes text that follows earlier text, separated by a word boundary.
    fn encode_continuation(&self, text: &str) -> Result<Vec<TokenId>>;

    fn decode(&self, ids: &[TokenId]) -> Result<String>;
}

/// One token per whitespace-separated word; decoding joins with single spaces.
#[derive(Debug, Clone)]
pub struct WordTokenizer {
    vocab: Vocabulary,
    unk: Option<TokenId>,
}

impl WordTokenizer {
    pub fn new(vocab: Vocabulary) -> Self {
        Self { vocab, unk: None }
    }

    /// Words missing from the vocabulary map to `unk` instead of failing.
    pub fn with_unk(vocab: Vocabulary, unk: TokenId) -> Result<Self> {
        vocab.check_ids(&[unk])?;
        Ok(Self {
            vocab,
            unk: Some(unk),
        })
    }
}

impl Tokenizer for WordTokenizer {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace()
            .map(|w| {
                self.vocab
                    .id(w)
                    .or(self.unk)
                    .ok_or_else(|| Error::UnknownToken(w.to_string()))
            })
            .collect()
    }

    fn encode_continuation(&self, text: &str) -> Result<Vec<TokenId>> {
        self.encode(text)
    }

    fn decode(&self, ids: &[TokenId]) -> Result<String> {
        self.vocab.check_ids(ids)?;
        let words: Vec<&str> = ids
            .iter()
            .map(|&id| self.vocab.token(id).unwrap())
            .collect();
        Ok(words.join(" "))
    }
}

const PRETOKENIZE: &str = r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+";

/// GPT-2 byte-to-unicode table: printable bytes map to themselves, the rest
/// to code points from U+0100 upward.
fn byte_to_unicode() -> [char; 256] {
    let mut printable: Vec<u32> = (u32::from(b'!')..=u32::from(b'~'))
        .chain(0xA1..=0xAC)
        .chain(0xAE..=0xFF)
        .collect();
    let mut chars: Vec<u32> = printable.clone();
    let mut extra = 0;
    for b in 0..256u32 {
        if !printable.contains(&b) {
            printable.push(b);
            chars.push(256 + extra);
            extra += 1;
        }
    }
    let mut table = ['\0'; 256];
    for (b, c) in printable.into_iter().zip(chars) {
        table[b as usize] = char::from_u32(c).expect("valid code point");
    }
    table
}

/// Byte-level BPE in the GPT-2 format. Vocabulary tokens are strings over
/// the byte-to-unicode alphabet (`Ġ` for a leading space and so on).
#[derive(Debug, Clone)]
pub struct ByteLevelBpe {
    vocab: Vocabulary,
    ranks: HashMap<(String, String), usize>,
    byte_encoder: [char; 256],
    byte_decoder: HashMap<char, u8>,
    pattern: Regex,
}

impl ByteLevelBpe {
    pub fn new(vocab: Vocabulary, merges: Vec<(String, String)>) -> Self {
        let byte_encoder = byte_to_unicode();
        let byte_decoder = byte_encoder
            .iter()
            .enumerate()
            .map(|(b, &c)| (c, b as u8))
            .collect();
        let ranks = merges
            .into_iter()
            .enumerate()
            .map(|(rank, pair)| (pair, rank))
            .collect();
        Self {
            vocab,
            ranks,
            byte_encoder,
            byte_decoder,
            pattern: Regex::new(PRETOKENIZE).expect("static pattern"),
        }
    }

    /// Parses merge rules given as `"left right"` lines. Blank lines and a
    /// leading `#version` header are skipped.
    pub fn parse_merges<'a>(
        lines: impl IntoIterator<Item = &'a str>,
    ) -> Result<Vec<(String, String)>> {
        lines
            .into_iter()
            .filter(|l| !l.trim().is_empty() && !l.starts_with("#version"))
            .map(|l| {
                let mut parts = l.split(' ');
                match (parts.next(), parts.next(), parts.next()) {
                    (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                        Ok((a.to_string(), b.to_string()))
                    }
                    _ => Err(Error::InvalidModel(format!("malformed merge rule {l:?}"))),
                }
            })
            .collect()
    }

    /// Splits text into pre-tokens, emulating GPT-2's `\s+(?!\S)` rule: a
    /// whitespace run followed by a word leaves its last character to the word.
    fn pretokenize<'t>(&self, text: &'t str) -> Vec<&'t str> {
        let mut pieces = Vec::new();
        let mut pos = 0;
        while pos < text.len() {
            let Some(m) = self.pattern.find_at(text, pos) else {
                break;
            };
            let piece = m.as_str();
            let mut end = m.end();
            if piece.chars().all(char::is_whitespace) && end < text.len() {
                let last = piece.chars().next_back().unwrap();
                if piece.chars().count() > 1 {
                    end -= last.len_utf8();
                }
            }
            pieces.push(&text[m.start()..end]);
            pos = end;
        }
        pieces
    }

    fn bpe(&self, piece: &str) -> Vec<String> {
        let mut symbols: Vec<String> = piece
            .bytes()
            .map(|b| self.byte_encoder[b as usize].to_string())
            .collect();
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len()
                    && self
                        .ranks
                        .get(&(symbols[i].clone(), symbols[i + 1].clone()))
                        == Some(&rank)
                {
                    merged.push(format!("{}{}", symbols[i], symbols[i + 1]));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            symbols = merged;
        }
        symbols
    }
}

impl Tokenizer for ByteLevelBpe {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        let mut ids = Vec::new();
        for piece in self.pretokenize(text) {
            for sym in self.bpe(piece) {
                let id = self.vocab.id(&sym).ok_or(Error::UnknownToken(sym))?;
                ids.push(id);
            }
        }
        Ok(ids)
    }

    fn encode_continuation(&self, text: &str) -> Result<Vec<TokenId>> {
        self.encode(&format!(" {text}"))
    }

    fn decode(&self, ids: &[TokenId]) -> Result<String> {
        self.vocab.check_ids(ids)?;
        let mut bytes = Vec::new();
        for &id in ids {
            for c in self.vocab.token(id).unwrap().chars() {
                match self.byte_decoder.get(&c) {
                    Some(&b) => bytes.push(b),
                    None => {
                        let mut buf = [0u8; 4];
                        bytes.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
                    }
                }
            }
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(tokens: &[&str]) -> WordTokenizer {
        WordTokenizer::new(Vocabulary::new(tokens.iter().map(|s| s.to_string()).collect()).unwrap())
    }

    /// 256 byte symbols plus a handful of merges.
    fn small_bpe() -> ByteLevelBpe {
        let table = byte_to_unicode();
        let mut tokens: Vec<String> = table.iter().map(|c| c.to_string()).collect();
        let merges = ByteLevelBpe::parse_merges([
            "#version: 0.2",
            "Ġ t",
            "h e",
            "Ġt he",
            "Ġ c",
            "i t",
            "Ġc it",
            "Ġcit y",
        ])
        .unwrap();
        for (a, b) in &merges {
            tokens.push(format!("{a}{b}"));
        }
        ByteLevelBpe::new(Vocabulary::new(tokens).unwrap(), merges)
    }

    #[test]
    fn byte_table_is_a_bijection() {
        let table = byte_to_unicode();
        let mut seen: Vec<char> = table.to_vec();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 256);
        assert_eq!(table[b' ' as usize], 'Ġ');
        assert_eq!(table[b'A' as usize], 'A');
    }

    #[test]
    fn word_tokenizer_roundtrip_and_unknowns() {
        let t = words(&["A", "B", "C"]);
        assert_eq!(t.encode("A  C B").unwrap(), vec![0, 2, 1]);
        assert_eq!(t.decode(&[0, 2, 1]).unwrap(), "A C B");
        assert!(matches!(t.encode("A Z"), Err(Error::UnknownToken(w)) if w == "Z"));
        assert!(t.decode(&[5]).is_err());
        let u = WordTokenizer::with_unk(t.vocabulary().clone(), 2).unwrap();
        assert_eq!(u.encode("A Z").unwrap(), vec![0, 2]);
    }

    #[test]
    fn bpe_applies_merges_by_rank() {
        let t = small_bpe();
        let ids = t.encode("the city").unwrap();
        let toks: Vec<&str> = ids
            .iter()
            .map(|&i| t.vocabulary().token(i).unwrap())
            .collect();
        assert_eq!(toks, vec!["t", "he", "Ġcity"]);
        let cont = t.encode_continuation("the").unwrap();
        assert_eq!(t.vocabulary().token(cont[0]), Some("Ġthe"));
        assert_eq!(cont.len(), 1);
    }

    #[test]
    fn pretokenizer_keeps_space_with_following_word() {
        let t = small_bpe();
        assert_eq!(t.pretokenize("a   b"), vec!["a", "  ", " b"]);
        assert_eq!(t.pretokenize("it's 42!"), vec!["it", "'s", " 42", "!"]);
        assert_eq!(t.pretokenize("end  "), vec!["end", "  "]);
    }

    #[test]
    fn malformed_merge_rejected() {
        assert!(ByteLevelBpe::parse_merges(["a b c"]).is_err());
    }

    proptest! {
        #[test]
        fn bpe_roundtrips_arbitrary_text(s in "\\PC{0,40}") {
            let t = small_bpe();
            let ids = t.encode(&s).unwrap();
            prop_assert_eq!(t.decode(&ids).unwrap(), s);
        }

        #[test]
        fn word_tokenizer_roundtrips_normalized_text(ws in proptest::collection::vec(0usize..3, 1..10)) {
            let t = words(&["A", "B", "C"]);
            let text = ws.iter().map(|&i| ["A", "B", "C"][i]).collect::<Vec<_>>().join(" ");
            prop_assert_eq!(t.decode(&t.encode(&text).unwrap()).unwrap(), text);
        }
    }
}
