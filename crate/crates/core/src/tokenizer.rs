//! Text-to-vocabulary-index mapping for the backbone's embedding table.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Tokenizer {
    /// Lower-cased whitespace words hashed (FNV-1a) onto `0..vocab_size`.
    Hashed { vocab_size: usize },
    /// Greedy longest-prefix matching against an explicit token list.
    Vocabulary {
        tokens: HashMap<String, usize>,
        longest: usize,
    },
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl Tokenizer {
    pub fn hashed(vocab_size: usize) -> Self {
        Tokenizer::Hashed { vocab_size }
    }

    /// One token per line; the token id is the zero-based line number.
    pub fn from_vocab_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_tokens(text.lines().map(str::to_string)))
    }

    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Self {
        let mut map = HashMap::new();
        let mut longest = 0;
        for (id, tok) in tokens.into_iter().enumerate() {
            if tok.is_empty() {
                continue;
            }
            longest = longest.max(tok.chars().count());
            map.entry(tok).or_insert(id);
        }
        Tokenizer::Vocabulary {
            tokens: map,
            longest,
        }
    }

    pub fn vocab_bound(&self) -> usize {
        match self {
            Tokenizer::Hashed { vocab_size } => *vocab_size,
            Tokenizer::Vocabulary { tokens, .. } => tokens.values().max().map_or(0, |m| m + 1),
        }
    }

    /// Token ids of a single word; errors if any part of it cannot be matched.
    pub fn encode_word(&self, word: &str) -> Result<Vec<usize>> {
        let word = word.trim();
        if word.is_empty() || word.chars().any(char::is_whitespace) {
            return Err(Error::UnresolvableWord(word.to_string()));
        }
        match self {
            Tokenizer::Hashed { vocab_size } => {
                let lower = word.to_lowercase();
                Ok(vec![(fnv1a(lower.as_bytes()) % *vocab_size as u64) as usize])
            }
            Tokenizer::Vocabulary { tokens, longest } => {
                let chars: Vec<char> = word.chars().collect();
                let mut ids = Vec::new();
                let mut i = 0;
                while i < chars.len() {
                    let max = (*longest).min(chars.len() - i);
                    let found = (1..=max).rev().find_map(|n| {
                        let piece: String = chars[i..i + n].iter().collect();
                        tokens.get(&piece).map(|&id| (id, n))
                    });
                    let (id, n) = found.ok_or_else(|| Error::UnresolvableWord(word.to_string()))?;
                    ids.push(id);
                    i += n;
                }
                Ok(ids)
            }
        }
    }

    /// Whitespace-split text; words that cannot be resolved are skipped.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.split_whitespace()
            .filter_map(|w| self.encode_word(w).ok())
            .flatten()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashed_is_deterministic_and_bounded() {
        let t = Tokenizer::hashed(64);
        let a = t.encode("forecast the next 96 steps");
        assert_eq!(a, t.encode("forecast  the next\n96 steps"));
        assert_eq!(a.len(), 5);
        assert!(a.iter().all(|&i| i < 64));
        assert_eq!(t.encode_word("Increase").unwrap(), t.encode_word("increase").unwrap());
        assert!(t.encode_word("").is_err());
    }

    #[test]
    fn vocabulary_greedy_longest_match() {
        let t = Tokenizer::from_tokens(["in", "crease", "increase", "de", "c", "r", "e", "a", "s"].map(String::from));
        assert_eq!(t.encode_word("increase").unwrap(), vec![2]);
        assert_eq!(t.encode_word("decrease").unwrap(), vec![3, 1]);
        match t.encode_word("xyz") {
            Err(Error::UnresolvableWord(w)) => assert_eq!(w, "xyz"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(t.vocab_bound(), 9);
    }
}
