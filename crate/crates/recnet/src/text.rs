//! Caption tokenization, vocabulary, and token sequences.

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::path::Path;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;

pub const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Captions longer than this many tokens are truncated.
pub const MAX_CAPTION_TOKENS: usize = 30;

/// Lowercase, strip ASCII punctuation, split on whitespace, truncate.
pub fn tokenize(sentence: &str) -> Result<Vec<String>> {
    let cleaned: String = sentence
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .to_lowercase();
    let tokens: Vec<String> = cleaned
        .split_whitespace()
        .take(MAX_CAPTION_TOKENS)
        .map(|s| s.to_string())
        .collect();
    if tokens.is_empty() {
        return Err(Error::EmptyCaption);
    }
    Ok(tokens)
}

/// Word ids with four reserved slots; ids 0..=3 are PAD, BOS, EOS, UNK.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Frequency-ordered vocabulary over a token corpus. Words below
    /// `min_count` are dropped and encode to UNK; frequency ties break
    /// lexicographically.
    pub fn build(corpus: &[Vec<String>], min_count: usize) -> Result<Vocabulary> {
        if min_count < 1 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        if corpus.is_empty() {
            return Err(Error::Data("empty corpus".into()));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for tokens in corpus {
            for tok in tokens {
                *counts.entry(tok.as_str()).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Vocabulary::from_words(kept.into_iter().map(|(w, _)| w.to_string()))
    }

    /// Vocabulary from non-reserved words already in id order.
    pub fn from_words(words: impl IntoIterator<Item = String>) -> Result<Vocabulary> {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(words);
        let mut index = HashMap::new();
        for (i, w) in all.iter().enumerate() {
            if index.insert(w.clone(), i as u32).is_some() {
                return Err(Error::Data(format!("duplicate word in vocabulary: {w:?}")));
            }
        }
        Ok(Vocabulary { words: all, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(|s| s.as_str())
    }

    /// Non-reserved words in id order (for serialization).
    pub fn plain_words(&self) -> &[String] {
        &self.words[RESERVED.len()..]
    }

    pub fn encode_word(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    /// Wrap tokens as BOS .. EOS ids.
    pub fn encode(&self, tokens: &[String]) -> Result<TokenSequence> {
        let mut ids = Vec::with_capacity(tokens.len() + 2);
        ids.push(BOS);
        for t in tokens.iter().take(MAX_CAPTION_TOKENS) {
            ids.push(self.encode_word(t));
        }
        ids.push(EOS);
        TokenSequence::new(ids, self.len())
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .map(|&id| self.word(id).unwrap_or(RESERVED[UNK as usize]).to_string())
            .collect()
    }

    /// Words without markers, joined by single spaces.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&id| id != PAD && id != BOS && id != EOS)
            .map(|&id| self.word(id).unwrap_or(RESERVED[UNK as usize]))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One word per line; line number + 4 is the id, reserved tokens implicit.
    pub fn save(&self, path: &Path) -> Result<()> {
        let body = self.plain_words().join("\n");
        crate::util::atomic_write(path, body.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocabulary::from_words(
            text.lines()
                .filter(|l| !l.is_empty())
                .map(|l| l.to_string()),
        )
    }
}

/// Caption ids including the BOS prefix and EOS terminal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<u32>,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>, vocab_size: usize) -> Result<TokenSequence> {
        if ids.len() < 2 || ids[0] != BOS {
            return Err(Error::Data("token sequence must start with BOS".into()));
        }
        let eos_count = ids.iter().filter(|&&id| id == EOS).count();
        if eos_count != 1 || *ids.last().unwrap() != EOS {
            return Err(Error::Data(
                "token sequence must contain exactly one EOS, at the final position".into(),
            ));
        }
        if ids.len() - 2 > MAX_CAPTION_TOKENS {
            return Err(Error::Data(format!(
                "caption has {} tokens, limit is {}",
                ids.len() - 2,
                MAX_CAPTION_TOKENS
            )));
        }
        for &id in &ids {
            if id as usize >= vocab_size {
                return Err(Error::TokenOutOfRange {
                    id,
                    vocab: vocab_size,
                });
            }
        }
        Ok(TokenSequence { ids })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of predicted positions (everything after BOS, including EOS).
    pub fn predictions(&self) -> usize {
        self.ids.len() - 1
    }
}
