//! Word-level tokenizer: whitespace plus punctuation splitting, with a
//! frequency-threshold vocabulary. Ids 0..=3 are reserved specials.

use std::collections::BTreeMap;

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

pub const SPECIALS: [&str; 4] = ["[PAD]", "[SOS]", "[EOS]", "[UNK]"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenizer {
    words: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Tokenizer {
    /// Build a vocabulary from a corpus, keeping words that occur at least
    /// `min_freq` times. Ordering is (frequency desc, word asc), so the
    /// result is independent of corpus iteration order.
    pub fn fit<'a>(corpus: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for text in corpus {
            for w in split_words(text) {
                *counts.entry(w).or_insert(0) += 1;
            }
        }
        let mut entries: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_freq)
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut words: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        words.extend(entries.into_iter().map(|(w, _)| w));
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Tokenizer { words, index }
    }

    /// Rebuild from a stored word list (checkpoint loading).
    pub fn from_words(words: Vec<String>) -> Self {
        assert!(words.len() >= SPECIALS.len(), "vocabulary missing specials");
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Tokenizer { words, index }
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    /// Word ids only, no specials. Unknown words map to [UNK].
    pub fn encode_words(&self, text: &str) -> Vec<usize> {
        split_words(text)
            .into_iter()
            .map(|w| self.index.get(&w).copied().unwrap_or(UNK))
            .collect()
    }

    /// Full caption sequence: [SOS] w1..wT [EOS].
    pub fn encode_caption(&self, text: &str) -> Vec<usize> {
        let mut ids = vec![SOS];
        ids.extend(self.encode_words(text));
        ids.push(EOS);
        ids
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&id| id > UNK || id == UNK)
            .filter(|&&id| id != PAD && id != SOS && id != EOS)
            .map(|&id| self.words.get(id).map_or("[UNK]", |s| s.as_str()))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn split_words(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() || ch == '\'' {
            for lower in ch.to_lowercase() {
                cur.push(lower);
            }
        } else if !cur.is_empty() {
            words.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
}
