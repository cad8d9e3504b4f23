//! Word-level tokenizer over lowercased whitespace words.
//!
//! Reserved tokens come first, then the score digits, then corpus words by
//! descending frequency. Words outside the vocabulary hash into a fixed set
//! of `<oov:k>` buckets so that unseen words stay distinguishable.

use std::collections::HashMap;

use crate::corpus::{Corpus, Dimension, Record, TokenLength};
use crate::error::{Error, Result};
use crate::text::{fnv1a, words};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";

/// Structural words every example uses.
pub const MARKERS: [&str; 9] = [
    "rate",
    ":",
    "user",
    "assistant",
    "score",
    "assessment",
    "confidence",
    "naturalness",
    "comprehensiveness",
];
const TOPIC_MARKER: &str = "on_topic";

#[derive(Debug, Clone, PartialEq)]
pub struct Tokenizer {
    words: Vec<String>,
    index: HashMap<String, usize>,
    oov_buckets: usize,
    oov_start: usize,
}

impl Tokenizer {
    /// Builds a vocabulary of exactly `vocab_size` entries from every text in
    /// `corpus` (turns and explanations of all dimensions).
    pub fn build(corpus: &Corpus, vocab_size: usize, oov_buckets: usize) -> Result<Self> {
        let mut fixed: Vec<String> = [PAD, BOS, EOS].iter().map(|s| s.to_string()).collect();
        fixed.extend((1..=5).map(|d| d.to_string()));
        fixed.extend(MARKERS.iter().map(|s| s.to_string()));
        fixed.push(TOPIC_MARKER.to_string());
        if vocab_size < fixed.len() + oov_buckets {
            return Err(Error::invalid(format!(
                "vocab_size {vocab_size} leaves no room for {} reserved tokens and {oov_buckets} buckets",
                fixed.len()
            )));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut count_text = |t: &str| {
            for w in words(t) {
                *counts.entry(w.to_lowercase()).or_default() += 1;
            }
        };
        for r in corpus.iter() {
            for t in &r.turns {
                count_text(&t.text);
            }
            for e in r.explanations.values() {
                count_text(&e.assessment);
                count_text(&e.confidence);
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().filter(|(w, _)| !fixed.contains(w)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let room = vocab_size - fixed.len() - oov_buckets;
        let mut vocab = fixed;
        vocab.extend(ranked.into_iter().take(room).map(|(w, _)| w));
        vocab.extend((0..oov_buckets).map(|k| format!("<oov:{k}>")));
        // pad out unused slots so the embedding table size is fixed
        let mut k = 0;
        while vocab.len() < vocab_size {
            vocab.push(format!("<unused:{k}>"));
            k += 1;
        }
        Self::from_vocab(vocab)
    }

    /// Reconstructs a tokenizer from a stored vocabulary list.
    pub fn from_vocab(words: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary entry `{w}`")));
            }
        }
        for required in [PAD, BOS, EOS, "1", "5", "score", ":"] {
            if !index.contains_key(required) {
                return Err(Error::invalid(format!("vocabulary lacks `{required}`")));
            }
        }
        let buckets: Vec<usize> = words
            .iter()
            .enumerate()
            .filter(|(_, w)| w.starts_with("<oov:"))
            .map(|(i, _)| i)
            .collect();
        let oov_start = buckets.first().copied().unwrap_or(words.len());
        if buckets.is_empty() {
            return Err(Error::invalid("vocabulary has no out-of-vocabulary buckets"));
        }
        Ok(Tokenizer {
            oov_buckets: buckets.len(),
            oov_start,
            words,
            index,
        })
    }

    pub fn vocab(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> usize {
        if let Some(&i) = self.index.get(word) {
            return i;
        }
        let lower = word.to_lowercase();
        match self.index.get(&lower) {
            Some(&i) => i,
            None => self.oov_start + (fnv1a(lower.as_bytes()) % self.oov_buckets as u64) as usize,
        }
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        words(text).map(|w| self.id(w)).collect()
    }

    /// Token id of raw score digit `s` (1..=5).
    pub fn score_token(&self, s: i32) -> usize {
        self.index[&s.to_string()]
    }

    pub fn bos(&self) -> usize {
        self.index[BOS]
    }

    pub fn eos(&self) -> usize {
        self.index[EOS]
    }

    pub fn pad(&self) -> usize {
        self.index[PAD]
    }
}

impl TokenLength for Tokenizer {
    fn total_length(&self, record: &Record, dimension: Dimension) -> usize {
        super::example::prompt_tokens(self, &record.turns, dimension).len()
            + 3
            + self.encode(record.assessment(dimension)).len()
            + self.encode(record.confidence(dimension)).len()
            + 4
    }
}
