//! Word-level text helpers shared by the corpus, augmentation and tokenizer code.
//!
//! A word is a maximal run of non-whitespace characters. Stopword matching
//! lowercases the word first.

use std::collections::BTreeSet;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Bundled English stopword list (179 entries), version 1.
pub const STOPWORDS_V1: &str = include_str!("../data/stopwords_v1.txt");
/// Bundled English dictionary (25,000 entries), version 1.
pub const DICTIONARY_V1: &str = include_str!("../data/dictionary_v1.txt");

pub fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Keeps the first `n_words` words, joined by single spaces.
pub fn truncate_explanation(text: &str, n_words: usize) -> String {
    let mut out = String::new();
    for (i, w) in text.split_whitespace().take(n_words).enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(w);
    }
    out
}

/// Lowercased set of words, as used for stopword lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordSet {
    words: BTreeSet<String>,
    digest: String,
}

impl WordSet {
    /// Parses a newline-delimited list. Blank lines are skipped.
    pub fn parse(content: &str) -> Self {
        let words = content
            .lines()
            .map(|l| l.trim().to_lowercase())
            .filter(|l| !l.is_empty())
            .collect();
        WordSet {
            words,
            digest: sha256_hex(content.as_bytes()),
        }
    }

    pub fn from_words<I, S>(iter: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let words: BTreeSet<String> = iter.into_iter().map(|s| s.as_ref().to_lowercase()).collect();
        let joined = words.iter().cloned().collect::<Vec<_>>().join("\n");
        WordSet {
            digest: sha256_hex(joined.as_bytes()),
            words,
        }
    }

    pub fn stopwords_v1() -> Self {
        Self::parse(STOPWORDS_V1)
    }

    pub fn contains(&self, word: &str) -> bool {
        if word.chars().any(|c| c.is_uppercase()) {
            self.words.contains(&word.to_lowercase())
        } else {
            self.words.contains(word)
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    /// SHA-256 of the source content.
    pub fn digest(&self) -> &str {
        &self.digest
    }
}

/// An ordered word list; order matters for seeded sampling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordList {
    pub words: Vec<String>,
    pub digest: String,
}

impl WordList {
    pub fn parse(content: &str) -> Self {
        WordList {
            words: content
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_owned)
                .collect(),
            digest: sha256_hex(content.as_bytes()),
        }
    }

    pub fn dictionary_v1() -> Self {
        Self::parse(DICTIONARY_V1)
    }

    /// Loads a list from disk. When `expected_digest` is given the file content
    /// must hash to it.
    pub fn load(path: &Path, expected_digest: Option<&str>) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let list = Self::parse(&content);
        if let Some(want) = expected_digest {
            if !list.digest.eq_ignore_ascii_case(want) {
                return Err(Error::invalid(format!(
                    "{} hashes to {}, expected {}",
                    path.display(),
                    list.digest,
                    want
                )));
            }
        }
        Ok(list)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// 64-bit FNV-1a; stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Derives a child seed from a parent seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut buf = seed.to_le_bytes().to_vec();
    buf.extend_from_slice(label.as_bytes());
    fnv1a(&buf)
}
