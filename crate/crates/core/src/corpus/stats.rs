use std::collections::BTreeMap;

use ordered_float::OrderedFloat;

use super::{Corpus, Dimension, Record};
use crate::error::{Error, Result};
use crate::text::WordSet;

/// Share of assessment explanations whose word at position `i` is not a
/// stopword, among explanations that have a word at `i`. `None` where no
/// explanation is that long.
pub fn nonstopword_profile(
    corpus: &Corpus,
    dimension: Dimension,
    stopwords: &WordSet,
    max_pos: usize,
) -> Result<Vec<Option<f64>>> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let mut hits = vec![0usize; max_pos];
    let mut totals = vec![0usize; max_pos];
    for r in corpus {
        for (i, w) in r.assessment(dimension).split_whitespace().take(max_pos).enumerate() {
            totals[i] += 1;
            if !stopwords.contains(w) {
                hits[i] += 1;
            }
        }
    }
    Ok(hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
        .collect())
}

/// Total serialized length of a record as a training stream.
pub trait TokenLength {
    fn total_length(&self, record: &Record, dimension: Dimension) -> usize;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    pub bin_width: usize,
    /// `counts[k]` covers `[k * bin_width, (k + 1) * bin_width)`.
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub fn token_length_histogram(
    corpus: &Corpus,
    dimension: Dimension,
    tokenizer: &impl TokenLength,
    bin_width: usize,
) -> Result<Histogram> {
    if bin_width == 0 {
        return Err(Error::invalid("bin width must be positive"));
    }
    let mut counts = Vec::new();
    for r in corpus {
        let bin = tokenizer.total_length(r, dimension) / bin_width;
        if counts.len() <= bin {
            counts.resize(bin + 1, 0);
        }
        counts[bin] += 1;
    }
    Ok(Histogram { bin_width, counts })
}

/// Record counts per distinct normalized score, ascending by score.
pub fn score_distribution(corpus: &Corpus, dimension: Dimension) -> Vec<(f64, usize)> {
    let mut counts: BTreeMap<OrderedFloat<f64>, usize> = BTreeMap::new();
    for r in corpus {
        if let Some(s) = r.scores.get(dimension) {
            *counts.entry(OrderedFloat(s)).or_default() += 1;
        }
    }
    counts.into_iter().map(|(k, v)| (k.0, v)).collect()
}
