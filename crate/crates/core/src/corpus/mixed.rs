use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Corpus, Dimension, Record};
use crate::error::{Error, Result};
use crate::text::{derive_seed, word_count};

/// Balanced union of several source corpora restricted to long explanations.
///
/// From every input corpus, `per_source` records whose `dimension` assessment
/// explanation has at least `min_expl_words` words are drawn without
/// replacement by a seeded shuffle. Output order is input order, then draw order.
pub fn build_mixed(
    corpora: &[Corpus],
    dimension: Dimension,
    per_source: usize,
    min_expl_words: usize,
    seed: u64,
) -> Result<Corpus> {
    let mut out: Vec<Record> = Vec::with_capacity(corpora.len() * per_source);
    let mut seen = HashSet::new();
    for (i, corpus) in corpora.iter().enumerate() {
        let tag = corpus
            .records
            .first()
            .map(|r| r.source.tag().to_owned())
            .unwrap_or_else(|| format!("corpus #{i}"));
        let mut qualifying: Vec<&Record> = corpus
            .iter()
            .filter(|r| word_count(r.assessment(dimension)) >= min_expl_words)
            .collect();
        if qualifying.len() < per_source {
            return Err(Error::InsufficientRecords {
                source_tag: tag,
                available: qualifying.len(),
                required: per_source,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("mixed-{i}-{tag}")));
        qualifying.shuffle(&mut rng);
        for r in qualifying.into_iter().take(per_source) {
            if !seen.insert(r.id.clone()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            out.push(r.clone());
        }
    }
    Ok(Corpus { records: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth::{synth_fixture, SynthConfig};
    use crate::corpus::Source;

    fn six_sources(n: usize, min_words: usize) -> Vec<Corpus> {
        Source::PUBLIC
            .iter()
            .enumerate()
            .map(|(i, &source)| {
                synth_fixture(&SynthConfig {
                    source,
                    min_assessment_words: min_words,
                    ..SynthConfig::new(100 + i as u64, n)
                })
            })
            .collect()
    }

    #[test]
    fn zero_per_source_is_empty() {
        let c = build_mixed(&six_sources(5, 0), Dimension::Naturalness, 0, 150, 1).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn balanced_and_deterministic() {
        let srcs = six_sources(40, 150);
        let a = build_mixed(&srcs, Dimension::Naturalness, 10, 150, 7).unwrap();
        assert_eq!(a.len(), 60);
        for s in Source::PUBLIC {
            assert_eq!(a.iter().filter(|r| r.source == s).count(), 10);
        }
        let b = build_mixed(&srcs, Dimension::Naturalness, 10, 150, 7).unwrap();
        let ids = |c: &Corpus| c.iter().map(|r| r.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a), ids(&b));
        let c = build_mixed(&srcs, Dimension::Naturalness, 10, 150, 8).unwrap();
        assert_ne!(ids(&a), ids(&c));
    }

    #[test]
    fn shortfall_names_source() {
        let srcs = six_sources(20, 0);
        match build_mixed(&srcs, Dimension::Naturalness, 5, 150, 1) {
            Err(Error::InsufficientRecords {
                source_tag,
                available,
                required,
            }) => {
                assert_eq!(source_tag, "chatbotac");
                assert_eq!(available, 0);
                assert_eq!(required, 5);
            }
            other => panic!("{other:?}"),
        }
    }
}
