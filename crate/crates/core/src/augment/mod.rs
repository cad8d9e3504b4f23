//! Random-token explanations: vocabulary profiles and the five substitution
//! schemes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ordered_float::OrderedFloat;
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Dimension, Explanations};
use crate::error::{Error, Result};
use crate::text::{derive_seed, word_count, words, WordList, WordSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RandomMode {
    #[serde(rename = "fully")]
    FullyRandom,
    #[serde(rename = "shuffle")]
    ShuffleRandom,
    #[serde(rename = "associated")]
    AssociatedRandom,
    #[serde(rename = "w-shuffle")]
    WeightedShuffleRandom,
    #[serde(rename = "w-associated")]
    WeightedAssociatedRandom,
}

impl RandomMode {
    pub const ALL: [RandomMode; 5] = [
        Self::FullyRandom,
        Self::ShuffleRandom,
        Self::AssociatedRandom,
        Self::WeightedShuffleRandom,
        Self::WeightedAssociatedRandom,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Self::FullyRandom => "fully",
            Self::ShuffleRandom => "shuffle",
            Self::AssociatedRandom => "associated",
            Self::WeightedShuffleRandom => "w-shuffle",
            Self::WeightedAssociatedRandom => "w-associated",
        }
    }

    pub fn is_weighted(self) -> bool {
        matches!(self, Self::WeightedShuffleRandom | Self::WeightedAssociatedRandom)
    }

    pub fn is_associated(self) -> bool {
        matches!(self, Self::AssociatedRandom | Self::WeightedAssociatedRandom)
    }

    pub fn needs_dictionary(self) -> bool {
        self == Self::FullyRandom
    }
}

impl fmt::Display for RandomMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for RandomMode {
    type Err = Error;

    /// Accepts the short tags plus `-random` / `_random` suffixed forms.
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        let norm = norm.strip_suffix("-random").unwrap_or(&norm);
        let norm = match norm {
            "weighted-shuffle" => "w-shuffle",
            "weighted-associated" => "w-associated",
            other => other,
        };
        Self::ALL
            .into_iter()
            .find(|m| m.tag() == norm)
            .ok_or_else(|| Error::invalid(format!("unknown random mode `{s}`")))
    }
}

/// Word frequencies over the non-stopwords of one dimension's assessment
/// explanations, overall and per normalized score.
#[derive(Debug, Clone, PartialEq)]
pub struct VocabProfile {
    pub global: BTreeMap<String, u64>,
    pub per_score: BTreeMap<OrderedFloat<f64>, BTreeMap<String, u64>>,
    pub stopwords: WordSet,
}

/// Punctuation-only tokens are not words.
fn is_content_word(w: &str, stopwords: &WordSet) -> bool {
    w.chars().any(char::is_alphanumeric) && !stopwords.contains(w)
}

pub fn build_vocab_profile(corpus: &Corpus, dim: Dimension, stopwords: &WordSet) -> Result<VocabProfile> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let mut global: BTreeMap<String, u64> = BTreeMap::new();
    let mut per_score: BTreeMap<OrderedFloat<f64>, BTreeMap<String, u64>> = BTreeMap::new();
    for r in corpus.iter() {
        let Some(score) = r.scores.get(dim) else { continue };
        for w in words(r.assessment(dim)).filter(|w| is_content_word(w, stopwords)) {
            *global.entry(w.to_string()).or_default() += 1;
            *per_score
                .entry(OrderedFloat(score))
                .or_default()
                .entry(w.to_string())
                .or_default() += 1;
        }
    }
    if global.is_empty() {
        return Err(Error::Empty("explanation vocabulary"));
    }
    Ok(VocabProfile {
        global,
        per_score,
        stopwords: stopwords.clone(),
    })
}

/// Word source for one (mode, score) pair, built once and sampled many times.
#[derive(Debug, Clone)]
pub struct Sampler<'a> {
    support: Vec<&'a str>,
    weights: Option<WeightedIndex<u64>>,
}

impl<'a> Sampler<'a> {
    pub fn new(mode: RandomMode, score_norm: f64, profile: &'a VocabProfile, dictionary: &'a WordList) -> Result<Self> {
        let freq: &BTreeMap<String, u64> = match mode {
            RandomMode::FullyRandom => {
                if dictionary.words.is_empty() {
                    return Err(Error::Empty("dictionary"));
                }
                return Ok(Sampler {
                    support: dictionary.words.iter().map(String::as_str).collect(),
                    weights: None,
                });
            }
            RandomMode::ShuffleRandom | RandomMode::WeightedShuffleRandom => &profile.global,
            RandomMode::AssociatedRandom | RandomMode::WeightedAssociatedRandom => profile
                .per_score
                .get(&OrderedFloat(score_norm))
                .filter(|m| !m.is_empty())
                .ok_or_else(|| Error::MissingField {
                    id: format!("score {score_norm}"),
                    what: "per-score vocabulary".into(),
                })?,
        };
        if freq.is_empty() {
            return Err(Error::Empty("vocabulary"));
        }
        let support: Vec<&str> = freq.keys().map(String::as_str).collect();
        let weights = if mode.is_weighted() {
            Some(WeightedIndex::new(freq.values().copied()).map_err(|e| Error::invalid(e.to_string()))?)
        } else {
            None
        };
        Ok(Sampler { support, weights })
    }

    pub fn support(&self) -> &[&'a str] {
        &self.support
    }

    pub fn word(&self, rng: &mut impl Rng) -> &'a str {
        let k = match &self.weights {
            Some(w) => w.sample(rng),
            None => rng.gen_range(0..self.support.len()),
        };
        self.support[k]
    }

    /// `n_words` i.i.d. draws joined by single spaces.
    pub fn text(&self, n_words: usize, rng: &mut impl Rng) -> String {
        (0..n_words).map(|_| self.word(rng)).collect::<Vec<_>>().join(" ")
    }
}

pub fn gen_random_explanation(
    mode: RandomMode,
    score_norm: f64,
    profile: &VocabProfile,
    dictionary: &WordList,
    n_words: usize,
    rng: &mut impl Rng,
) -> Result<String> {
    if n_words == 0 {
        return Err(Error::invalid("n_words must be at least 1"));
    }
    Ok(Sampler::new(mode, score_norm, profile, dictionary)?.text(n_words, rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthPolicy {
    /// Same word count as the explanation being replaced.
    #[default]
    Match,
    Fixed(usize),
}

/// Replaces every record's `dim` assessment explanation with random words.
/// Records whose target length is zero get an empty explanation. Each record
/// draws from its own generator seeded from `(seed, id)`.
pub fn substitute_explanations(
    corpus: &Corpus,
    dim: Dimension,
    mode: RandomMode,
    profile: &VocabProfile,
    dictionary: &WordList,
    length: LengthPolicy,
    seed: u64,
) -> Result<Corpus> {
    let records = corpus
        .records
        .par_iter()
        .map(|r| {
            let score = r.scores.get(dim).ok_or_else(|| Error::MissingField {
                id: r.id.clone(),
                what: format!("{dim} score"),
            })?;
            let n = match length {
                LengthPolicy::Match => word_count(r.assessment(dim)),
                LengthPolicy::Fixed(n) => n,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("augment-{}", r.id)));
            let text = if n == 0 {
                String::new()
            } else {
                gen_random_explanation(mode, score, profile, dictionary, n, &mut rng)?
            };
            let mut out = r.clone();
            let entry = out.explanations.entry(dim).or_insert_with(Explanations::default);
            entry.assessment = text;
            out.provenance.push(format!("random:{mode}:{seed}"));
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_fixture, Conversation, Record, Source, SynthConfig, Turn};
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    use std::collections::BTreeSet;

    fn record(id: &str, score: f64, text: &str) -> Record {
        let mut r = Record::new(Conversation {
            id: id.into(),
            source: Source::Synthetic,
            turns: vec![Turn::user("q ?"), Turn::assistant("a .")],
        });
        r.scores.set(Dimension::Naturalness, score);
        r.explanations.insert(
            Dimension::Naturalness,
            Explanations {
                assessment: text.into(),
                confidence: String::new(),
            },
        );
        r
    }

    fn corpus(rs: Vec<Record>) -> Corpus {
        Corpus::new(rs).unwrap()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn profile_direct_count() {
        let c = corpus(vec![record("a", 1.0, "good good answer")]);
        let p = build_vocab_profile(&c, Dimension::Naturalness, &WordSet::stopwords_v1()).unwrap();
        let want: BTreeMap<String, u64> = [("answer".to_string(), 1), ("good".to_string(), 2)].into();
        assert_eq!(p.global, want);
        assert_eq!(p.per_score[&OrderedFloat(1.0)], want);
        assert_eq!(p.per_score.len(), 1);
    }

    #[test]
    fn all_stopwords_is_error() {
        let c = corpus(vec![record("a", 1.0, "the and of it ."), record("b", 0.5, "")]);
        assert!(build_vocab_profile(&c, Dimension::Naturalness, &WordSet::stopwords_v1()).is_err());
        assert!(build_vocab_profile(&Corpus::default(), Dimension::Naturalness, &WordSet::stopwords_v1()).is_err());
    }

    #[test]
    fn profile_matches_recount() {
        let c = synth_fixture(&SynthConfig::new(11, 1000));
        let stop = WordSet::stopwords_v1();
        let p = build_vocab_profile(&c, Dimension::OnTopic, &stop).unwrap();
        let mut global: BTreeMap<String, u64> = BTreeMap::new();
        let mut per: BTreeMap<u64, BTreeMap<String, u64>> = BTreeMap::new();
        for r in &c.records {
            let s = r.scores.on_topic.unwrap();
            for w in r.explanations[&Dimension::OnTopic].assessment.split(' ') {
                if w.is_empty() || stop.contains(w) || !w.chars().any(|c| c.is_ascii_alphanumeric()) {
                    continue;
                }
                *global.entry(w.into()).or_default() += 1;
                *per.entry(s.to_bits()).or_default().entry(w.into()).or_default() += 1;
            }
        }
        assert_eq!(p.global, global);
        for (k, m) in &p.per_score {
            assert_eq!(&per[&k.0.to_bits()], m);
            assert!(m.keys().all(|w| !stop.contains(w)));
        }
        let summed: u64 = p.per_score.values().flat_map(|m| m.values()).sum();
        assert_eq!(summed, p.global.values().sum::<u64>());
    }

    fn disjoint_profile() -> VocabProfile {
        let c = corpus(vec![
            record("a", 0.0, "alpha beta gamma"),
            record("b", 0.5, "delta epsilon"),
            record("c", 1.0, "zeta eta theta iota"),
            record("d", 1.0, "zeta zeta"),
        ]);
        build_vocab_profile(&c, Dimension::Naturalness, &WordSet::stopwords_v1()).unwrap()
    }

    #[test]
    fn mode_supports_are_exact() {
        let p = disjoint_profile();
        let dict = WordList::parse("red\ngreen\nblue\n");
        let mut r = rng(3);
        for mode in RandomMode::ALL {
            for score in [0.0, 0.5, 1.0] {
                let expected: BTreeSet<&str> = match mode {
                    RandomMode::FullyRandom => dict.words.iter().map(String::as_str).collect(),
                    m if m.is_associated() => p.per_score[&OrderedFloat(score)].keys().map(String::as_str).collect(),
                    _ => p.global.keys().map(String::as_str).collect(),
                };
                let s = Sampler::new(mode, score, &p, &dict).unwrap();
                let seen: BTreeSet<&str> = (0..10_000).map(|_| s.word(&mut r)).collect();
                assert_eq!(seen, expected, "{mode} at {score}");
            }
        }
    }

    #[test]
    fn missing_score_vocabulary_is_error() {
        let p = disjoint_profile();
        let dict = WordList::parse("x\n");
        assert!(gen_random_explanation(RandomMode::AssociatedRandom, 0.25, &p, &dict, 3, &mut rng(0)).is_err());
        assert!(
            gen_random_explanation(RandomMode::FullyRandom, 0.0, &p, &WordList::parse(""), 3, &mut rng(0)).is_err()
        );
        assert!(gen_random_explanation(RandomMode::ShuffleRandom, 0.0, &p, &dict, 0, &mut rng(0)).is_err());
    }

    #[test]
    fn single_word_support() {
        let c = corpus(vec![record("a", 1.0, "lonely")]);
        let p = build_vocab_profile(&c, Dimension::Naturalness, &WordSet::stopwords_v1()).unwrap();
        let dict = WordList::parse("x\n");
        for mode in &RandomMode::ALL[1..] {
            assert_eq!(
                gen_random_explanation(*mode, 1.0, &p, &dict, 1, &mut rng(1)).unwrap(),
                "lonely"
            );
        }
        let t = gen_random_explanation(RandomMode::ShuffleRandom, 1.0, &p, &dict, 4, &mut rng(1)).unwrap();
        assert_eq!(word_count(&t), 4);
    }

    fn chi_square_p(counts: &[u64], probs: &[f64]) -> f64 {
        let n: u64 = counts.iter().sum();
        let stat: f64 = counts
            .iter()
            .zip(probs)
            .map(|(&o, &p)| {
                let e = p * n as f64;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
    }

    #[test]
    fn weighted_two_word_vocab() {
        let c = corpus(vec![record("a", 1.0, "a a a b")]);
        let p = build_vocab_profile(&c, Dimension::Naturalness, &WordSet::parse("")).unwrap();
        let dict = WordList::parse("x\n");
        let s = Sampler::new(RandomMode::WeightedShuffleRandom, 1.0, &p, &dict).unwrap();
        let mut r = rng(17);
        let hits = (0..100_000).filter(|_| s.word(&mut r) == "a").count();
        let frac = hits as f64 / 100_000.0;
        assert!((0.745..=0.755).contains(&frac), "{frac}");
    }

    #[test]
    fn weighted_modes_fit_frequencies() {
        let c = synth_fixture(&SynthConfig::new(5, 400));
        let p = build_vocab_profile(&c, Dimension::Comprehensiveness, &WordSet::stopwords_v1()).unwrap();
        let dict = WordList::parse("x\n");
        for (mode, freq) in [
            (RandomMode::WeightedShuffleRandom, &p.global),
            (RandomMode::WeightedAssociatedRandom, &p.per_score[&OrderedFloat(0.5)]),
        ] {
            let s = Sampler::new(mode, 0.5, &p, &dict).unwrap();
            let index: BTreeMap<&str, usize> = s.support().iter().enumerate().map(|(i, w)| (*w, i)).collect();
            let mut counts = vec![0u64; index.len()];
            let mut r = rng(23);
            for _ in 0..100_000 {
                counts[index[s.word(&mut r)]] += 1;
            }
            let total: u64 = freq.values().sum();
            let probs: Vec<f64> = freq.values().map(|&f| f as f64 / total as f64).collect();
            let pval = chi_square_p(&counts, &probs);
            assert!(pval > 0.001, "{mode}: p = {pval}");
        }
    }

    #[test]
    fn unweighted_within_three_sigma() {
        let p = disjoint_profile();
        let dict = WordList::dictionary_v1();
        for mode in [RandomMode::ShuffleRandom, RandomMode::AssociatedRandom] {
            let s = Sampler::new(mode, 1.0, &p, &dict).unwrap();
            let k = s.support().len() as f64;
            let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
            let mut r = rng(29);
            let n = 100_000.0;
            for _ in 0..100_000 {
                *counts.entry(s.word(&mut r)).or_default() += 1;
            }
            let sigma = (n * (1.0 / k) * (1.0 - 1.0 / k)).sqrt();
            for &c in counts.values() {
                assert!((c as f64 - n / k).abs() < 3.0 * sigma, "{mode}");
            }
        }
    }

    #[test]
    fn substitution_contracts() {
        let c = synth_fixture(&SynthConfig::new(8, 200));
        let stop = WordSet::stopwords_v1();
        let dim = Dimension::Naturalness;
        let p = build_vocab_profile(&c, dim, &stop).unwrap();
        let original: BTreeSet<String> = p.global.keys().cloned().collect();
        let full = WordList::dictionary_v1();
        let disjoint: Vec<&str> = full
            .words
            .iter()
            .map(String::as_str)
            .filter(|w| !original.contains(*w))
            .collect();
        let dict = WordList::parse(&disjoint.join("\n"));
        for mode in RandomMode::ALL {
            let a = substitute_explanations(&c, dim, mode, &p, &dict, LengthPolicy::Match, 4).unwrap();
            let b = substitute_explanations(&c, dim, mode, &p, &dict, LengthPolicy::Match, 4).unwrap();
            assert_eq!(a.to_jsonl(), b.to_jsonl());
            assert_eq!(a.len(), c.len());
            for (x, y) in a.iter().zip(c.iter()) {
                assert_eq!(x.id, y.id);
                assert_eq!(x.scores, y.scores);
                assert_eq!(x.turns, y.turns);
                assert_eq!(word_count(x.assessment(dim)), word_count(y.assessment(dim)));
                assert_eq!(x.confidence(dim), y.confidence(dim));
                assert_eq!(x.explanations[&Dimension::OnTopic], y.explanations[&Dimension::OnTopic]);
                if mode == RandomMode::FullyRandom {
                    assert!(words(x.assessment(dim)).all(|w| !original.contains(w)));
                }
            }
        }
        let fixed =
            substitute_explanations(&c, dim, RandomMode::ShuffleRandom, &p, &dict, LengthPolicy::Fixed(5), 1).unwrap();
        assert!(fixed.iter().all(|r| word_count(r.assessment(dim)) == 5));
    }

    #[test]
    fn mode_names_parse() {
        for m in RandomMode::ALL {
            assert_eq!(m.tag().parse::<RandomMode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.tag()));
        }
        assert_eq!("fully-random".parse::<RandomMode>().unwrap(), RandomMode::FullyRandom);
        assert_eq!(
            "weighted_associated_random".parse::<RandomMode>().unwrap(),
            RandomMode::WeightedAssociatedRandom
        );
        assert!("noise".parse::<RandomMode>().is_err());
    }
}
