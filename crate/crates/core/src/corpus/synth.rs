//! Synthetic conversations with planted, detectable defects.
//!
//! Each record gets one user request naming four items from a topic and one
//! assistant reply. Per dimension a defect is planted with the configured
//! probability and a severity `s` in `1..=4`; the raw 1-5 score is `5 - s`.
//!
//! * naturalness: a filler word repeated `s + 1` times,
//! * comprehensiveness: `s` of the requested items are never mentioned,
//! * on-topic: `s` sentences about an unrelated topic are inserted.
//!
//! Explanations are templated and name the defect words.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, Dimension, Explanations, Record, ScoreScale, Scores, Source, Turn};
use crate::text::{derive_seed, word_count};

pub const TOPICS: [(&str, [&str; 12]); 8] = [
    (
        "cooking",
        [
            "oven", "garlic", "pasta", "basil", "skillet", "dough", "broth", "pepper", "onion", "butter", "recipe",
            "spice",
        ],
    ),
    (
        "travel",
        [
            "passport", "luggage", "airport", "hotel", "ticket", "museum", "beach", "train", "map", "visa", "harbor",
            "cabin",
        ],
    ),
    (
        "music",
        [
            "guitar", "piano", "melody", "chord", "drum", "violin", "concert", "rhythm", "album", "singer", "tempo",
            "lyric",
        ],
    ),
    (
        "gardening",
        [
            "tomato", "compost", "seedling", "soil", "mulch", "rose", "shovel", "hedge", "orchard", "fern", "tulip",
            "trellis",
        ],
    ),
    (
        "astronomy",
        [
            "planet",
            "comet",
            "telescope",
            "galaxy",
            "nebula",
            "orbit",
            "meteor",
            "moon",
            "asteroid",
            "eclipse",
            "star",
            "rocket",
        ],
    ),
    (
        "fitness",
        [
            "squat",
            "treadmill",
            "yoga",
            "dumbbell",
            "sprint",
            "stretch",
            "protein",
            "marathon",
            "plank",
            "bicycle",
            "rowing",
            "sauna",
        ],
    ),
    (
        "finance",
        [
            "budget", "savings", "mortgage", "stock", "pension", "invoice", "loan", "dividend", "tax", "credit",
            "bond", "wallet",
        ],
    ),
    (
        "painting",
        [
            "canvas", "brush", "easel", "palette", "acrylic", "portrait", "sketch", "varnish", "pigment", "mural",
            "charcoal", "gallery",
        ],
    ),
];

pub const ADJECTIVES: [&str; 20] = [
    "useful",
    "simple",
    "popular",
    "cheap",
    "important",
    "quick",
    "reliable",
    "fun",
    "helpful",
    "common",
    "modern",
    "classic",
    "tricky",
    "safe",
    "strong",
    "gentle",
    "bright",
    "fresh",
    "flexible",
    "practical",
];

pub const FILLERS: [&str; 8] = [
    "basically",
    "honestly",
    "actually",
    "literally",
    "totally",
    "really",
    "seriously",
    "truly",
];

const OPENERS: [&str; 5] = [
    "can you tell me about",
    "please describe",
    "i want to learn about",
    "could you explain",
    "what should i know about",
];

const LINKS: [&str; 3] = ["is", "seems", "looks"];

const COUNT_WORDS: [&str; 6] = ["zero", "one", "two", "three", "four", "five"];

const ELABORATION: [&str; 12] = [
    "overall the reply would leave a typical reader with a clear impression of its quality",
    "a careful reviewer would notice the same pattern when reading the answer again",
    "the wording of the reply shapes how the user perceives the assistant",
    "this judgement considers the request, the reply and the expected standard together",
    "similar replies in other conversations usually receive comparable ratings",
    "the rating reflects the evidence visible inside the text of the reply",
    "a human expert would likely reach a similar verdict after reading the exchange",
    "the reply structure and vocabulary both contribute to the final rating",
    "nothing outside the conversation was needed to reach this verdict",
    "the verdict follows the rating guidelines for this quality dimension",
    "each sentence of the reply was checked against the request",
    "the final rating balances strengths and weaknesses observed in the reply",
];

/// Per-dimension probability of planting a defect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefectRates {
    pub naturalness: f64,
    pub comprehensiveness: f64,
    pub on_topic: f64,
}

impl DefectRates {
    pub fn uniform(rate: f64) -> Self {
        DefectRates {
            naturalness: rate,
            comprehensiveness: rate,
            on_topic: rate,
        }
    }

    pub fn get(&self, dim: Dimension) -> f64 {
        match dim {
            Dimension::Naturalness => self.naturalness,
            Dimension::Comprehensiveness => self.comprehensiveness,
            Dimension::OnTopic => self.on_topic,
        }
    }
}

impl Default for DefectRates {
    fn default() -> Self {
        DefectRates::uniform(0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n: usize,
    pub defect_rates: DefectRates,
    pub source: Source,
    /// Pads every assessment explanation to at least this many words.
    pub min_assessment_words: usize,
    /// Per-dimension probability that the stored score is off by one raw
    /// point from the planted severity, as when annotators disagree. The
    /// explanations keep describing the planted defect.
    pub score_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n: 0,
            defect_rates: DefectRates::default(),
            source: Source::Synthetic,
            min_assessment_words: 0,
            score_noise: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn new(seed: u64, n: usize) -> Self {
        SynthConfig {
            seed,
            n,
            ..Self::default()
        }
    }
}

/// Planted defect severity per dimension (0 = clean).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Severities {
    naturalness: u8,
    comprehensiveness: u8,
    on_topic: u8,
}

pub fn synth_fixture(cfg: &SynthConfig) -> Corpus {
    for dim in Dimension::ALL {
        let r = cfg.defect_rates.get(dim);
        assert!((0.0..=1.0).contains(&r), "defect rate {r} for {dim} outside [0, 1]");
    }
    let id_tag = derive_seed(cfg.seed, "synth-id") as u32;
    let records = (0..cfg.n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("synth-record-{i}")));
            let id = format!("{}-{id_tag:08x}-{i:06}", cfg.source.tag());
            synth_record(id, cfg, &mut rng)
        })
        .collect();
    Corpus { records }
}

fn severity(rng: &mut ChaCha8Rng, rate: f64) -> u8 {
    if rng.gen_bool(rate) {
        rng.gen_range(1..=4)
    } else {
        0
    }
}

fn join_items(items: &[&str]) -> String {
    match items.len() {
        0 => String::new(),
        1 => items[0].to_owned(),
        n => format!("{} and {}", items[..n - 1].join(" , "), items[n - 1]),
    }
}

fn synth_record(id: String, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Record {
    let sev = Severities {
        naturalness: severity(rng, cfg.defect_rates.naturalness),
        comprehensiveness: severity(rng, cfg.defect_rates.comprehensiveness),
        on_topic: severity(rng, cfg.defect_rates.on_topic),
    };

    let topic_idx = rng.gen_range(0..TOPICS.len());
    let (topic, nouns) = TOPICS[topic_idx];
    let mut pool: Vec<&str> = nouns.to_vec();
    pool.shuffle(rng);
    let requested: Vec<&str> = pool[..4].to_vec();

    let user = format!(
        "{} the {} ?",
        OPENERS[rng.gen_range(0..OPENERS.len())],
        join_items(&requested)
    );

    // Which requested items get omitted.
    let mut order: Vec<usize> = (0..4).collect();
    order.shuffle(rng);
    let omitted_idx: Vec<usize> = {
        let mut v = order[..usize::from(sev.comprehensiveness)].to_vec();
        v.sort_unstable();
        v
    };
    let omitted: Vec<&str> = omitted_idx.iter().map(|&i| requested[i]).collect();
    let covered: Vec<&str> = (0..4)
        .filter(|i| !omitted_idx.contains(i))
        .map(|i| requested[i])
        .collect();

    let sentence = |rng: &mut ChaCha8Rng, noun: &str| -> Vec<String> {
        let link = LINKS[rng.gen_range(0..LINKS.len())];
        let adj = ADJECTIVES[rng.gen_range(0..ADJECTIVES.len())];
        vec![noun.to_owned(), link.to_owned(), adj.to_owned(), ".".to_owned()]
    };

    let mut sentences: Vec<Vec<String>> = covered.iter().map(|n| sentence(rng, n)).collect();
    if sentences.is_empty() {
        sentences.push(
            ["i", "am", "not", "sure", "about", "that", "."]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        );
    }

    // Off-topic sentences.
    let off_topic_idx = (topic_idx + rng.gen_range(1..TOPICS.len())) % TOPICS.len();
    let (off_topic, off_nouns) = TOPICS[off_topic_idx];
    let mut off_pool = off_nouns.to_vec();
    off_pool.shuffle(rng);
    let off_words: Vec<&str> = off_pool[..usize::from(sev.on_topic)].to_vec();
    for w in &off_words {
        let s = sentence(rng, w);
        let at = rng.gen_range(0..=sentences.len());
        sentences.insert(at, s);
    }

    let mut words: Vec<String> = sentences.into_iter().flatten().collect();

    // Filler repetition; a clean reply may still use the filler once.
    let filler = FILLERS[rng.gen_range(0..FILLERS.len())];
    let filler_count = if sev.naturalness > 0 {
        usize::from(sev.naturalness) + 1
    } else {
        rng.gen_range(0..=1)
    };
    for _ in 0..filler_count {
        let at = rng.gen_range(0..=words.len());
        words.insert(at, filler.to_owned());
    }
    let assistant = words.join(" ");

    let scale = ScoreScale::ONE_TO_FIVE;
    let mut noise =
        (cfg.score_noise > 0.0).then(|| ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("synth-noise-{id}"))));
    let mut score = |s: u8| {
        let mut raw = 5 - i32::from(s);
        if let Some(rng) = noise.as_mut() {
            if rng.gen_bool(cfg.score_noise) {
                let up = rng.gen_bool(0.5);
                raw = match raw {
                    1 => 2,
                    5 => 4,
                    r if up => r + 1,
                    r => r - 1,
                };
            }
        }
        scale.normalize(raw)
    };
    let scores = Scores {
        naturalness: Some(score(sev.naturalness)),
        comprehensiveness: Some(score(sev.comprehensiveness)),
        on_topic: Some(score(sev.on_topic)),
    };

    let mut explanations = BTreeMap::new();
    explanations.insert(
        Dimension::Naturalness,
        naturalness_explanations(sev.naturalness, filler, filler_count),
    );
    explanations.insert(
        Dimension::Comprehensiveness,
        comprehensiveness_explanations(sev.comprehensiveness, &requested, &omitted),
    );
    explanations.insert(
        Dimension::OnTopic,
        on_topic_explanations(sev.on_topic, topic, off_topic, &off_words),
    );
    if cfg.min_assessment_words > 0 {
        for e in explanations.values_mut() {
            elaborate(&mut e.assessment, cfg.min_assessment_words, rng);
        }
    }

    Record {
        id,
        source: cfg.source,
        turns: vec![Turn::user(user), Turn::assistant(assistant)],
        scores,
        explanations,
        provenance: Vec::new(),
        extra: BTreeMap::new(),
    }
}

fn severity_phrase(s: u8) -> &'static str {
    match s {
        1 => "slightly awkward",
        2 => "awkward",
        3 => "robotic",
        _ => "very robotic and scripted",
    }
}

fn naturalness_explanations(s: u8, filler: &str, count: usize) -> Explanations {
    if s == 0 {
        return Explanations {
            assessment: "the response sounds natural and fluent with varied wording .".into(),
            confidence: "i am confident because no repetition is visible .".into(),
        };
    }
    Explanations {
        assessment: format!(
            "the response repeats {filler} {} times which sounds {} .",
            COUNT_WORDS[count.min(5)],
            severity_phrase(s)
        ),
        confidence: format!(
            "i am {} confident because the repeated {filler} is {} .",
            if s >= 3 { "highly" } else { "fairly" },
            if s >= 3 { "obvious" } else { "noticeable" }
        ),
    }
}

fn comprehensiveness_explanations(s: u8, requested: &[&str], omitted: &[&str]) -> Explanations {
    if s == 0 {
        return Explanations {
            assessment: format!("the response covers {} as requested .", join_items(requested)),
            confidence: "i am confident because every requested item is addressed .".into(),
        };
    }
    Explanations {
        assessment: format!(
            "the response never mentions {} which the user asked about .",
            join_items(omitted)
        ),
        confidence: format!(
            "i am {} confident because {} of four items are missing .",
            if s >= 3 { "highly" } else { "fairly" },
            COUNT_WORDS[usize::from(s)]
        ),
    }
}

fn on_topic_explanations(s: u8, topic: &str, off_topic: &str, off_words: &[&str]) -> Explanations {
    if s == 0 {
        return Explanations {
            assessment: format!("the response stays focused on {topic} without unrelated content ."),
            confidence: "i am confident because every sentence matches the request .".into(),
        };
    }
    Explanations {
        assessment: format!(
            "the response drifts into {off_topic} with {} which is unrelated to {topic} .",
            join_items(off_words)
        ),
        confidence: format!(
            "i am {} confident because {} unrelated sentences appear .",
            if s >= 3 { "highly" } else { "fairly" },
            COUNT_WORDS[usize::from(s)]
        ),
    }
}

fn elaborate(text: &mut String, min_words: usize, rng: &mut ChaCha8Rng) {
    while word_count(text) < min_words {
        let s = ELABORATION[rng.gen_range(0..ELABORATION.len())];
        text.push(' ');
        text.push_str(s);
        text.push_str(" .");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Speaker;

    #[test]
    fn zero_defects_give_top_scores() {
        let cfg = SynthConfig {
            defect_rates: DefectRates::uniform(0.0),
            ..SynthConfig::new(3, 200)
        };
        for r in &synth_fixture(&cfg) {
            for d in Dimension::ALL {
                assert_eq!(r.scores.get(d), Some(1.0));
            }
        }
    }

    #[test]
    fn same_seed_same_bytes_distinct_seed_distinct_ids() {
        let a = synth_fixture(&SynthConfig::new(5, 50)).to_jsonl();
        let b = synth_fixture(&SynthConfig::new(5, 50)).to_jsonl();
        assert_eq!(a, b);
        let c = synth_fixture(&SynthConfig::new(6, 50));
        let ids_a: std::collections::HashSet<_> = synth_fixture(&SynthConfig::new(5, 50))
            .records
            .into_iter()
            .map(|r| r.id)
            .collect();
        assert!(c.records.iter().all(|r| !ids_a.contains(&r.id)));
    }

    #[test]
    fn empty_when_n_is_zero() {
        assert!(synth_fixture(&SynthConfig::new(1, 0)).is_empty());
    }

    #[test]
    fn defect_fraction_within_binomial_bound() {
        let cfg = SynthConfig {
            defect_rates: DefectRates {
                naturalness: 0.5,
                comprehensiveness: 0.0,
                on_topic: 0.0,
            },
            ..SynthConfig::new(2024, 10_000)
        };
        let corpus = synth_fixture(&cfg);
        let degraded = corpus.iter().filter(|r| r.scores.naturalness.unwrap() < 1.0).count();
        let frac = degraded as f64 / corpus.len() as f64;
        // 0.5 +- 6 sigma of Binomial(10000, 0.5) is +-0.03
        assert!((0.47..=0.53).contains(&frac), "{frac}");
    }

    #[test]
    fn defects_are_detectable_from_text() {
        let corpus = synth_fixture(&SynthConfig::new(9, 500));
        for r in &corpus {
            assert!(r.validate().is_ok());
            assert_eq!(r.turns.last().unwrap().speaker, Speaker::Assistant);
            let reply = r.turns.last().unwrap().text.as_str();
            let words: Vec<&str> = reply.split_whitespace().collect();
            let max_filler = FILLERS
                .iter()
                .map(|f| words.iter().filter(|w| *w == f).count())
                .max()
                .unwrap();
            let nat = r.scores.naturalness.unwrap();
            if max_filler <= 1 {
                assert_eq!(nat, 1.0);
            } else {
                assert_eq!(nat, ScoreScale::ONE_TO_FIVE.normalize(5 - (max_filler as i32 - 1)));
                assert!(r.assessment(Dimension::Naturalness).contains("repeats"));
            }
            // omitted items are named in the explanation and absent from the reply
            let comp = r.scores.comprehensiveness.unwrap();
            if comp < 1.0 {
                let expl = r.assessment(Dimension::Comprehensiveness);
                let named: Vec<&str> = expl
                    .split_whitespace()
                    .filter(|w| TOPICS.iter().any(|(_, ns)| ns.contains(w)))
                    .collect();
                assert_eq!(named.len(), 4 - ScoreScale::ONE_TO_FIVE.denormalize(comp) as usize + 1);
                for n in named {
                    assert!(!words.contains(&n));
                }
            }
        }
    }

    #[test]
    fn padding_reaches_minimum_length() {
        let cfg = SynthConfig {
            min_assessment_words: 150,
            ..SynthConfig::new(4, 20)
        };
        for r in &synth_fixture(&cfg) {
            for d in Dimension::ALL {
                assert!(word_count(r.assessment(d)) >= 150);
            }
        }
    }
}
