//! Conversation corpora: record types, JSONL I/O, mixed-dataset construction,
//! positional and lexical profiles, and the synthetic fixture generator.

mod io;
mod mixed;
mod stats;
pub mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_corpus, LoadOptions, SCHEMA_VERSION};
pub use mixed::build_mixed;
pub use stats::{nonstopword_profile, score_distribution, token_length_histogram, Histogram, TokenLength};
pub use synth::{synth_fixture, DefectRates, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Turn {
            speaker: Speaker::User,
            text: text.into(),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Turn {
            speaker: Speaker::Assistant,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "chatbotac")]
    ChatbotAc,
    #[serde(rename = "hh-c")]
    HhC,
    #[serde(rename = "hh-r")]
    HhR,
    #[serde(rename = "amazonqa")]
    AmazonQa,
    #[serde(rename = "coqa")]
    CoQa,
    #[serde(rename = "movies")]
    Movies,
    #[serde(rename = "synthetic")]
    Synthetic,
}

impl Source {
    pub const PUBLIC: [Source; 6] = [
        Source::ChatbotAc,
        Source::HhC,
        Source::HhR,
        Source::AmazonQa,
        Source::CoQa,
        Source::Movies,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Source::ChatbotAc => "chatbotac",
            Source::HhC => "hh-c",
            Source::HhR => "hh-r",
            Source::AmazonQa => "amazonqa",
            Source::CoQa => "coqa",
            Source::Movies => "movies",
            Source::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Source::PUBLIC
            .iter()
            .chain(std::iter::once(&Source::Synthetic))
            .copied()
            .find(|src| src.tag() == s)
            .ok_or_else(|| Error::invalid(format!("unknown source tag `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dimension {
    #[serde(rename = "naturalness")]
    Naturalness,
    #[serde(rename = "comprehensiveness")]
    Comprehensiveness,
    #[serde(rename = "on_topic")]
    OnTopic,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Dimension::Naturalness, Dimension::Comprehensiveness, Dimension::OnTopic];

    pub fn tag(self) -> &'static str {
        match self {
            Dimension::Naturalness => "naturalness",
            Dimension::Comprehensiveness => "comprehensiveness",
            Dimension::OnTopic => "on_topic",
        }
    }

    /// Human-readable definition used inside judge prompts.
    pub fn definition(self) -> &'static str {
        match self {
            Dimension::Naturalness => {
                "Naturalness assesses how natural a response sounds. A response which sounds \
                 artificial, robotic or unlike how a human would respond would score low on \
                 naturalness. Other factors which may lower the naturalness score could be \
                 repetitive phrases, redundant follow-up questions, a mismatch in responding to \
                 the user's conversational style, tone or emotions. In general, if a conversation \
                 has a scripted quality to it, it would score poorly on this dimension."
            }
            Dimension::Comprehensiveness => {
                "Comprehensiveness measures if a response addresses all the salient details in a \
                 user's question or request. A highly comprehensive response offers a thorough and \
                 holistic overview of all the requested information, while capturing diverse \
                 perspectives if applicable. If a response were incomplete, missing critical \
                 information, or failing to cover the requested topic adequately, it would score \
                 poorly on comprehensiveness."
            }
            Dimension::OnTopic => {
                "On-Topic refers to how directly relevant and aligned a response is to the user's \
                 conversational intent, without deviating into unrelated information. A completely \
                 on-topic response stays focused on the user's query. Lower ratings indicate the \
                 response becomes increasingly indirectly related or incorporates off-topic \
                 elements. A totally off-topic response lacks meaningful connection to the user's \
                 original context."
            }
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Dimension {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naturalness" => Ok(Dimension::Naturalness),
            "comprehensiveness" => Ok(Dimension::Comprehensiveness),
            "on_topic" | "on-topic" | "ontopic" => Ok(Dimension::OnTopic),
            _ => Err(Error::invalid(format!("unknown dimension `{s}`"))),
        }
    }
}

/// Integer rating scale `lo..=hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScoreScale {
    pub lo: i32,
    pub hi: i32,
}

impl ScoreScale {
    pub const ONE_TO_FOUR: ScoreScale = ScoreScale { lo: 1, hi: 4 };
    pub const ONE_TO_FIVE: ScoreScale = ScoreScale { lo: 1, hi: 5 };

    pub fn new(lo: i32, hi: i32) -> Result<Self> {
        if lo != 1 || !(hi == 4 || hi == 5) {
            return Err(Error::invalid(format!("unsupported scale {lo}-{hi}")));
        }
        Ok(ScoreScale { lo, hi })
    }

    pub fn contains(&self, raw: i64) -> bool {
        raw >= i64::from(self.lo) && raw <= i64::from(self.hi)
    }

    /// Maps a raw score onto the unit interval: `(s - lo) / (hi - lo)`.
    pub fn normalize(&self, raw: i32) -> f64 {
        f64::from(raw - self.lo) / f64::from(self.hi - self.lo)
    }

    /// Nearest raw score for a normalized value.
    pub fn denormalize(&self, norm: f64) -> i32 {
        let span = f64::from(self.hi - self.lo);
        (self.lo + (norm.clamp(0.0, 1.0) * span).round() as i32).clamp(self.lo, self.hi)
    }

    pub fn values(&self) -> impl Iterator<Item = i32> {
        self.lo..=self.hi
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scores {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub naturalness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comprehensiveness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_topic: Option<f64>,
}

impl Scores {
    pub fn get(&self, dim: Dimension) -> Option<f64> {
        match dim {
            Dimension::Naturalness => self.naturalness,
            Dimension::Comprehensiveness => self.comprehensiveness,
            Dimension::OnTopic => self.on_topic,
        }
    }

    pub fn set(&mut self, dim: Dimension, value: f64) {
        let slot = match dim {
            Dimension::Naturalness => &mut self.naturalness,
            Dimension::Comprehensiveness => &mut self.comprehensiveness,
            Dimension::OnTopic => &mut self.on_topic,
        };
        *slot = Some(value);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Explanations {
    pub assessment: String,
    #[serde(default)]
    pub confidence: String,
}

/// The judged unit: ordered turns plus the tag of the corpus it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub source: Source,
    pub turns: Vec<Turn>,
}

impl Conversation {
    pub fn validate(&self) -> Result<()> {
        match self.turns.last() {
            None => Err(Error::invalid(format!("conversation `{}` has no turns", self.id))),
            Some(t) if t.speaker != Speaker::Assistant => Err(Error::invalid(format!(
                "conversation `{}` does not end with an assistant turn",
                self.id
            ))),
            Some(_) => Ok(()),
        }
    }

    /// Text of the final (judged) assistant turn.
    pub fn response(&self) -> &str {
        self.turns.last().map(|t| t.text.as_str()).unwrap_or("")
    }
}

/// One corpus line: a conversation plus its merged scores and explanations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub source: Source,
    pub turns: Vec<Turn>,
    #[serde(default)]
    pub scores: Scores,
    #[serde(default)]
    pub explanations: BTreeMap<Dimension, Explanations>,
    #[serde(default)]
    pub provenance: Vec<String>,
    /// Unknown top-level fields, kept only when loading in lax mode.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl Record {
    pub fn new(conversation: Conversation) -> Self {
        Record {
            id: conversation.id,
            source: conversation.source,
            turns: conversation.turns,
            scores: Scores::default(),
            explanations: BTreeMap::new(),
            provenance: Vec::new(),
            extra: BTreeMap::new(),
        }
    }

    pub fn conversation(&self) -> Conversation {
        Conversation {
            id: self.id.clone(),
            source: self.source,
            turns: self.turns.clone(),
        }
    }

    pub fn assessment(&self, dim: Dimension) -> &str {
        self.explanations.get(&dim).map(|e| e.assessment.as_str()).unwrap_or("")
    }

    pub fn confidence(&self, dim: Dimension) -> &str {
        self.explanations.get(&dim).map(|e| e.confidence.as_str()).unwrap_or("")
    }

    /// Projection onto one dimension. `None` when the record has no score for it.
    pub fn merged(&self, dim: Dimension) -> Option<MergedRecord> {
        let score_norm = self.scores.get(dim)?;
        Some(MergedRecord {
            conversation_id: self.id.clone(),
            dimension: dim,
            score_norm,
            assessment_explanation: self.assessment(dim).to_owned(),
            confidence_explanation: self.confidence(dim).to_owned(),
            provenance: self.provenance.clone(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.conversation().validate()?;
        for dim in Dimension::ALL {
            if let Some(s) = self.scores.get(dim) {
                if !(0.0..=1.0).contains(&s) {
                    return Err(Error::invalid(format!(
                        "record `{}`: {dim} score {s} outside [0, 1]",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Unified ground truth for one (conversation, dimension).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedRecord {
    pub conversation_id: String,
    pub dimension: Dimension,
    pub score_norm: f64,
    pub assessment_explanation: String,
    pub confidence_explanation: String,
    pub provenance: Vec<String>,
}

/// Ordered collection of records with unique ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub records: Vec<Record>,
}

impl Corpus {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        let mut seen = std::collections::HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        Ok(Corpus { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Record> {
        self.records.iter()
    }

    pub fn get(&self, id: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Canonical JSONL: one record per line, `\n`-terminated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the canonical serialization.
    pub fn content_hash(&self) -> String {
        crate::text::sha256_hex(self.to_jsonl().as_bytes())
    }

    /// Splits off the first `n` records.
    pub fn split_at(&self, n: usize) -> (Corpus, Corpus) {
        let n = n.min(self.records.len());
        (
            Corpus {
                records: self.records[..n].to_vec(),
            },
            Corpus {
                records: self.records[n..].to_vec(),
            },
        )
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Record;
    type IntoIter = std::slice::Iter<'a, Record>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}
