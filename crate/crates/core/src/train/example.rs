use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tokenizer::Tokenizer;
use crate::corpus::{Dimension, Record, ScoreScale, Speaker, Turn};
use crate::error::{Error, Result};
use crate::text::truncate_explanation;

/// Which explanation spans join the score token in the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplanationMode {
    None,
    Assessment,
    Confidence,
    Both,
}

impl ExplanationMode {
    pub const ALL: [ExplanationMode; 4] = [Self::None, Self::Assessment, Self::Confidence, Self::Both];

    pub fn tag(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Assessment => "assessment",
            Self::Confidence => "confidence",
            Self::Both => "both",
        }
    }

    pub fn uses_assessment(self) -> bool {
        matches!(self, Self::Assessment | Self::Both)
    }

    pub fn uses_confidence(self) -> bool {
        matches!(self, Self::Confidence | Self::Both)
    }
}

impl fmt::Display for ExplanationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ExplanationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| Error::invalid(format!("unknown explanation mode `{s}`")))
    }
}

/// A token stream with per-position loss masks. `train_mask[i]` and
/// `eval_mask[i]` refer to predicting `tokens[i]` from `tokens[..i]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TrainingExample {
    pub tokens: Vec<usize>,
    pub train_mask: Vec<bool>,
    pub eval_mask: Vec<bool>,
    pub score_position: usize,
}

impl TrainingExample {
    /// Drops trailing positions beyond `max_len`. The score token must survive.
    pub fn clip(mut self, max_len: usize) -> Result<Self> {
        if self.score_position >= max_len {
            return Err(Error::ContextOverflow {
                len: self.score_position + 1,
                max: max_len,
            });
        }
        self.tokens.truncate(max_len);
        self.train_mask.truncate(max_len);
        self.eval_mask.truncate(max_len);
        Ok(self)
    }
}

pub(crate) fn prompt_tokens(tok: &Tokenizer, turns: &[Turn], dimension: Dimension) -> Vec<usize> {
    let mut out = vec![tok.bos(), tok.id("rate"), tok.id(dimension.tag()), tok.id(":")];
    for t in turns {
        out.push(tok.id(match t.speaker {
            Speaker::User => "user",
            Speaker::Assistant => "assistant",
        }));
        out.push(tok.id(":"));
        out.extend(tok.encode(&t.text));
    }
    out.push(tok.id("score"));
    out.push(tok.id(":"));
    out
}

/// Serializes one record: prompt, the raw 1-5 score digit, then the
/// assessment and confidence spans selected by `mode`, each after a
/// `name :` marker. Truncation applies to explanation text before
/// tokenization; fully truncated spans are omitted with their marker.
pub fn build_example(
    record: &Record,
    dimension: Dimension,
    mode: ExplanationMode,
    tok: &Tokenizer,
    trunc: Option<usize>,
) -> Result<TrainingExample> {
    let score = record.scores.get(dimension).ok_or_else(|| Error::MissingField {
        id: record.id.clone(),
        what: format!("{dimension} score"),
    })?;
    let mut tokens = prompt_tokens(tok, &record.turns, dimension);
    let score_position = tokens.len();
    tokens.push(tok.score_token(ScoreScale::ONE_TO_FIVE.denormalize(score)));
    let mut train_mask = vec![false; tokens.len()];
    train_mask[score_position] = true;
    let mut eval_mask = train_mask.clone();

    let spans = [
        (mode.uses_assessment(), "assessment", record.assessment(dimension)),
        (mode.uses_confidence(), "confidence", record.confidence(dimension)),
    ];
    for (wanted, marker, text) in spans {
        if !wanted {
            continue;
        }
        if text.trim().is_empty() {
            return Err(Error::MissingField {
                id: record.id.clone(),
                what: format!("{dimension} {marker} explanation"),
            });
        }
        let text = match trunc {
            Some(n) => truncate_explanation(text, n),
            None => text.to_string(),
        };
        let body = tok.encode(&text);
        if body.is_empty() {
            continue;
        }
        tokens.push(tok.id(marker));
        tokens.push(tok.id(":"));
        tokens.extend(body);
        train_mask.resize(tokens.len(), true);
    }
    eval_mask.resize(tokens.len(), false);
    Ok(TrainingExample {
        tokens,
        train_mask,
        eval_mask,
        score_position,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_fixture, SynthConfig};

    fn setup() -> (Tokenizer, crate::corpus::Corpus) {
        let c = synth_fixture(&SynthConfig::new(3, 20));
        (Tokenizer::build(&c, 512, 16).unwrap(), c)
    }

    #[test]
    fn none_masks_score_only() {
        let (tok, c) = setup();
        let r = c.iter().next().unwrap();
        let ex = build_example(r, Dimension::Naturalness, ExplanationMode::None, &tok, None).unwrap();
        assert_eq!(ex.train_mask, ex.eval_mask);
        assert_eq!(ex.train_mask.iter().filter(|&&m| m).count(), 1);
        assert!(ex.train_mask[ex.score_position]);
        assert_eq!(ex.tokens.len(), ex.score_position + 1);
        let s = ScoreScale::ONE_TO_FIVE.denormalize(r.scores.naturalness.unwrap());
        assert_eq!(tok.token(ex.tokens[ex.score_position]), Some(s.to_string().as_str()));
    }

    #[test]
    fn both_masks_score_and_explanations() {
        let (tok, c) = setup();
        let r = c.iter().next().unwrap();
        let dim = Dimension::OnTopic;
        let ex = build_example(r, dim, ExplanationMode::Both, &tok, None).unwrap();
        let none = build_example(r, dim, ExplanationMode::None, &tok, None).unwrap();
        assert_eq!(ex.eval_mask[..none.eval_mask.len()], none.eval_mask[..]);
        assert!(ex.eval_mask[none.eval_mask.len()..].iter().all(|&m| !m));
        let expected = 1 + 2 + tok.encode(r.assessment(dim)).len() + 2 + tok.encode(r.confidence(dim)).len();
        assert_eq!(ex.train_mask.iter().filter(|&&m| m).count(), expected);
        assert!(ex.train_mask[..ex.score_position].iter().all(|&m| !m));
        for (t, e) in ex.train_mask.iter().zip(&ex.eval_mask) {
            assert!(!*e || *t);
        }
    }

    #[test]
    fn zero_truncation_equals_none() {
        let (tok, c) = setup();
        for r in c.iter() {
            for mode in ExplanationMode::ALL {
                let a = build_example(r, Dimension::Comprehensiveness, mode, &tok, Some(0)).unwrap();
                let b = build_example(r, Dimension::Comprehensiveness, ExplanationMode::None, &tok, None).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn missing_explanation_is_error() {
        let (tok, c) = setup();
        let mut r = c.iter().next().unwrap().clone();
        r.explanations.clear();
        assert!(build_example(&r, Dimension::Naturalness, ExplanationMode::Assessment, &tok, None).is_err());
        assert!(build_example(&r, Dimension::Naturalness, ExplanationMode::None, &tok, None).is_ok());
    }

    #[test]
    fn clip_keeps_score() {
        let (tok, c) = setup();
        let r = c.iter().next().unwrap();
        let ex = build_example(r, Dimension::Naturalness, ExplanationMode::Both, &tok, None).unwrap();
        let p = ex.score_position;
        let clipped = ex.clone().clip(p + 3).unwrap();
        assert_eq!(clipped.tokens.len(), p + 3);
        assert!(ex.clip(p).is_err());
    }
}
