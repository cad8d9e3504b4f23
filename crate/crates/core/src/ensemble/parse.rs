use crate::corpus::ScoreScale;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedJudgment {
    pub raw_score: i32,
    pub assessment: String,
    pub confidence: String,
}

#[derive(Clone, Copy, PartialEq)]
enum Key {
    Score,
    Assessment,
    Confidence,
}

fn split_key(line: &str) -> Option<(Key, &str)> {
    let line = line.trim_start();
    for (prefix, key) in [
        ("SCORE:", Key::Score),
        ("ASSESSMENT:", Key::Assessment),
        ("CONFIDENCE:", Key::Confidence),
    ] {
        if let Some(rest) = line.strip_prefix(prefix) {
            return Some((key, rest));
        }
    }
    None
}

/// Parses a `SCORE:` / `ASSESSMENT:` / `CONFIDENCE:` reply, optionally inside
/// a ``` fence. Explanation values may continue over following lines until
/// the next key.
pub fn parse_judgment(reply: &str, scale: ScoreScale) -> Result<ParsedJudgment> {
    let fail = |reason: String| Error::JudgmentParse {
        reason,
        reply: reply.to_string(),
    };
    let mut score: Option<&str> = None;
    let mut assessment: Option<String> = None;
    let mut confidence: Option<String> = None;
    let mut current: Option<Key> = None;
    for line in reply.lines() {
        if line.trim_start().starts_with("```") {
            current = None;
            continue;
        }
        match split_key(line) {
            Some((Key::Score, v)) => {
                if score.is_none() {
                    score = Some(v.trim());
                }
                current = None;
            }
            Some((k, v)) => {
                let slot = if k == Key::Assessment {
                    &mut assessment
                } else {
                    &mut confidence
                };
                if slot.is_none() {
                    *slot = Some(v.trim().to_string());
                    current = Some(k);
                } else {
                    current = None;
                }
            }
            None => {
                let slot = match current {
                    Some(Key::Assessment) => assessment.as_mut(),
                    Some(Key::Confidence) => confidence.as_mut(),
                    _ => None,
                };
                if let Some(s) = slot {
                    if !line.trim().is_empty() {
                        if !s.is_empty() {
                            s.push('\n');
                        }
                        s.push_str(line.trim());
                    }
                }
            }
        }
    }
    let raw = score.ok_or_else(|| fail("missing SCORE key".into()))?;
    let value: i64 = raw
        .parse()
        .map_err(|_| fail(format!("SCORE value `{raw}` is not an integer")))?;
    if !scale.contains(value) {
        return Err(fail(format!("score {value} outside {}-{}", scale.lo, scale.hi)));
    }
    Ok(ParsedJudgment {
        raw_score: value as i32,
        assessment: assessment.unwrap_or_default(),
        confidence: confidence.unwrap_or_default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn direct_parse() {
        let p = parse_judgment("SCORE: 4\nASSESSMENT: fine\nCONFIDENCE: sure", ScoreScale::ONE_TO_FIVE).unwrap();
        assert_eq!(
            p,
            ParsedJudgment {
                raw_score: 4,
                assessment: "fine".into(),
                confidence: "sure".into()
            }
        );
    }

    #[test]
    fn fenced_multiline() {
        let reply = "here you go\n```\nSCORE: 2\nASSESSMENT: too long\nand repetitive\nCONFIDENCE: high\n```\n";
        let p = parse_judgment(reply, ScoreScale::ONE_TO_FOUR).unwrap();
        assert_eq!(p.raw_score, 2);
        assert_eq!(p.assessment, "too long\nand repetitive");
        assert_eq!(p.confidence, "high");
    }

    #[test]
    fn errors_carry_reply() {
        for (reply, needle) in [
            ("SCORE: 9", "outside"),
            ("ASSESSMENT: x", "missing"),
            ("SCORE: four", "integer"),
        ] {
            match parse_judgment(reply, ScoreScale::ONE_TO_FIVE) {
                Err(Error::JudgmentParse { reason, reply: r }) => {
                    assert!(reason.contains(needle), "{reason}");
                    assert_eq!(r, reply);
                }
                other => panic!("{other:?}"),
            }
        }
        assert!(parse_judgment("SCORE: 99999999999999999999999", ScoreScale::ONE_TO_FIVE).is_err());
    }

    proptest! {
        #[test]
        fn never_panics(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
            let s = String::from_utf8_lossy(&bytes);
            let _ = parse_judgment(&s, ScoreScale::ONE_TO_FIVE);
        }

        #[test]
        fn keyed_noise_never_panics(score in "[-+0-9a-z ]{0,6}", body in "\\PC{0,40}") {
            let reply = format!("SCORE:{score}\nASSESSMENT:{body}\nCONFIDENCE:{body}");
            if let Ok(p) = parse_judgment(&reply, ScoreScale::ONE_TO_FOUR) {
                prop_assert!((1..=4).contains(&p.raw_score));
            }
        }
    }
}
