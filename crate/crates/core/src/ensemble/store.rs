//! JSONL judgment store: one `RawJudgment` per line.

use std::path::Path;

use super::collect::RawJudgment;
use crate::artifact::write_atomic;
use crate::error::{Error, Result};

pub fn judgments_to_jsonl(judgments: &[RawJudgment]) -> String {
    let mut out = String::new();
    for j in judgments {
        out.push_str(&serde_json::to_string(j).expect("judgments serialize"));
        out.push('\n');
    }
    out
}

/// Blank lines and `#` comment lines are skipped.
pub fn judgments_from_jsonl(content: &str) -> Result<Vec<RawJudgment>> {
    let mut out = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let j: RawJudgment = serde_json::from_str(t).map_err(|e| Error::Malformed {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if !j.scale.contains(i64::from(j.raw_score)) {
            return Err(Error::Malformed {
                line: idx + 1,
                message: format!("score {} outside {}-{}", j.raw_score, j.scale.lo, j.scale.hi),
            });
        }
        out.push(j);
    }
    Ok(out)
}

pub fn save_judgments(path: &Path, judgments: &[RawJudgment]) -> Result<()> {
    write_atomic(path, judgments_to_jsonl(judgments).as_bytes())
}

pub fn load_judgments(path: &Path) -> Result<Vec<RawJudgment>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    judgments_from_jsonl(&content)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Dimension, ScoreScale};
    use crate::ensemble::prompt::VariantId;

    fn sample() -> RawJudgment {
        RawJudgment {
            id: "c:naturalness:titan:s4ex".into(),
            conversation_id: "c".into(),
            dimension: Dimension::Naturalness,
            variant_id: VariantId::S4ex,
            judge_id: "titan".into(),
            raw_score: 3,
            scale: ScoreScale::ONE_TO_FOUR,
            assessment_explanation: "fine .".into(),
            confidence_explanation: String::new(),
        }
    }

    #[test]
    fn field_names_and_round_trip() {
        let text = judgments_to_jsonl(&[sample()]);
        let v: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
        for key in [
            "id",
            "conversation_id",
            "dimension",
            "variant_id",
            "judge_id",
            "raw_score",
            "scale",
            "assessment_explanation",
            "confidence_explanation",
        ] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["variant_id"], "s4ex");
        assert_eq!(judgments_from_jsonl(&text).unwrap(), vec![sample()]);
    }

    #[test]
    fn out_of_range_rejected() {
        let mut j = sample();
        j.raw_score = 5;
        let text = judgments_to_jsonl(&[j]);
        assert!(matches!(
            judgments_from_jsonl(&text),
            Err(Error::Malformed { line: 1, .. })
        ));
    }
}
