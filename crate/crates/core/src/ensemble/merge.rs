use std::collections::BTreeMap;
use std::str::FromStr;

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

use super::collect::RawJudgment;
use super::judge::JudgeEndpoint;
use super::parse::parse_judgment;
use crate::corpus::{Dimension, MergedRecord, ScoreScale};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeStrategy {
    Average,
    Mode,
    Llm,
}

impl MergeStrategy {
    pub const ALL: [MergeStrategy; 3] = [Self::Average, Self::Mode, Self::Llm];

    pub fn tag(self) -> &'static str {
        match self {
            Self::Average => "average",
            Self::Mode => "mode",
            Self::Llm => "llm",
        }
    }
}

impl std::fmt::Display for MergeStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for MergeStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| Error::invalid(format!("unknown merge strategy `{s}`")))
    }
}

/// Scale every merged score is reported on by the LLM merger.
pub const LLM_MERGE_SCALE: ScoreScale = ScoreScale::ONE_TO_FIVE;

fn normalized(judgments: &[RawJudgment]) -> Result<Vec<f64>> {
    if judgments.is_empty() {
        return Err(Error::Empty("judgment list"));
    }
    let mut v: Vec<f64> = judgments.iter().map(|j| j.score_norm()).collect();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Summing in sorted order makes the result independent of input order.
fn sorted_mean(sorted: &[f64]) -> f64 {
    sorted.iter().sum::<f64>() / sorted.len() as f64
}

pub fn merge_average(judgments: &[RawJudgment]) -> Result<f64> {
    Ok(sorted_mean(&normalized(judgments)?))
}

const DISTANCE_TIE: f64 = 1e-12;

/// Most frequent normalized score. Ties go to the value closest to the mean,
/// then to the lower value.
pub fn merge_mode(judgments: &[RawJudgment]) -> Result<f64> {
    let v = normalized(judgments)?;
    let mean = sorted_mean(&v);
    let mut counts: BTreeMap<OrderedFloat<f64>, usize> = BTreeMap::new();
    for &x in &v {
        *counts.entry(OrderedFloat(x)).or_default() += 1;
    }
    let top = counts.values().copied().max().unwrap_or(0);
    let mut best: Option<f64> = None;
    // ascending iteration with strict improvement keeps the lower value on
    // ties; distances equal up to rounding (e.g. 1/3 and 2/3 around 1/2) tie
    for (&OrderedFloat(x), &c) in &counts {
        if c != top {
            continue;
        }
        match best {
            Some(b) if (x - mean).abs() >= (b - mean).abs() - DISTANCE_TIE => {}
            _ => best = Some(x),
        }
    }
    Ok(best.expect("non-empty"))
}

/// Prompt for the LLM score merger. Each judgment is shown with its raw
/// score and its own scale.
pub fn merge_score_prompt(judgments: &[RawJudgment], dim: Dimension) -> String {
    let mut p = format!(
        "Several reviewers rated the {} of one assistant reply.\nDefinition: {}\nTheir ratings:\n",
        dim.tag(),
        dim.definition()
    );
    for (k, j) in judgments.iter().enumerate() {
        p.push_str(&format!(
            "[{}] score {} on a scale from {} to {}\n",
            k + 1,
            j.raw_score,
            j.scale.lo,
            j.scale.hi
        ));
    }
    p.push_str(&format!(
        "Select the final score on a scale from {} (worst) to {} (best).\n\
         Answer in exactly this format:\nSCORE: <integer>\nASSESSMENT: <reason>\nCONFIDENCE: <how sure you are>\n",
        LLM_MERGE_SCALE.lo, LLM_MERGE_SCALE.hi
    ));
    p
}

/// `(raw, scale)` pairs listed in a [`merge_score_prompt`].
pub fn listed_scores(prompt: &str) -> Vec<(i32, ScoreScale)> {
    prompt
        .lines()
        .filter_map(|line| {
            let rest = line.strip_prefix('[')?;
            let (_, rest) = rest.split_once("] score ")?;
            let (raw, rest) = rest.split_once(" on a scale from ")?;
            let (lo, hi) = rest.split_once(" to ")?;
            Some((
                raw.parse().ok()?,
                ScoreScale::new(lo.parse().ok()?, hi.trim().parse().ok()?).ok()?,
            ))
        })
        .collect()
}

pub fn merge_llm(judgments: &[RawJudgment], dim: Dimension, judge: &dyn JudgeEndpoint) -> Result<f64> {
    if judgments.is_empty() {
        return Err(Error::Empty("judgment list"));
    }
    let reply = judge
        .invoke(&merge_score_prompt(judgments, dim))
        .map_err(|message| Error::Endpoint {
            judge_id: judge.judge_id().to_string(),
            attempts: 1,
            message,
        })?;
    let parsed = parse_judgment(&reply, LLM_MERGE_SCALE)?;
    Ok(LLM_MERGE_SCALE.normalize(parsed.raw_score))
}

/// Prompt for the explanation summarizer: one `[k] text` line per
/// non-empty explanation.
pub fn merge_explanation_prompt(texts: &[&str]) -> String {
    let mut p = String::from("Combine and summarize the following reviewer explanations into one explanation.\n");
    for (k, t) in texts.iter().enumerate() {
        p.push_str(&format!("[{}] {}\n", k + 1, t.replace('\n', " ")));
    }
    p.push_str("Answer in exactly this format:\nSCORE: 1\nASSESSMENT: <summary>\nCONFIDENCE: <leave empty>\n");
    p
}

/// Explanation texts listed in a [`merge_explanation_prompt`].
pub fn listed_explanations(prompt: &str) -> Vec<String> {
    prompt
        .lines()
        .filter_map(|line| {
            let rest = line.strip_prefix('[')?;
            let (k, text) = rest.split_once("] ")?;
            k.parse::<usize>().ok()?;
            if text.starts_with("score ") && listed_scores(line).len() == 1 {
                return None;
            }
            Some(text.to_string())
        })
        .collect()
}

/// Summarizes texts through `judge`. All-empty input is an error.
pub fn merge_texts(texts: &[&str], judge: &dyn JudgeEndpoint) -> Result<String> {
    let kept: Vec<&str> = texts.iter().map(|t| t.trim()).filter(|t| !t.is_empty()).collect();
    if kept.is_empty() {
        return Err(Error::Empty("explanations"));
    }
    let reply = judge
        .invoke(&merge_explanation_prompt(&kept))
        .map_err(|message| Error::Endpoint {
            judge_id: judge.judge_id().to_string(),
            attempts: 1,
            message,
        })?;
    let text = parse_judgment(&reply, LLM_MERGE_SCALE)?.assessment;
    if text.trim().is_empty() {
        return Err(Error::JudgmentParse {
            reason: "empty summary".into(),
            reply,
        });
    }
    Ok(text)
}

pub fn merge_explanations(judgments: &[RawJudgment], judge: &dyn JudgeEndpoint) -> Result<String> {
    let texts: Vec<&str> = judgments.iter().map(|j| j.assessment_explanation.as_str()).collect();
    merge_texts(&texts, judge)
}

pub fn merge_score(
    judgments: &[RawJudgment],
    strategy: MergeStrategy,
    dim: Dimension,
    llm: Option<&dyn JudgeEndpoint>,
) -> Result<f64> {
    match strategy {
        MergeStrategy::Average => merge_average(judgments),
        MergeStrategy::Mode => merge_mode(judgments),
        MergeStrategy::Llm => {
            let judge = llm.ok_or_else(|| Error::invalid("llm merge needs a merge judge"))?;
            merge_llm(judgments, dim, judge)
        }
    }
}

/// Merges one (conversation, dimension) group. Confidence explanations are
/// summarized too when any judge gave one.
pub fn merge_record(
    judgments: &[RawJudgment],
    strategy: MergeStrategy,
    score_judge: Option<&dyn JudgeEndpoint>,
    summarizer: &dyn JudgeEndpoint,
) -> Result<MergedRecord> {
    let first = judgments.first().ok_or(Error::Empty("judgment list"))?;
    let stray: Vec<String> = judgments
        .iter()
        .filter(|j| j.conversation_id != first.conversation_id || j.dimension != first.dimension)
        .map(|j| j.id.clone())
        .collect();
    if !stray.is_empty() {
        return Err(Error::IdMismatch(stray));
    }
    let score_norm = merge_score(judgments, strategy, first.dimension, score_judge)?;
    let assessment = merge_explanations(judgments, summarizer)?;
    let conf: Vec<&str> = judgments.iter().map(|j| j.confidence_explanation.as_str()).collect();
    let confidence = if conf.iter().all(|c| c.trim().is_empty()) {
        String::new()
    } else {
        merge_texts(&conf, summarizer)?
    };
    Ok(MergedRecord {
        conversation_id: first.conversation_id.clone(),
        dimension: first.dimension,
        score_norm,
        assessment_explanation: assessment,
        confidence_explanation: confidence,
        provenance: judgments.iter().map(|j| j.id.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::judge::{format_reply, sentences, MockJudge};
    use crate::ensemble::prompt::VariantId;
    use proptest::prelude::*;

    fn j(raw: i32, hi: i32, k: usize) -> RawJudgment {
        let variant = if hi == 4 { VariantId::S4 } else { VariantId::S5 };
        RawJudgment {
            id: format!("c:naturalness:j{k}:{variant}"),
            conversation_id: "c".into(),
            dimension: Dimension::Naturalness,
            variant_id: variant,
            judge_id: format!("j{k}"),
            raw_score: raw,
            scale: ScoreScale::new(1, hi).unwrap(),
            assessment_explanation: format!("Point {k} holds. It has detail."),
            confidence_explanation: String::new(),
        }
    }

    #[test]
    fn thirds_tie_goes_lower() {
        // 1/3 and 2/3 are equally far from 1/2, but not in floating point
        let js = [j(2, 4, 0), j(2, 4, 1), j(3, 4, 2), j(3, 4, 3)];
        assert_eq!(merge_mode(&js).unwrap(), 1.0 / 3.0);
    }

    fn many(spec: &[(i32, i32, usize)]) -> Vec<RawJudgment> {
        let mut out = Vec::new();
        for &(raw, hi, n) in spec {
            for _ in 0..n {
                out.push(j(raw, hi, out.len()));
            }
        }
        out
    }

    #[test]
    fn average_examples() {
        assert_eq!(merge_average(&many(&[(4, 5, 12)])).unwrap(), 0.75);
        assert_eq!(merge_average(&many(&[(1, 4, 1), (4, 4, 1)])).unwrap(), 0.5);
        assert!(matches!(merge_average(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn mode_examples() {
        // 0.75 and 0.5 on the 1-5 scale are raw 4 and 3
        assert_eq!(merge_mode(&many(&[(4, 5, 7), (3, 5, 5)])).unwrap(), 0.75);
        assert_eq!(merge_mode(&many(&[(2, 5, 6), (4, 5, 6)])).unwrap(), 0.25);
        assert!(merge_mode(&[]).is_err());
    }

    #[test]
    fn mode_tie_prefers_value_nearest_mean() {
        // counts: 0 x2, 0.5 x2, 1.0 x1 -> mean 0.4; 0.5 is nearer than 0
        let js = many(&[(1, 5, 2), (3, 5, 2), (5, 5, 1)]);
        assert_eq!(merge_mode(&js).unwrap(), 0.5);
    }

    /// Exact mode: 1-4 and 1-5 normalized scores are multiples of 1/12.
    fn mode_oracle(js: &[RawJudgment]) -> f64 {
        let t: Vec<i64> = js
            .iter()
            .map(|j| i64::from(j.raw_score - 1) * 12 / i64::from(j.scale.hi - 1))
            .collect();
        let (n, sum) = (t.len() as i64, t.iter().sum::<i64>());
        let count = |x: i64| t.iter().filter(|&&y| y == x).count();
        let top = t.iter().map(|&x| count(x)).max().unwrap();
        let best = t
            .iter()
            .copied()
            .filter(|&x| count(x) == top)
            .min_by_key(|&x| ((x * n - sum).abs(), x))
            .unwrap();
        best as f64 / 12.0
    }

    fn arb_judgments() -> impl Strategy<Value = Vec<RawJudgment>> {
        prop::collection::vec((prop::bool::ANY, 1i32..=5), 1..=12).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(k, (four, raw))| if four { j(raw.min(4), 4, k) } else { j(raw, 5, k) })
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn average_matches_oracle(js in arb_judgments()) {
            let naive: f64 = js.iter().map(|j| f64::from(j.raw_score - 1) / f64::from(j.scale.hi - 1)).sum::<f64>() / js.len() as f64;
            let got = merge_average(&js).unwrap();
            prop_assert!((got - naive).abs() < 1e-12);
            let lo = js.iter().map(|j| j.score_norm()).fold(f64::INFINITY, f64::min);
            let hi = js.iter().map(|j| j.score_norm()).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(got >= lo - 1e-15 && got <= hi + 1e-15);
        }

        #[test]
        fn mode_matches_oracle(js in arb_judgments()) {
            let v: Vec<f64> = js.iter().map(|j| j.score_norm()).collect();
            let got = merge_mode(&js).unwrap();
            prop_assert_eq!(got, mode_oracle(&js));
            prop_assert!(v.contains(&got));
        }

        #[test]
        fn merges_are_permutation_invariant(js in arb_judgments(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = js.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(merge_average(&js).unwrap(), merge_average(&shuffled).unwrap());
            prop_assert_eq!(merge_mode(&js).unwrap(), merge_mode(&shuffled).unwrap());
        }

        #[test]
        fn constant_inputs_agree(raw in 1i32..=5, n in 1usize..=12) {
            let js = many(&[(raw, 5, n)]);
            prop_assert_eq!(merge_average(&js).unwrap(), merge_mode(&js).unwrap());
        }
    }

    #[test]
    fn llm_merge_parses_and_normalizes() {
        let js = many(&[(3, 4, 3)]);
        let five = MockJudge::constant("m", "SCORE: 5");
        assert_eq!(merge_llm(&js, Dimension::Naturalness, &five).unwrap(), 1.0);
        let junk = MockJudge::constant("m", "no idea");
        assert!(matches!(
            merge_llm(&js, Dimension::Naturalness, &junk),
            Err(Error::JudgmentParse { .. })
        ));
        let high = MockJudge::constant("m", "SCORE: 6");
        assert!(merge_llm(&js, Dimension::Naturalness, &high).is_err());
    }

    #[test]
    fn prompt_lists_raw_scores_with_scales() {
        let js = many(&[(3, 4, 1), (5, 5, 1)]);
        let p = merge_score_prompt(&js, Dimension::OnTopic);
        assert_eq!(
            listed_scores(&p),
            vec![(3, ScoreScale::ONE_TO_FOUR), (5, ScoreScale::ONE_TO_FIVE)]
        );
        assert!(listed_explanations(&p).is_empty());
    }

    #[test]
    fn echo_mode_mock_agrees_with_mode() {
        let echo = MockJudge::scripted("echo", |prompt| {
            let listed = listed_scores(prompt);
            let js: Vec<RawJudgment> = listed
                .iter()
                .enumerate()
                .map(|(k, &(raw, s))| j(raw, s.hi, k))
                .collect();
            let m = merge_mode(&js).map_err(|e| e.to_string())?;
            Ok(format_reply(LLM_MERGE_SCALE.denormalize(m), "echo", ""))
        });
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.gen_range(1..=12);
            let js: Vec<RawJudgment> = (0..n).map(|k| j(rng.gen_range(1..=5), 5, k)).collect();
            assert_eq!(
                merge_llm(&js, Dimension::Naturalness, &echo).unwrap(),
                merge_mode(&js).unwrap()
            );
        }
    }

    #[test]
    fn explanation_merging() {
        let sum = MockJudge::summarizer("sum");
        let one = many(&[(2, 5, 1)]);
        assert_eq!(merge_explanations(&one, &sum).unwrap(), one[0].assessment_explanation);
        let js = many(&[(2, 5, 5)]);
        let text = merge_explanations(&js, &sum).unwrap();
        assert_eq!(sentences(&text).len(), js.len());
        let mut empty = many(&[(2, 5, 3)]);
        for e in &mut empty {
            e.assessment_explanation = " ".into();
        }
        assert!(matches!(merge_explanations(&empty, &sum), Err(Error::Empty(_))));
    }

    #[test]
    fn record_merge_carries_provenance() {
        let js = many(&[(4, 5, 12)]);
        let sum = MockJudge::summarizer("sum");
        let m = merge_record(&js, MergeStrategy::Average, None, &sum).unwrap();
        assert_eq!(m.score_norm, 0.75);
        assert_eq!(m.provenance.len(), 12);
        assert_eq!(m.provenance[0], js[0].id);
        assert!(!m.assessment_explanation.is_empty());
        assert_eq!(m.confidence_explanation, "");
        assert!(merge_record(&js, MergeStrategy::Llm, None, &sum).is_err());
        let mut mixed = js.clone();
        mixed[3].conversation_id = "other".into();
        assert!(matches!(
            merge_record(&mixed, MergeStrategy::Mode, None, &sum),
            Err(Error::IdMismatch(_))
        ));
    }
}
