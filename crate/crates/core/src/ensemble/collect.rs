use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::judge::JudgeEndpoint;
use super::parse::parse_judgment;
use super::prompt::{render_prompt, PromptVariant, VariantId};
use crate::corpus::{Conversation, Dimension, ScoreScale};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawJudgment {
    pub id: String,
    pub conversation_id: String,
    pub dimension: Dimension,
    pub variant_id: VariantId,
    pub judge_id: String,
    pub raw_score: i32,
    pub scale: ScoreScale,
    pub assessment_explanation: String,
    pub confidence_explanation: String,
}

impl RawJudgment {
    pub fn score_norm(&self) -> f64 {
        self.scale.normalize(self.raw_score)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    /// Any failed (judge, variant) pair fails the whole record.
    FailRecord,
    /// Keep going while at least `min` judgments succeed.
    DropTo { min: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollectConfig {
    pub retry_budget: u32,
    pub backoff_ms: u64,
    pub policy: FailurePolicy,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            retry_budget: 2,
            backoff_ms: 10,
            policy: FailurePolicy::FailRecord,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Collected {
    pub judgments: Vec<RawJudgment>,
    /// One line per dropped (judge, variant) pair.
    pub warnings: Vec<String>,
}

fn judge_once(
    judge: &dyn JudgeEndpoint,
    variant: &PromptVariant,
    prompt: &str,
    cfg: &CollectConfig,
) -> Result<super::parse::ParsedJudgment> {
    let mut last = String::new();
    for attempt in 0..=cfg.retry_budget {
        if attempt > 0 {
            std::thread::sleep(Duration::from_millis(cfg.backoff_ms << (attempt - 1)));
        }
        match judge.invoke(prompt) {
            Ok(reply) => match parse_judgment(&reply, variant.scale) {
                Ok(p) => return Ok(p),
                Err(e) => last = e.to_string(),
            },
            Err(e) => last = e,
        }
    }
    Err(Error::Endpoint {
        judge_id: judge.judge_id().to_string(),
        attempts: cfg.retry_budget + 1,
        message: last,
    })
}

/// One judgment per (judge, variant), judge-major. Calls fan out in
/// parallel; results are reassembled in that fixed order.
pub fn collect_judgments(
    conv: &Conversation,
    dim: Dimension,
    judges: &[Arc<dyn JudgeEndpoint>],
    variants: &[PromptVariant],
    cfg: &CollectConfig,
) -> Result<Collected> {
    if judges.is_empty() || variants.is_empty() {
        return Err(Error::invalid("need at least one judge and one prompt variant"));
    }
    let prompts: Vec<String> = variants
        .iter()
        .map(|v| render_prompt(v, conv, dim))
        .collect::<Result<_>>()?;
    let pairs: Vec<(usize, usize)> = (0..judges.len())
        .flat_map(|j| (0..variants.len()).map(move |v| (j, v)))
        .collect();
    let results: Vec<Result<RawJudgment>> = pairs
        .par_iter()
        .map(|&(j, v)| {
            let judge = judges[j].as_ref();
            let variant = &variants[v];
            let p = judge_once(judge, variant, &prompts[v], cfg)?;
            Ok(RawJudgment {
                id: format!("{}:{}:{}:{}", conv.id, dim.tag(), judge.judge_id(), variant.id),
                conversation_id: conv.id.clone(),
                dimension: dim,
                variant_id: variant.id,
                judge_id: judge.judge_id().to_string(),
                raw_score: p.raw_score,
                scale: variant.scale,
                assessment_explanation: p.assessment,
                confidence_explanation: p.confidence,
            })
        })
        .collect();
    let mut judgments = Vec::with_capacity(results.len());
    let mut warnings = Vec::new();
    for r in results {
        match (r, cfg.policy) {
            (Ok(j), _) => judgments.push(j),
            (Err(e), FailurePolicy::FailRecord) => return Err(e),
            (Err(e), FailurePolicy::DropTo { .. }) => warnings.push(format!("{}: dropped judgment: {e}", conv.id)),
        }
    }
    if let FailurePolicy::DropTo { min } = cfg.policy {
        if judgments.len() < min {
            return Err(Error::InsufficientRecords {
                source_tag: format!("judgments for {}", conv.id),
                available: judgments.len(),
                required: min,
            });
        }
        for w in &warnings {
            log::warn!("{w}");
        }
    }
    Ok(Collected { judgments, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Source, Turn};
    use crate::ensemble::judge::MockJudge;
    use std::collections::BTreeSet;

    fn conv() -> Conversation {
        Conversation {
            id: "c7".into(),
            source: Source::Synthetic,
            turns: vec![Turn::user("hi ?"), Turn::assistant("hello .")],
        }
    }

    fn judges(seed: u64) -> Vec<Arc<dyn JudgeEndpoint>> {
        ["titan", "mixtral", "mistral"]
            .iter()
            .map(|id| Arc::new(MockJudge::random(*id, seed)) as Arc<dyn JudgeEndpoint>)
            .collect()
    }

    #[test]
    fn twelve_distinct_ordered() {
        let c = collect_judgments(
            &conv(),
            Dimension::Naturalness,
            &judges(1),
            &PromptVariant::all(),
            &CollectConfig::default(),
        )
        .unwrap();
        assert_eq!(c.judgments.len(), 12);
        let ids: BTreeSet<_> = c.judgments.iter().map(|j| j.id.clone()).collect();
        assert_eq!(ids.len(), 12);
        assert_eq!(c.judgments[0].judge_id, "titan");
        assert_eq!(c.judgments[3].variant_id, VariantId::S5ex);
        assert_eq!(c.judgments[4].judge_id, "mixtral");
        for j in &c.judgments {
            assert!(j.scale.contains(i64::from(j.raw_score)));
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let run = || {
            collect_judgments(
                &conv(),
                Dimension::OnTopic,
                &judges(9),
                &PromptVariant::all(),
                &CollectConfig::default(),
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn failing_judge_policies() {
        let mut js = judges(1);
        js[1] = Arc::new(MockJudge::failing("mixtral"));
        let fast = CollectConfig {
            backoff_ms: 0,
            ..Default::default()
        };
        let err = collect_judgments(&conv(), Dimension::Naturalness, &js, &PromptVariant::all(), &fast).unwrap_err();
        assert!(matches!(err, Error::Endpoint { attempts: 3, .. }));
        let lenient = CollectConfig {
            policy: FailurePolicy::DropTo { min: 8 },
            ..fast.clone()
        };
        let c = collect_judgments(&conv(), Dimension::Naturalness, &js, &PromptVariant::all(), &lenient).unwrap();
        assert_eq!(c.judgments.len(), 8);
        assert_eq!(c.warnings.len(), 4);
        js[2] = Arc::new(MockJudge::failing("mistral"));
        assert!(collect_judgments(&conv(), Dimension::Naturalness, &js, &PromptVariant::all(), &lenient).is_err());
    }

    #[test]
    fn retries_recover_from_transient_failure() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let calls = Arc::new(AtomicUsize::new(0));
        let c2 = calls.clone();
        let flaky = MockJudge::scripted("flaky", move |_| {
            if c2.fetch_add(1, Ordering::SeqCst).is_multiple_of(2) {
                Err("busy".into())
            } else {
                Ok("SCORE: 1".into())
            }
        });
        let js: Vec<Arc<dyn JudgeEndpoint>> = vec![Arc::new(flaky)];
        let cfg = CollectConfig {
            backoff_ms: 0,
            ..Default::default()
        };
        let v = vec![PromptVariant::standard(VariantId::S4)];
        let c = collect_judgments(&conv(), Dimension::Naturalness, &js, &v, &cfg).unwrap();
        assert_eq!(c.judgments[0].raw_score, 1);
    }
}
