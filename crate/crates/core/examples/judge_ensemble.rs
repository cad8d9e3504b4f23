//! Scores a corpus with three mock judges under four prompt variants, merges
//! the twelve judgments per conversation and calibrates against the fixture.

use std::collections::BTreeMap;
use std::sync::Arc;

use expltune::corpus::{synth_fixture, Dimension, SynthConfig};
use expltune::ensemble::*;

fn main() -> expltune::Result<()> {
    let golden = synth_fixture(&SynthConfig::new(11, 60));
    let dim = Dimension::Naturalness;
    let truth: BTreeMap<String, GroundTruth> = golden
        .iter()
        .map(|r| {
            let key = truth_key(&serialize_conversation(&r.conversation()));
            let t = GroundTruth {
                score_norm: r.scores.get(dim).unwrap(),
                assessment: r.assessment(dim).to_string(),
                confidence: r.confidence(dim).to_string(),
            };
            (key, t)
        })
        .collect();
    let truth = Arc::new(truth);
    let judges: Vec<Arc<dyn JudgeEndpoint>> = ["judge-a", "judge-b", "judge-c"]
        .iter()
        .enumerate()
        .map(|(k, id)| Arc::new(MockJudge::grounded(*id, k as u64, 0.3, truth.clone())) as Arc<dyn JudgeEndpoint>)
        .collect();

    let variants = PromptVariant::all();
    let mut judgments = Vec::new();
    for r in golden.iter() {
        judgments.extend(
            collect_judgments(&r.conversation(), dim, &judges, &variants, &CollectConfig::default())?.judgments,
        );
    }
    println!("{} judgments for {} conversations", judgments.len(), golden.len());

    let first: Vec<RawJudgment> = judgments.iter().take(12).cloned().collect();
    let raw: Vec<String> = first
        .iter()
        .map(|j| format!("{}/{}", j.raw_score, j.scale.hi))
        .collect();
    println!("\nfirst conversation: {}", raw.join(" "));
    let merger = MockJudge::merger("merger");
    for strategy in MergeStrategy::ALL {
        println!(
            "  {:<8} {:.3}",
            strategy.tag(),
            merge_score(&first, strategy, dim, Some(&merger))?
        );
    }
    let summarizer = MockJudge::summarizer("summarizer");
    let merged = merge_record(&first, MergeStrategy::Average, None, &summarizer)?;
    println!("  merged assessment: {}", merged.assessment_explanation);

    println!();
    print!("{}", calibration_report(&judgments, &golden, Some(&merger))?.render());
    Ok(())
}
