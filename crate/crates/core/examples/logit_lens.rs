//! Compares an explanation-trained adapter with a label-only one: per-block
//! logit-lens entropy, rank of the gold score token, and adapter weight
//! differences per projection.

use expltune::analyze::{entropy_table, lora_diff, BlockGrouping, RecordTraces};
use expltune::corpus::{synth_fixture, Dimension, SynthConfig};
use expltune::model::{Adapters, ModelConfig};
use expltune::train::*;

fn main() -> expltune::Result<()> {
    let dim = Dimension::Comprehensiveness;
    let data = synth_fixture(&SynthConfig::new(3, 440));
    let (train_c, probe) = data.split_at(400);
    let mcfg = ModelConfig::default();
    let tok = Tokenizer::build(&train_c, mcfg.vocab_size, 16)?;
    let pcfg = PretrainConfig {
        steps: 80,
        ..PretrainConfig::default()
    };
    let (base, _) = pretrain(&pcfg, &mcfg, &pretrain_sequences(&train_c, &tok, mcfg.context_len, 0))?;

    let fit = |mode: ExplanationMode| -> expltune::Result<Adapters> {
        let mut cfg = TrainConfig::toy();
        cfg.dimension = dim;
        cfg.mode = mode;
        cfg.epochs = 1;
        let a = prepare_examples(&train_c, dim, mode, &tok, None, mcfg.context_len)?;
        Ok(train(&cfg, &mcfg, &base, &a, &[])?.adapters)
    };
    let scorer = |adapters: &Adapters| Scorer {
        config: mcfg.clone(),
        base: base.clone(),
        adapters: Some(adapters.clone()),
        tokenizer: tok.clone(),
    };
    let (ae, an) = (fit(ExplanationMode::Both)?, fit(ExplanationMode::None)?);
    let te = scorer(&ae).traces_all(&probe, dim)?;
    let tn = scorer(&an).traces_all(&probe, dim)?;

    let table = entropy_table(&te, &tn, &BlockGrouping::toy(mcfg.n_blocks))?;
    println!("entropy difference, explained minus label-only:");
    for row in &table.rows {
        let norm = row.normalized.map_or("undefined".to_string(), |v| format!("{v:+.3}"));
        println!("  block {:<6} raw {:+.4}  normalized {norm}", row.label, row.raw_diff);
    }

    let mean_rank = |t: &[RecordTraces], b: usize| {
        t.iter()
            .map(|r| r.traces[b].target_rank.unwrap_or(0) as f64)
            .sum::<f64>()
            / t.len() as f64
    };
    println!("\nmean rank of the gold score token (1 = top):");
    for b in 0..mcfg.n_blocks {
        println!(
            "  block {}  explained {:.2}  label-only {:.2}",
            b + 1,
            mean_rank(&te, b),
            mean_rank(&tn, b)
        );
    }

    let diff = lora_diff(&ae, &an, &mcfg)?;
    println!("\nadapter difference, Frobenius norm:");
    for (k, (t, raw)) in diff.raw.iter().enumerate() {
        let norm = diff.normalized.as_ref().map_or(f64::NAN, |n| n[k]);
        println!("  {:<5} {raw:.4}  {norm:.3}", t.tag());
    }
    Ok(())
}
