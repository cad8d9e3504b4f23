//! Pretrains a small base, then fits LoRA adapters with and without
//! explanations appended to the score. Eval loss is on the score token only,
//! so the two curves are comparable.

use expltune::corpus::{synth_fixture, Dimension, SynthConfig};
use expltune::model::ModelConfig;
use expltune::train::*;

fn main() -> expltune::Result<()> {
    let dim = Dimension::Comprehensiveness;
    let mut sc = SynthConfig::new(1, 700);
    sc.score_noise = 0.3;
    let data = synth_fixture(&sc);
    let (train_c, eval_c) = data.split_at(600);

    let mcfg = ModelConfig::default();
    let tok = Tokenizer::build(&train_c, mcfg.vocab_size, 16)?;
    let seqs = pretrain_sequences(&train_c, &tok, mcfg.context_len, 0);
    let pcfg = PretrainConfig {
        steps: 120,
        ..PretrainConfig::default()
    };
    let (base, pre) = pretrain(&pcfg, &mcfg, &seqs)?;
    println!("pretraining loss {:.3} -> {:.3}", pre[0], pre[pre.len() - 1]);

    for mode in [
        ExplanationMode::None,
        ExplanationMode::Assessment,
        ExplanationMode::Both,
    ] {
        let mut cfg = TrainConfig::toy();
        cfg.mode = mode;
        cfg.dimension = dim;
        cfg.epochs = 2;
        let a = prepare_examples(&train_c, dim, mode, &tok, None, mcfg.context_len)?;
        let b = prepare_examples(&eval_c, dim, mode, &tok, None, mcfg.context_len)?;
        let mean_len = a.iter().map(|e| e.tokens.len()).sum::<usize>() / a.len();
        let out = train(&cfg, &mcfg, &base, &a, &b)?;
        let curve: Vec<String> = (0..=cfg.epochs)
            .filter_map(|e| out.eval_loss_at(e))
            .map(|l| format!("{l:.4}"))
            .collect();
        println!(
            "{:<11} mean length {mean_len:>3}  eval loss by epoch {}",
            mode.tag(),
            curve.join(" ")
        );
    }
    Ok(())
}
