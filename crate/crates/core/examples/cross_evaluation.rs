//! Trains one adapter per source and scores every adapter, and the bare base,
//! on every source's held-out split.

use expltune::corpus::{synth_fixture, Corpus, Dimension, Source, SynthConfig};
use expltune::model::ModelConfig;
use expltune::train::*;

fn fixture(seed: u64, source: Source) -> Corpus {
    let mut sc = SynthConfig::new(seed, 360);
    sc.source = source;
    synth_fixture(&sc)
}

fn main() -> expltune::Result<()> {
    let dim = Dimension::Naturalness;
    let sources = [
        (Source::CoQa, fixture(1, Source::CoQa)),
        (Source::HhC, fixture(2, Source::HhC)),
    ];
    let mcfg = ModelConfig {
        n_blocks: 2,
        d_model: 32,
        d_ff: 64,
        ..ModelConfig::default()
    };
    let all: Vec<_> = sources.iter().flat_map(|(_, c)| c.records.iter().cloned()).collect();
    let pooled = Corpus::new(all)?;
    let tok = Tokenizer::build(&pooled, mcfg.vocab_size, 16)?;
    let pcfg = PretrainConfig {
        steps: 80,
        ..PretrainConfig::default()
    };
    let (base, _) = pretrain(&pcfg, &mcfg, &pretrain_sequences(&pooled, &tok, mcfg.context_len, 0))?;

    let mut scorers = Vec::new();
    let mut evals = Vec::new();
    for (source, corpus) in &sources {
        let (tr, te) = corpus.split_at(300);
        let mut cfg = TrainConfig::toy();
        cfg.dimension = dim;
        cfg.mode = ExplanationMode::Both;
        cfg.epochs = 1;
        let a = prepare_examples(&tr, dim, cfg.mode, &tok, None, mcfg.context_len)?;
        let out = train(&cfg, &mcfg, &base, &a, &[])?;
        let scorer = Scorer {
            config: mcfg.clone(),
            base: base.clone(),
            adapters: Some(out.adapters),
            tokenizer: tok.clone(),
        };
        scorers.push((source.tag().to_string(), scorer));
        evals.push((source.tag().to_string(), te));
    }
    // the first model's bare base is added as the baseline row
    let models: Vec<EvalModel> = scorers
        .iter()
        .map(|(name, s)| EvalModel {
            train_corpus: name.clone(),
            mode: ExplanationMode::Both,
            scorer: s,
        })
        .collect();
    let corpora: Vec<(String, &Corpus)> = evals.iter().map(|(n, c)| (n.clone(), c)).collect();
    let report = cross_eval(&models, &corpora, dim)?;
    println!(
        "{:<10} {:<6} {:<6} {:>7} {:>7}",
        "trained", "mode", "eval", "mae", "mse"
    );
    for r in &report.rows {
        println!(
            "{:<10} {:<6} {:<6} {:>7.4} {:>7.4}",
            r.train_corpus, r.mode, r.eval_corpus, r.mae, r.mse
        );
    }
    Ok(())
}
