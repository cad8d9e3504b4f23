//! Deterministic adapter training over prepared examples, plus the brief
//! full-parameter pretraining that produces the frozen base.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::example::{build_example, ExplanationMode, TrainingExample};
use super::loss::{masked_ce_loss, masked_ce_loss_grad};
use super::optim::{adamw_step, AdamWConfig, AdamWState};
use super::tokenizer::Tokenizer;
use crate::artifact::{fmt_f64, CsvTable, LOSS_HEADER};
use crate::corpus::{Corpus, Dimension};
use crate::error::{Error, Result};
use crate::model::{
    backward, forward_train, hidden_states, unembed_rows, unembed_rows_backward, Adapters, BaseWeights, ModelConfig,
};
use crate::params::ParamSet;
use crate::text::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: AdamWConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mode: ExplanationMode,
    pub trunc: Option<usize>,
    pub dimension: Dimension,
    pub train_size: usize,
    pub test_size: usize,
    /// Adapter snapshot cadence, in training examples.
    pub snapshot_every: usize,
    /// Train-loss rows are written every this many optimizer steps.
    pub log_every: usize,
    pub profile: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: AdamWConfig::default(),
            batch_size: 8,
            epochs: 1,
            seed: 0,
            mode: ExplanationMode::None,
            trunc: None,
            dimension: Dimension::Naturalness,
            train_size: 10_000,
            test_size: 5_000,
            snapshot_every: 200,
            log_every: 25,
            profile: "full".into(),
        }
    }
}

impl TrainConfig {
    /// Desk-scale profile: 2,000 / 500 records, three epochs, and a learning
    /// rate sized for a model this small.
    pub fn toy() -> Self {
        TrainConfig {
            optimizer: AdamWConfig {
                lr: TOY_LR,
                ..AdamWConfig::default()
            },
            epochs: 3,
            train_size: 2_000,
            test_size: 500,
            profile: "toy".into(),
            ..Self::default()
        }
    }
}

pub const TOY_LR: f64 = 4e-3;

/// One loss-curve row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub epoch: usize,
    pub step: u64,
    pub split: String,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub train_config: TrainConfig,
    pub model_config: ModelConfig,
    pub corpus_hashes: std::collections::BTreeMap<String, String>,
    pub base_hash: String,
    pub code_version: String,
    pub epochs: Vec<EpochLosses>,
    pub checkpoint_hashes: std::collections::BTreeMap<String, String>,
    pub adapter_hash: String,
    pub aborted_at_step: Option<u64>,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub adapters: Adapters,
    pub curve: Vec<LossPoint>,
    /// `(examples seen, adapters)` every `snapshot_every` examples.
    pub snapshots: Vec<(usize, Adapters)>,
    pub manifest: RunManifest,
}

impl TrainOutput {
    pub fn loss_table(&self) -> CsvTable {
        loss_table(&self.curve, self.manifest.train_config.mode)
    }

    /// Eval loss after `epoch` epochs; epoch 0 is before any update.
    pub fn eval_loss_at(&self, epoch: usize) -> Option<f64> {
        self.curve.iter().find(|p| p.split == "eval" && p.epoch == epoch).map(|p| p.loss)
    }
}

pub fn loss_table(curve: &[LossPoint], mode: ExplanationMode) -> CsvTable {
    let mut t = CsvTable::new(&LOSS_HEADER);
    for p in curve {
        t.push(vec![
            p.epoch.to_string(),
            p.step.to_string(),
            p.split.clone(),
            mode.tag().into(),
            fmt_f64(p.loss),
        ]);
    }
    t
}

/// Builds examples for every record, clipped to the model context.
pub fn prepare_examples(
    corpus: &Corpus,
    dimension: Dimension,
    mode: ExplanationMode,
    tok: &Tokenizer,
    trunc: Option<usize>,
    context_len: usize,
) -> Result<Vec<TrainingExample>> {
    corpus
        .iter()
        .map(|r| build_example(r, dimension, mode, tok, trunc)?.clip(context_len))
        .collect()
}

/// A shifted view: `inputs[i]` predicts `targets[i]`, cut after the last
/// masked position.
fn shifted<'a>(ex: &'a TrainingExample, mask: &'a [bool]) -> Result<(&'a [usize], &'a [usize], &'a [bool])> {
    if ex.tokens.len() != mask.len() {
        return Err(Error::Shape("mask length differs from token count".into()));
    }
    if mask.first() == Some(&true) {
        return Err(Error::invalid("position 0 has no context and cannot be masked in"));
    }
    let last = mask.iter().rposition(|&m| m).ok_or(Error::Empty("loss mask"))?;
    Ok((&ex.tokens[..last], &ex.tokens[1..=last], &mask[1..=last]))
}

/// Token-mean loss of one example under `mask`, in inference mode.
pub fn sequence_loss(
    cfg: &ModelConfig,
    base: &BaseWeights,
    adapters: Option<&Adapters>,
    inputs: &[usize],
    targets: &[usize],
    mask: &[bool],
) -> Result<f64> {
    let rows: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    let xf = hidden_states(inputs, cfg, base, adapters)?;
    let logits = unembed_rows(base, &xf, &rows);
    let sel_targets: Vec<usize> = rows.iter().map(|&i| targets[i]).collect();
    masked_ce_loss(&logits, &sel_targets, &vec![true; rows.len()])
}

pub fn example_loss(
    cfg: &ModelConfig,
    base: &BaseWeights,
    adapters: Option<&Adapters>,
    ex: &TrainingExample,
    mask: &[bool],
) -> Result<f64> {
    let (inputs, targets, m) = shifted(ex, mask)?;
    sequence_loss(cfg, base, adapters, inputs, targets, m)
}

/// Loss and accumulated gradients for one example. Dropout is active iff an
/// RNG is supplied.
#[allow(clippy::too_many_arguments)]
pub fn example_grad(
    cfg: &ModelConfig,
    base: &BaseWeights,
    adapters: Option<&Adapters>,
    ex: &TrainingExample,
    mask: &[bool],
    dropout_rng: Option<&mut dyn rand::RngCore>,
    base_grads: Option<&mut BaseWeights>,
    adapter_grads: Option<&mut Adapters>,
) -> Result<f64> {
    let (inputs, targets, m) = shifted(ex, mask)?;
    let rows: Vec<usize> = (0..m.len()).filter(|&i| m[i]).collect();
    let (xf, cache) = forward_train(cfg, base, adapters, inputs, dropout_rng)?;
    let logits = unembed_rows(base, &xf, &rows);
    let sel: Vec<usize> = rows.iter().map(|&i| targets[i]).collect();
    let (loss, dlogits) = masked_ce_loss_grad(&logits, &sel, &vec![true; rows.len()])?;
    let mut base_grads = base_grads;
    let dxf = unembed_rows_backward(
        base,
        &xf,
        &rows,
        &dlogits,
        base_grads.as_deref_mut().map(|g| &mut g.unembed),
    );
    backward(cfg, base, adapters, &cache, &dxf, base_grads, adapter_grads);
    Ok(loss)
}

/// Mean eval-mask loss over `examples`, reduced in input order.
pub fn mean_eval_loss(
    cfg: &ModelConfig,
    base: &BaseWeights,
    adapters: Option<&Adapters>,
    examples: &[TrainingExample],
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty("eval set"));
    }
    let losses: Vec<f64> = examples
        .par_iter()
        .map(|ex| example_loss(cfg, base, adapters, ex, &ex.eval_mask))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

fn dropout_rng(seed: u64, epoch: usize, idx: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("dropout-{epoch}-{idx}")))
}

/// Trains fresh adapters on `train_set` with `base` frozen. Eval loss uses
/// `eval_mask` and is measured before training and after every epoch.
pub fn train(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    base: &BaseWeights,
    train_set: &[TrainingExample],
    eval_set: &[TrainingExample],
) -> Result<TrainOutput> {
    model_cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::invalid("batch_size and epochs must be positive"));
    }
    let started = Instant::now();
    let base_hash = base.content_hash();
    let mut adapters = Adapters::init(
        model_cfg,
        &mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "adapters")),
    );
    let mut state = AdamWState::default();
    let mut curve = Vec::new();
    let mut epochs = Vec::new();
    let mut snapshots = Vec::new();
    let mut aborted = None;
    let use_dropout = model_cfg.lora_dropout > 0.0;

    let eval0 = if eval_set.is_empty() {
        None
    } else {
        Some(mean_eval_loss(model_cfg, base, Some(&adapters), eval_set)?)
    };
    if let Some(l) = eval0 {
        curve.push(LossPoint {
            epoch: 0,
            step: 0,
            split: "eval".into(),
            loss: l,
        });
    }

    let mut step = 0u64;
    let mut seen = 0usize;
    'epochs: for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            cfg.seed,
            &format!("order-{epoch}"),
        )));
        let (mut epoch_sum, mut window_sum, mut window_n) = (0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<(f64, Adapters)> = batch
                .par_iter()
                .map(|&i| {
                    let ex = &train_set[i];
                    let mut g = adapters.zeros_like();
                    let mut rng = dropout_rng(cfg.seed, epoch, i);
                    let rng: Option<&mut dyn rand::RngCore> = if use_dropout { Some(&mut rng) } else { None };
                    let l = example_grad(
                        model_cfg,
                        base,
                        Some(&adapters),
                        ex,
                        &ex.train_mask,
                        rng,
                        None,
                        Some(&mut g),
                    )?;
                    Ok((l, g))
                })
                .collect::<Result<_>>()?;
            step += 1;
            let mut grads = adapters.zeros_like();
            let mut batch_loss = 0.0;
            for (l, g) in &results {
                batch_loss += l;
                grads.add_assign(g);
            }
            let n = results.len() as f64;
            batch_loss /= n;
            grads.scale(1.0 / n);
            if !batch_loss.is_finite() {
                aborted = Some(step);
                break 'epochs;
            }
            adamw_step(&mut adapters, &grads, &mut state, &cfg.optimizer)?;
            epoch_sum += batch_loss * n;
            window_sum += batch_loss;
            window_n += 1;
            if window_n == cfg.log_every.max(1) {
                curve.push(LossPoint {
                    epoch,
                    step,
                    split: "train".into(),
                    loss: window_sum / window_n as f64,
                });
                window_sum = 0.0;
                window_n = 0;
            }
            let before = seen;
            seen += batch.len();
            if cfg.snapshot_every > 0 && seen / cfg.snapshot_every > before / cfg.snapshot_every {
                snapshots.push((seen, adapters.clone()));
            }
        }
        if window_n > 0 {
            curve.push(LossPoint {
                epoch,
                step,
                split: "train".into(),
                loss: window_sum / window_n as f64,
            });
        }
        let train_loss = epoch_sum / train_set.len() as f64;
        let eval_loss = if eval_set.is_empty() {
            f64::NAN
        } else {
            mean_eval_loss(model_cfg, base, Some(&adapters), eval_set)?
        };
        if !eval_set.is_empty() {
            curve.push(LossPoint {
                epoch,
                step,
                split: "eval".into(),
                loss: eval_loss,
            });
        }
        log::info!(
            "epoch {epoch} mode {}: train {train_loss:.5} eval {eval_loss:.5}",
            cfg.mode
        );
        epochs.push(EpochLosses {
            epoch,
            train_loss,
            eval_loss,
        });
    }

    let manifest = RunManifest {
        train_config: cfg.clone(),
        model_config: model_cfg.clone(),
        corpus_hashes: Default::default(),
        base_hash,
        code_version: crate::artifact::CODE_VERSION.into(),
        epochs,
        checkpoint_hashes: Default::default(),
        adapter_hash: adapters.content_hash(),
        aborted_at_step: aborted,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutput {
        adapters,
        curve,
        snapshots,
        manifest,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 300,
            batch_size: 16,
            optimizer: AdamWConfig {
                lr: 3e-3,
                weight_decay: 0.0,
                ..AdamWConfig::default()
            },
            seed: 0,
        }
    }
}

/// Next-token pretraining sequences from a corpus: every conversation under
/// every dimension prompt followed by a uniformly random score digit, and
/// every explanation as its own stream. Scores and explanations are thereby
/// decoupled from the conversations they describe.
pub fn pretrain_sequences(corpus: &Corpus, tok: &Tokenizer, context_len: usize, seed: u64) -> Vec<TrainingExample> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "pretrain-scores"));
    let mut out = Vec::new();
    let full = |tokens: Vec<usize>| {
        let mut tokens = tokens;
        tokens.truncate(context_len);
        let n = tokens.len();
        let mut mask = vec![true; n];
        mask[0] = false;
        TrainingExample {
            tokens,
            train_mask: mask.clone(),
            eval_mask: mask,
            score_position: 0,
        }
    };
    for r in corpus.iter() {
        for dim in Dimension::ALL {
            let mut t = super::example::prompt_tokens(tok, &r.turns, dim);
            t.push(tok.score_token(rng.gen_range(1..=5)));
            out.push(full(t));
            for (marker, text) in [("assessment", r.assessment(dim)), ("confidence", r.confidence(dim))] {
                if text.trim().is_empty() {
                    continue;
                }
                let mut t = vec![tok.bos(), tok.id(marker), tok.id(":")];
                t.extend(tok.encode(text));
                out.push(full(t));
            }
        }
    }
    out
}

/// Full-parameter next-token training of a fresh base. Weights are rounded to
/// `f32` at the end so a saved checkpoint reloads exactly.
pub fn pretrain(
    cfg: &PretrainConfig,
    model_cfg: &ModelConfig,
    sequences: &[TrainingExample],
) -> Result<(BaseWeights, Vec<f64>)> {
    model_cfg.validate()?;
    if sequences.is_empty() {
        return Err(Error::Empty("pretraining corpus"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "pretrain"));
    let mut base = BaseWeights::init(model_cfg, &mut rng);
    let mut state = AdamWState::default();
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut order: Vec<usize> = Vec::new();
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if order.is_empty() {
                order = (0..sequences.len()).collect();
                order.shuffle(&mut rng);
            }
            batch.push(order.pop().expect("refilled"));
        }
        let results: Vec<(f64, BaseWeights)> = batch
            .par_iter()
            .map(|&i| {
                let ex = &sequences[i];
                let mut g = base.zeros_like();
                let l = example_grad(model_cfg, &base, None, ex, &ex.train_mask, None, Some(&mut g), None)?;
                Ok((l, g))
            })
            .collect::<Result<_>>()?;
        let mut grads = base.zeros_like();
        let mut loss = 0.0;
        for (l, g) in &results {
            loss += l;
            grads.add_assign(g);
        }
        let n = results.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        grads.visit_mut(&mut |_, v| v.iter_mut().for_each(|x| *x /= n));
        adamw_step(&mut base, &grads, &mut state, &cfg.optimizer)?;
        losses.push(loss / n);
    }
    base.round_to_f32();
    Ok((base, losses))
}
