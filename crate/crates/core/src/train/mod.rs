//! Training examples with loss masks, masked cross-entropy, AdamW, the
//! deterministic trainer, score prediction and cross-dataset evaluation.

mod example;
mod loss;
mod optim;
mod predict;
mod tokenizer;
mod trainer;

pub use example::{build_example, ExplanationMode, TrainingExample};
pub use loss::{masked_ce_loss, masked_ce_loss_grad};
pub use optim::{adamw_step, AdamWConfig, AdamWState};
pub use predict::{cross_eval, expected_score, EvalModel, EvalReport, EvalRow, Scorer, BASELINE};
pub use tokenizer::Tokenizer;
pub use trainer::{
    example_grad, example_loss, loss_table, mean_eval_loss, prepare_examples, pretrain, pretrain_sequences,
    sequence_loss, train, EpochLosses, LossPoint, PretrainConfig, RunManifest, TrainConfig, TrainOutput, TOY_LR,
};
