use rayon::prelude::*;

use super::example::{build_example, ExplanationMode};
use super::tokenizer::Tokenizer;
use crate::analyze::{mae_mse, token_rank, RecordTraces};
use crate::artifact::{fmt_f64, CsvTable, EVAL_HEADER};
use crate::corpus::{Corpus, Dimension, Record, ScoreScale};
use crate::error::{Error, Result};
use crate::model::checkpoint::Checkpoint;
use crate::model::{block_traces, hidden_states, softmax, unembed_rows, Adapters, BaseWeights, ModelConfig};

/// `sum_s p(s) * norm(s)` with `p` the softmax of `logits` renormalized over
/// the score tokens (`score_tokens[k]` is raw score `k + 1` on a 1-5 scale).
pub fn expected_score(logits: &[f64], score_tokens: &[usize]) -> Result<f64> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("score logits".into()));
    }
    let scale = ScoreScale::new(1, score_tokens.len() as i32)?;
    let sel: Vec<f64> = score_tokens
        .iter()
        .map(|&t| logits.get(t).copied().ok_or(Error::UnknownToken(t)))
        .collect::<Result<_>>()?;
    let p = softmax(&sel);
    Ok(p.iter().zip(scale.values()).map(|(p, s)| p * scale.normalize(s)).sum())
}

/// Everything needed to score records: a model and its tokenizer.
#[derive(Debug, Clone)]
pub struct Scorer {
    pub config: ModelConfig,
    pub base: BaseWeights,
    pub adapters: Option<Adapters>,
    pub tokenizer: Tokenizer,
}

impl Scorer {
    /// From a checkpoint, taking the base from `base` when the checkpoint
    /// holds adapters only.
    pub fn from_checkpoint(ck: &Checkpoint, base: Option<&BaseWeights>) -> Result<Self> {
        let base = match (&ck.base, base) {
            (Some(b), _) => b.weights()?,
            (None, Some(b)) => b.clone(),
            (None, None) => return Err(Error::Checkpoint("adapter checkpoint needs a base".into())),
        };
        Ok(Scorer {
            config: ck.config.clone(),
            base,
            adapters: ck.adapters.clone(),
            tokenizer: Tokenizer::from_vocab(ck.vocab.clone())?,
        })
    }

    pub fn without_adapters(&self) -> Scorer {
        Scorer {
            adapters: None,
            ..self.clone()
        }
    }

    fn score_tokens(&self) -> Vec<usize> {
        (1..=5).map(|s| self.tokenizer.score_token(s)).collect()
    }

    /// Expected normalized score at the score position.
    pub fn predict_score(&self, record: &Record, dimension: Dimension) -> Result<f64> {
        let mut r = record.clone();
        if r.scores.get(dimension).is_none() {
            r.scores.set(dimension, 0.0);
        }
        let ex = build_example(&r, dimension, ExplanationMode::None, &self.tokenizer, None)?;
        let prompt = &ex.tokens[..ex.score_position];
        if prompt.len() > self.config.context_len {
            return Err(Error::ContextOverflow {
                len: prompt.len(),
                max: self.config.context_len,
            });
        }
        let xf = hidden_states(prompt, &self.config, &self.base, self.adapters.as_ref())?;
        let logits = unembed_rows(&self.base, &xf, &[prompt.len() - 1]);
        expected_score(logits.row(0).as_slice().expect("contiguous"), &self.score_tokens())
    }

    /// Logit-lens traces at the position that predicts the score token,
    /// ranked against the record's gold score token.
    pub fn traces(&self, record: &Record, dimension: Dimension) -> Result<RecordTraces> {
        let gold = record.scores.get(dimension).ok_or_else(|| Error::MissingField {
            id: record.id.clone(),
            what: format!("{dimension} score"),
        })?;
        let ex = build_example(record, dimension, ExplanationMode::None, &self.tokenizer, None)?;
        if ex.score_position > self.config.context_len {
            return Err(Error::ContextOverflow {
                len: ex.score_position,
                max: self.config.context_len,
            });
        }
        let target = self.tokenizer.score_token(ScoreScale::ONE_TO_FIVE.denormalize(gold));
        let mut traces = block_traces(
            &ex.tokens[..ex.score_position],
            ex.score_position - 1,
            &self.config,
            &self.base,
            self.adapters.as_ref(),
        )?;
        for t in &mut traces {
            t.target_rank = Some(token_rank(&t.distribution, target)?);
        }
        Ok(RecordTraces {
            id: record.id.clone(),
            traces,
        })
    }

    pub fn traces_all(&self, corpus: &Corpus, dimension: Dimension) -> Result<Vec<RecordTraces>> {
        let records: Vec<&Record> = corpus.iter().collect();
        records.par_iter().map(|r| self.traces(r, dimension)).collect()
    }

    pub fn predict_all(&self, corpus: &Corpus, dimension: Dimension) -> Result<Vec<f64>> {
        let records: Vec<&Record> = corpus.iter().collect();
        records.par_iter().map(|r| self.predict_score(r, dimension)).collect()
    }
}

/// A labelled model in a cross-evaluation.
pub struct EvalModel<'a> {
    pub train_corpus: String,
    pub mode: ExplanationMode,
    pub scorer: &'a Scorer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub train_corpus: String,
    pub mode: String,
    pub eval_corpus: String,
    pub mae: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn table(&self) -> CsvTable {
        let mut t = CsvTable::new(&EVAL_HEADER);
        for r in &self.rows {
            t.push(vec![
                r.train_corpus.clone(),
                r.mode.clone(),
                r.eval_corpus.clone(),
                fmt_f64(r.mae),
                fmt_f64(r.mse),
            ]);
        }
        t
    }

    pub fn cell(&self, train_corpus: &str, mode: &str, eval_corpus: &str) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.train_corpus == train_corpus && r.mode == mode && r.eval_corpus == eval_corpus)
    }
}

pub const BASELINE: &str = "baseline";

/// MAE/MSE of every model on every corpus. The first model's base without
/// adapters contributes a `baseline` row.
pub fn cross_eval(models: &[EvalModel<'_>], corpora: &[(String, &Corpus)], dimension: Dimension) -> Result<EvalReport> {
    let first = models.first().ok_or(Error::Empty("model list"))?;
    let baseline = first.scorer.without_adapters();
    let mut golds = Vec::with_capacity(corpora.len());
    for (name, c) in corpora {
        let g: Vec<f64> = c
            .iter()
            .map(|r| {
                r.scores.get(dimension).ok_or_else(|| Error::MissingField {
                    id: r.id.clone(),
                    what: format!("{dimension} score in corpus {name}"),
                })
            })
            .collect::<Result<_>>()?;
        golds.push(g);
    }
    let mut rows = Vec::new();
    let entries = std::iter::once((BASELINE.to_string(), ExplanationMode::None.tag().to_string(), &baseline)).chain(
        models
            .iter()
            .map(|m| (m.train_corpus.clone(), m.mode.tag().to_string(), m.scorer)),
    );
    for (train_corpus, mode, scorer) in entries {
        for ((name, corpus), gold) in corpora.iter().zip(&golds) {
            let preds = scorer.predict_all(corpus, dimension)?;
            let (mae, mse) = mae_mse(&preds, gold)?;
            rows.push(EvalRow {
                train_corpus: train_corpus.clone(),
                mode: mode.clone(),
                eval_corpus: name.clone(),
                mae,
                mse,
            });
        }
    }
    Ok(EvalReport { rows })
}
