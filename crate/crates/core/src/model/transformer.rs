//! Decoder-only transformer: learned positions, pre-RMSNorm blocks with
//! causal multi-head attention and a SiLU-gated feed-forward, untied
//! unembedding. Every projection can carry a LoRA adapter.
//!
//! The backward pass is written out by hand; rows are positions, weights are
//! stored `d_out x d_in` and applied as `X W^T`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::{ModelConfig, Target};
use super::lora::{Adapters, LoraPair};
use crate::analyze;
use crate::error::{Error, Result};
use crate::params::ParamSet;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub attn_norm: Array1<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub ffn_norm: Array1<f64>,
    pub w_gate: Array2<f64>,
    pub w_up: Array2<f64>,
    pub w_down: Array2<f64>,
}

impl BlockWeights {
    pub fn weight(&self, t: Target) -> &Array2<f64> {
        match t {
            Target::Q => &self.wq,
            Target::K => &self.wk,
            Target::V => &self.wv,
            Target::O => &self.wo,
            Target::Gate => &self.w_gate,
            Target::Up => &self.w_up,
            Target::Down => &self.w_down,
        }
    }

    pub fn weight_mut(&mut self, t: Target) -> &mut Array2<f64> {
        match t {
            Target::Q => &mut self.wq,
            Target::K => &mut self.wk,
            Target::V => &mut self.wv,
            Target::O => &mut self.wo,
            Target::Gate => &mut self.w_gate,
            Target::Up => &mut self.w_up,
            Target::Down => &mut self.w_down,
        }
    }
}

/// Frozen (after pretraining) base parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseWeights {
    pub embed: Array2<f64>,
    pub pos: Array2<f64>,
    pub blocks: Vec<BlockWeights>,
    pub final_norm: Array1<f64>,
    pub unembed: Array2<f64>,
}

fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

impl BaseWeights {
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.d_model;
        let f = cfg.d_ff;
        let proj = 1.0 / (d as f64).sqrt();
        let resid = proj / (2.0 * cfg.n_blocks as f64).sqrt();
        let blocks = (0..cfg.n_blocks)
            .map(|_| BlockWeights {
                attn_norm: Array1::ones(d),
                wq: normal_matrix(d, d, proj, rng),
                wk: normal_matrix(d, d, proj, rng),
                wv: normal_matrix(d, d, proj, rng),
                wo: normal_matrix(d, d, resid, rng),
                ffn_norm: Array1::ones(d),
                w_gate: normal_matrix(f, d, proj, rng),
                w_up: normal_matrix(f, d, proj, rng),
                w_down: normal_matrix(d, f, 1.0 / (f as f64).sqrt() / (2.0 * cfg.n_blocks as f64).sqrt(), rng),
            })
            .collect();
        BaseWeights {
            embed: normal_matrix(cfg.vocab_size, d, 1.0, rng),
            pos: normal_matrix(cfg.context_len, d, 0.2, rng),
            blocks,
            final_norm: Array1::ones(d),
            unembed: normal_matrix(cfg.vocab_size, d, proj, rng),
        }
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let blocks = (0..cfg.n_blocks)
            .map(|_| {
                let w = |t: Target| {
                    let (i, o) = t.shape(cfg);
                    Array2::zeros((o, i))
                };
                BlockWeights {
                    attn_norm: Array1::zeros(d),
                    wq: w(Target::Q),
                    wk: w(Target::K),
                    wv: w(Target::V),
                    wo: w(Target::O),
                    ffn_norm: Array1::zeros(d),
                    w_gate: w(Target::Gate),
                    w_up: w(Target::Up),
                    w_down: w(Target::Down),
                }
            })
            .collect();
        BaseWeights {
            embed: Array2::zeros((cfg.vocab_size, d)),
            pos: Array2::zeros((cfg.context_len, d)),
            blocks,
            final_norm: Array1::zeros(d),
            unembed: Array2::zeros((cfg.vocab_size, d)),
        }
    }

    /// Tensor shapes in [`ParamSet::visit`] order.
    pub fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        let mut out = vec![self.embed.shape().to_vec(), self.pos.shape().to_vec()];
        for b in &self.blocks {
            out.push(b.attn_norm.shape().to_vec());
            out.push(b.ffn_norm.shape().to_vec());
            for t in Target::ALL {
                out.push(b.weight(t).shape().to_vec());
            }
        }
        out.push(self.final_norm.shape().to_vec());
        out.push(self.unembed.shape().to_vec());
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |_, v| v.fill(0.0));
        z
    }

    pub fn add_assign(&mut self, other: &BaseWeights) {
        let mut theirs = Vec::new();
        other.visit(&mut |_, v| theirs.push(v.to_vec()));
        let mut i = 0;
        self.visit_mut(&mut |_, v| {
            for (a, b) in v.iter_mut().zip(&theirs[i]) {
                *a += b;
            }
            i += 1;
        });
    }

    /// Rounds every value to the nearest `f32`, so that checkpoints are lossless.
    pub fn round_to_f32(&mut self) {
        self.visit_mut(&mut |_, v| v.iter_mut().for_each(|x| *x = f64::from(*x as f32)));
    }

    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let d = cfg.d_model;
        let ok = self.embed.dim() == (cfg.vocab_size, d)
            && self.pos.dim() == (cfg.context_len, d)
            && self.unembed.dim() == (cfg.vocab_size, d)
            && self.final_norm.len() == d
            && self.blocks.len() == cfg.n_blocks
            && self.blocks.iter().all(|b| {
                Target::ALL.iter().all(|&t| {
                    let (i, o) = t.shape(cfg);
                    b.weight(t).dim() == (o, i)
                })
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("base weights do not match model config".into()))
        }
    }
}

impl ParamSet for BaseWeights {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        f("embed", self.embed.as_slice().expect("standard layout"));
        f("pos", self.pos.as_slice().expect("standard layout"));
        for (i, b) in self.blocks.iter().enumerate() {
            f(
                &format!("block{i}.attn_norm"),
                b.attn_norm.as_slice().expect("standard layout"),
            );
            f(
                &format!("block{i}.ffn_norm"),
                b.ffn_norm.as_slice().expect("standard layout"),
            );
            for t in Target::ALL {
                f(
                    &format!("block{i}.{t}"),
                    b.weight(t).as_slice().expect("standard layout"),
                );
            }
        }
        f("final_norm", self.final_norm.as_slice().expect("standard layout"));
        f("unembed", self.unembed.as_slice().expect("standard layout"));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("embed", self.embed.as_slice_mut().expect("standard layout"));
        f("pos", self.pos.as_slice_mut().expect("standard layout"));
        for (i, b) in self.blocks.iter_mut().enumerate() {
            f(
                &format!("block{i}.attn_norm"),
                b.attn_norm.as_slice_mut().expect("standard layout"),
            );
            f(
                &format!("block{i}.ffn_norm"),
                b.ffn_norm.as_slice_mut().expect("standard layout"),
            );
            for t in Target::ALL {
                f(
                    &format!("block{i}.{t}"),
                    b.weight_mut(t).as_slice_mut().expect("standard layout"),
                );
            }
        }
        f("final_norm", self.final_norm.as_slice_mut().expect("standard layout"));
        f("unembed", self.unembed.as_slice_mut().expect("standard layout"));
    }
}

/// Logit-lens view of one block at one position.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTrace {
    /// 1-based block index.
    pub block: usize,
    pub hidden: Vec<f64>,
    /// Softmax of the final-norm + unembedding of `hidden`.
    pub distribution: Vec<f64>,
    /// Nats.
    pub entropy: f64,
    pub target_rank: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `positions x vocab_size`.
    pub logits: Array2<f64>,
    pub traces: Option<Vec<BlockTrace>>,
}

/// Full forward pass. With `capture`, one logit-lens trace per block is
/// recorded at the last position.
pub fn forward(
    tokens: &[usize],
    cfg: &ModelConfig,
    base: &BaseWeights,
    adapters: Option<&Adapters>,
    capture: bool,
) -> Result<ForwardOutput> {
    let run = run_forward(cfg, base, adapters, tokens, None, false, capture)?;
    let logits = run.xf.dot(&base.unembed.t());
    let traces = capture.then(|| {
        let pos = tokens.len() - 1;
        run.block_outputs
            .iter()
            .enumerate()
            .map(|(b, h)| lens_trace(cfg, base, b + 1, h.row(pos).to_owned()))
            .collect()
    });
    Ok(ForwardOutput { logits, traces })
}

/// Final normalized hidden states (`positions x d_model`), without logits.
pub fn hidden_states(
    tokens: &[usize],
    cfg: &ModelConfig,
    base: &BaseWeights,
    adapters: Option<&Adapters>,
) -> Result<Array2<f64>> {
    Ok(run_forward(cfg, base, adapters, tokens, None, false, false)?.xf)
}

/// Logit-lens traces for every block at `position`.
pub fn block_traces(
    tokens: &[usize],
    position: usize,
    cfg: &ModelConfig,
    base: &BaseWeights,
    adapters: Option<&Adapters>,
) -> Result<Vec<BlockTrace>> {
    if position >= tokens.len() {
        return Err(Error::invalid(format!(
            "trace position {position} outside {} tokens",
            tokens.len()
        )));
    }
    let run = run_forward(cfg, base, adapters, &tokens[..=position], None, false, true)?;
    Ok(run
        .block_outputs
        .iter()
        .enumerate()
        .map(|(b, h)| lens_trace(cfg, base, b + 1, h.row(position).to_owned()))
        .collect())
}

fn lens_trace(cfg: &ModelConfig, base: &BaseWeights, block: usize, hidden: Array1<f64>) -> BlockTrace {
    let ms = hidden.iter().map(|v| v * v).sum::<f64>() / hidden.len() as f64;
    let inv = 1.0 / (ms + cfg.norm_eps).sqrt();
    let normed = &hidden * inv * &base.final_norm;
    let logits = base.unembed.dot(&normed);
    let distribution = softmax(logits.as_slice().expect("contiguous"));
    let entropy = analyze::entropy_unchecked(&distribution);
    BlockTrace {
        block,
        hidden: hidden.to_vec(),
        distribution,
        entropy,
        target_rank: None,
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

// ---------------------------------------------------------------------------
// Training-time forward with caches, and the backward pass.

struct LinCache {
    /// Inverted-dropout multipliers on the adapter input, when dropout is active.
    mask: Option<Array2<f64>>,
    /// `x_drop A^T`.
    xa: Array2<f64>,
}

struct BlockCache {
    n1: Array2<f64>,
    inv1: Array1<f64>,
    xn1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    attn: Array2<f64>,
    n2: Array2<f64>,
    inv2: Array1<f64>,
    xn2: Array2<f64>,
    gate: Array2<f64>,
    up: Array2<f64>,
    hidden: Array2<f64>,
    lin: [Option<LinCache>; 7],
}

/// Intermediates of a forward pass, consumed by [`backward`].
pub struct ForwardCache {
    tokens: Vec<usize>,
    blocks: Vec<BlockCache>,
    nf: Array2<f64>,
    invf: Array1<f64>,
}

struct Run {
    xf: Array2<f64>,
    cache: Option<ForwardCache>,
    block_outputs: Vec<Array2<f64>>,
}

fn target_slot(t: Target) -> usize {
    match t {
        Target::Q => 0,
        Target::K => 1,
        Target::V => 2,
        Target::O => 3,
        Target::Gate => 4,
        Target::Up => 5,
        Target::Down => 6,
    }
}

fn rms_norm(x: &Array2<f64>, eps: f64) -> (Array2<f64>, Array1<f64>) {
    let d = x.ncols() as f64;
    let inv: Array1<f64> = x
        .rows()
        .into_iter()
        .map(|r| 1.0 / (r.dot(&r) / d + eps).sqrt())
        .collect();
    let n = x * &inv.view().insert_axis(Axis(1));
    (n, inv)
}

fn rms_norm_backward(dn: &Array2<f64>, n: &Array2<f64>, inv: &Array1<f64>) -> Array2<f64> {
    let d = n.ncols() as f64;
    let mut dx = dn.clone();
    for ((mut row, nrow), (&iv, dnrow)) in dx.rows_mut().into_iter().zip(n.rows()).zip(inv.iter().zip(dn.rows())) {
        let m = dnrow.dot(&nrow) / d;
        row.zip_mut_with(&nrow, |a, &b| *a = iv * (*a - b * m));
    }
    dx
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct Dropout<'a> {
    p: f64,
    rng: &'a mut dyn rand::RngCore,
}

fn lin_forward(
    x: &Array2<f64>,
    w: &Array2<f64>,
    lora: Option<&LoraPair>,
    scaling: f64,
    dropout: Option<&mut Dropout<'_>>,
    keep: bool,
) -> (Array2<f64>, Option<LinCache>) {
    let mut y = x.dot(&w.t());
    let mut cache = None;
    if let Some(p) = lora {
        let mask = dropout.filter(|d| d.p > 0.0).map(|d| {
            let keep_scale = 1.0 / (1.0 - d.p);
            Array2::from_shape_fn(x.dim(), |_| if d.rng.gen::<f64>() < d.p { 0.0 } else { keep_scale })
        });
        let xa = match &mask {
            Some(m) => (x * m).dot(&p.a.t()),
            None => x.dot(&p.a.t()),
        };
        general_mat_mul(scaling, &xa, &p.b.t(), 1.0, &mut y);
        if keep {
            cache = Some(LinCache { mask, xa });
        }
    }
    (y, cache)
}

#[allow(clippy::too_many_arguments)]
fn lin_backward(
    dy: &Array2<f64>,
    x_in: &Array2<f64>,
    w: &Array2<f64>,
    lora: Option<&LoraPair>,
    scaling: f64,
    cache: Option<&LinCache>,
    w_grad: Option<&mut Array2<f64>>,
    pair_grad: Option<&mut LoraPair>,
) -> Array2<f64> {
    let mut dx = dy.dot(w);
    if let Some(gw) = w_grad {
        general_mat_mul(1.0, &dy.t(), x_in, 1.0, gw);
    }
    if let (Some(p), Some(c)) = (lora, cache) {
        let dyb = dy.dot(&p.b) * scaling;
        let mut dxl = dyb.dot(&p.a);
        if let Some(m) = &c.mask {
            dxl *= m;
        }
        dx += &dxl;
        if let Some(g) = pair_grad {
            match &c.mask {
                Some(m) => general_mat_mul(1.0, &dyb.t(), &(x_in * m), 1.0, &mut g.a),
                None => general_mat_mul(1.0, &dyb.t(), x_in, 1.0, &mut g.a),
            }
            general_mat_mul(scaling, &dy.t(), &c.xa, 1.0, &mut g.b);
        }
    }
    dx
}

fn attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, n_heads: usize) -> (Array2<f64>, Vec<Array2<f64>>) {
    let (t, d) = q.dim();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Array2::zeros((t, d));
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let qh = q.slice(cols);
        let kh = k.slice(cols);
        let vh = v.slice(cols);
        let mut p = qh.dot(&kh.t());
        for (i, mut row) in p.rows_mut().into_iter().enumerate() {
            let mut max = f64::NEG_INFINITY;
            for j in 0..=i {
                row[j] *= scale;
                max = max.max(row[j]);
            }
            let mut sum = 0.0;
            for j in 0..=i {
                row[j] = (row[j] - max).exp();
                sum += row[j];
            }
            for j in 0..t {
                row[j] = if j <= i { row[j] / sum } else { 0.0 };
            }
        }
        out.slice_mut(cols).assign(&p.dot(&vh));
        probs.push(p);
    }
    (out, probs)
}

fn attention_backward(
    dout: &Array2<f64>,
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    probs: &[Array2<f64>],
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let (t, d) = q.dim();
    let n_heads = probs.len();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::zeros((t, d));
    let mut dk = Array2::zeros((t, d));
    let mut dv = Array2::zeros((t, d));
    for (h, p) in probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let doh = dout.slice(cols);
        dv.slice_mut(cols).assign(&p.t().dot(&doh));
        let mut ds = doh.dot(&v.slice(cols).t());
        for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
            let dot = row.dot(&prow);
            row.zip_mut_with(&prow, |g, &pp| *g = pp * (*g - dot) * scale);
        }
        dq.slice_mut(cols).assign(&ds.dot(&k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&q.slice(cols)));
    }
    (dq, dk, dv)
}

fn check_tokens(cfg: &ModelConfig, tokens: &[usize]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::Empty("token sequence"));
    }
    if tokens.len() > cfg.context_len {
        return Err(Error::ContextOverflow {
            len: tokens.len(),
            max: cfg.context_len,
        });
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(Error::UnknownToken(bad));
    }
    Ok(())
}

fn run_forward(
    cfg: &ModelConfig,
    base: &BaseWeights,
    adapters: Option<&Adapters>,
    tokens: &[usize],
    mut dropout: Option<Dropout<'_>>,
    keep: bool,
    capture: bool,
) -> Result<Run> {
    check_tokens(cfg, tokens)?;
    let t_len = tokens.len();
    let d = cfg.d_model;
    let scaling = adapters.map_or(0.0, Adapters::scaling);

    let mut x = Array2::zeros((t_len, d));
    for (i, &tok) in tokens.iter().enumerate() {
        let mut row = x.row_mut(i);
        row.assign(&base.embed.row(tok));
        row += &base.pos.row(i);
    }

    let mut caches = Vec::new();
    let mut block_outputs = Vec::new();
    for (bi, bw) in base.blocks.iter().enumerate() {
        let pair = |t: Target| adapters.and_then(|a| a.pair(bi, t));
        let x_in = x;
        let (n1, inv1) = rms_norm(&x_in, cfg.norm_eps);
        let xn1 = &n1 * &bw.attn_norm;

        let (q, cq) = lin_forward(&xn1, &bw.wq, pair(Target::Q), scaling, dropout.as_mut(), keep);
        let (k, ck) = lin_forward(&xn1, &bw.wk, pair(Target::K), scaling, dropout.as_mut(), keep);
        let (v, cv) = lin_forward(&xn1, &bw.wv, pair(Target::V), scaling, dropout.as_mut(), keep);
        let (attn, probs) = attention(&q, &k, &v, cfg.n_heads);
        let (o, co) = lin_forward(&attn, &bw.wo, pair(Target::O), scaling, dropout.as_mut(), keep);
        let x_mid = &x_in + &o;

        let (n2, inv2) = rms_norm(&x_mid, cfg.norm_eps);
        let xn2 = &n2 * &bw.ffn_norm;
        let (gate, cg) = lin_forward(&xn2, &bw.w_gate, pair(Target::Gate), scaling, dropout.as_mut(), keep);
        let (up, cu) = lin_forward(&xn2, &bw.w_up, pair(Target::Up), scaling, dropout.as_mut(), keep);
        let mut hidden = gate.mapv(|g| g * sigmoid(g));
        hidden *= &up;
        let (down, cd) = lin_forward(&hidden, &bw.w_down, pair(Target::Down), scaling, dropout.as_mut(), keep);
        x = &x_mid + &down;

        if capture {
            block_outputs.push(x.clone());
        }
        if keep {
            caches.push(BlockCache {
                n1,
                inv1,
                xn1,
                q,
                k,
                v,
                probs,
                attn,
                n2,
                inv2,
                xn2,
                gate,
                up,
                hidden,
                lin: [cq, ck, cv, co, cg, cu, cd],
            });
        }
    }

    let (nf, invf) = rms_norm(&x, cfg.norm_eps);
    let xf = &nf * &base.final_norm;
    let cache = keep.then(|| ForwardCache {
        tokens: tokens.to_vec(),
        blocks: caches,
        nf,
        invf,
    });
    Ok(Run {
        xf,
        cache,
        block_outputs,
    })
}

/// Forward pass keeping the intermediates needed by [`backward`]. Returns the
/// final normalized hidden states (`positions x d_model`).
pub fn forward_train(
    cfg: &ModelConfig,
    base: &BaseWeights,
    adapters: Option<&Adapters>,
    tokens: &[usize],
    dropout_rng: Option<&mut dyn rand::RngCore>,
) -> Result<(Array2<f64>, ForwardCache)> {
    let dropout = dropout_rng.map(|rng| Dropout {
        p: cfg.lora_dropout,
        rng,
    });
    let run = run_forward(cfg, base, adapters, tokens, dropout, true, false)?;
    Ok((run.xf, run.cache.expect("cache kept")))
}

/// Logits for selected positions of the final hidden states.
pub fn unembed_rows(base: &BaseWeights, xf: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    xf.select(Axis(0), rows).dot(&base.unembed.t())
}

/// Gradient of the selected-row logits, scattered back to `positions x d_model`.
/// Accumulates into `unembed_grad` when given.
pub fn unembed_rows_backward(
    base: &BaseWeights,
    xf: &Array2<f64>,
    rows: &[usize],
    dlogits: &Array2<f64>,
    unembed_grad: Option<&mut Array2<f64>>,
) -> Array2<f64> {
    let mut dxf = Array2::zeros(xf.raw_dim());
    let d_sel = dlogits.dot(&base.unembed);
    for (k, &r) in rows.iter().enumerate() {
        let mut row = dxf.row_mut(r);
        row += &d_sel.row(k);
    }
    if let Some(g) = unembed_grad {
        let sel = xf.select(Axis(0), rows);
        general_mat_mul(1.0, &dlogits.t(), &sel, 1.0, g);
    }
    dxf
}

/// Backpropagates `dxf` (gradient w.r.t. the final normalized hidden states).
/// Accumulates parameter gradients into whichever buffers are given.
pub fn backward(
    cfg: &ModelConfig,
    base: &BaseWeights,
    adapters: Option<&Adapters>,
    cache: &ForwardCache,
    dxf: &Array2<f64>,
    mut base_grads: Option<&mut BaseWeights>,
    mut adapter_grads: Option<&mut Adapters>,
) {
    let scaling = adapters.map_or(0.0, Adapters::scaling);

    if let Some(g) = base_grads.as_deref_mut() {
        g.final_norm += &(dxf * &cache.nf).sum_axis(Axis(0));
    }
    let dnf = dxf * &base.final_norm;
    let mut dx = rms_norm_backward(&dnf, &cache.nf, &cache.invf);

    for bi in (0..cfg.n_blocks).rev() {
        let bw = &base.blocks[bi];
        let bc = &cache.blocks[bi];
        let pair = |t: Target| adapters.and_then(|a| a.pair(bi, t));

        macro_rules! lin_back {
            ($dy:expr, $x:expr, $t:expr) => {{
                let t = $t;
                let wg = base_grads.as_deref_mut().map(|g| g.blocks[bi].weight_mut(t));
                let pg = adapter_grads
                    .as_deref_mut()
                    .and_then(|g| g.blocks[bi].get_mut(&t));
                lin_backward(
                    $dy,
                    $x,
                    bw.weight(t),
                    pair(t),
                    scaling,
                    bc.lin[target_slot(t)].as_ref(),
                    wg,
                    pg,
                )
            }};
        }

        // feed-forward
        let dhidden = lin_back!(&dx, &bc.hidden, Target::Down);
        let mut dgate = bc.gate.clone();
        let mut dup = bc.gate.mapv(|g| g * sigmoid(g));
        dup *= &dhidden;
        dgate.zip_mut_with(&dhidden, |g, &dh| {
            let sg = sigmoid(*g);
            *g = sg * (1.0 + *g * (1.0 - sg)) * dh;
        });
        dgate *= &bc.up;
        let mut dxn2 = lin_back!(&dgate, &bc.xn2, Target::Gate);
        dxn2 += &lin_back!(&dup, &bc.xn2, Target::Up);
        if let Some(g) = base_grads.as_deref_mut() {
            g.blocks[bi].ffn_norm += &(&dxn2 * &bc.n2).sum_axis(Axis(0));
        }
        let dn2 = &dxn2 * &bw.ffn_norm;
        dx += &rms_norm_backward(&dn2, &bc.n2, &bc.inv2);

        // attention
        let dattn = lin_back!(&dx, &bc.attn, Target::O);
        let (dq, dk, dv) = attention_backward(&dattn, &bc.q, &bc.k, &bc.v, &bc.probs);
        let mut dxn1 = lin_back!(&dq, &bc.xn1, Target::Q);
        dxn1 += &lin_back!(&dk, &bc.xn1, Target::K);
        dxn1 += &lin_back!(&dv, &bc.xn1, Target::V);
        if let Some(g) = base_grads.as_deref_mut() {
            g.blocks[bi].attn_norm += &(&dxn1 * &bc.n1).sum_axis(Axis(0));
        }
        let dn1 = &dxn1 * &bw.attn_norm;
        dx += &rms_norm_backward(&dn1, &bc.n1, &bc.inv1);
    }

    if let Some(g) = base_grads {
        for (i, &tok) in cache.tokens.iter().enumerate() {
            let row = dx.row(i);
            let mut e = g.embed.row_mut(tok);
            e += &row;
            let mut p = g.pos.row_mut(i);
            p += &row;
        }
    }
}
