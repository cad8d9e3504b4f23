use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// One decoupled-weight-decay Adam update with bias-corrected moments:
/// `w -= lr * (wd * w + m_hat / (sqrt(v_hat) + eps))`.
pub fn adamw_step<P: ParamSet + ?Sized, G: ParamSet + ?Sized>(
    params: &mut P,
    grads: &G,
    state: &mut AdamWState,
    h: &AdamWConfig,
) -> Result<()> {
    let mut flat = Vec::new();
    let mut bad = None;
    grads.visit(&mut |name, g| {
        if bad.is_none() && g.iter().any(|v| !v.is_finite()) {
            bad = Some(name.to_string());
        }
        flat.extend_from_slice(g);
    });
    if let Some(name) = bad {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }
    let n = params.num_params();
    if flat.len() != n {
        return Err(Error::Shape(format!("{} gradients for {n} parameters", flat.len())));
    }
    if state.m.is_empty() {
        state.m = vec![0.0; n];
        state.v = vec![0.0; n];
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - h.beta1.powi(t);
    let c2 = 1.0 - h.beta2.powi(t);
    let mut i = 0;
    params.visit_mut(&mut |_, w| {
        for x in w.iter_mut() {
            let g = flat[i];
            let m = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
            let v = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
            state.m[i] = m;
            state.v[i] = v;
            *x -= h.lr * h.weight_decay * *x;
            *x -= h.lr * (m / c1) / ((v / c2).sqrt() + h.eps);
            i += 1;
        }
    });
    Ok(())
}
