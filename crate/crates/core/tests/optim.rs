use expltune::params::ParamSet;
use expltune::train::{adamw_step, AdamWConfig, AdamWState};

struct Flat(Vec<f64>);

impl ParamSet for Flat {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        f("w", &self.0);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("w", &mut self.0);
    }
}

/// Scalar AdamW, written the way the update is usually stated: decay the
/// weight, then apply the bias-corrected Adam step.
fn reference(w0: f64, grads: &[f64], h: &AdamWConfig) -> f64 {
    let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
    for (k, &g) in grads.iter().enumerate() {
        let t = (k + 1) as f64;
        w *= 1.0 - h.lr * h.weight_decay;
        m = h.beta1 * m + (1.0 - h.beta1) * g;
        v = h.beta2 * v + (1.0 - h.beta2) * g * g;
        let m_hat = m / (1.0 - h.beta1.powf(t));
        let v_hat = v / (1.0 - h.beta2.powf(t));
        w -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
    }
    w
}

#[test]
fn three_steps_match_reference() {
    let h = AdamWConfig {
        lr: 1e-2,
        weight_decay: 0.1,
        ..AdamWConfig::default()
    };
    let w0 = vec![0.5, -1.25, 2.0, 0.0];
    let grads = [[0.3, -0.1, 0.0, 2.0], [0.2, 0.4, -1.0, 2.0], [-0.5, 0.4, 1e-3, -3.0]];
    let mut p = Flat(w0.clone());
    let mut st = AdamWState::default();
    for g in &grads {
        adamw_step(&mut p, &Flat(g.to_vec()), &mut st, &h).unwrap();
    }
    assert_eq!(st.step, 3);
    for (i, &w) in p.0.iter().enumerate() {
        let col: Vec<f64> = grads.iter().map(|g| g[i]).collect();
        let want = reference(w0[i], &col, &h);
        assert!((w - want).abs() < 1e-12, "param {i}: {w} vs {want}");
    }
}

#[test]
fn first_step_moves_by_lr() {
    // with zero decay the first update is lr * sign(g), up to eps
    let h = AdamWConfig {
        lr: 1e-3,
        weight_decay: 0.0,
        ..AdamWConfig::default()
    };
    let mut p = Flat(vec![1.0, 1.0]);
    adamw_step(&mut p, &Flat(vec![4.0, -0.02]), &mut AdamWState::default(), &h).unwrap();
    assert!((p.0[0] - (1.0 - 1e-3)).abs() < 1e-9);
    assert!((p.0[1] - (1.0 + 1e-3)).abs() < 1e-9);
}

#[test]
fn non_finite_gradient_is_rejected() {
    let mut p = Flat(vec![1.0]);
    let err = adamw_step(
        &mut p,
        &Flat(vec![f64::NAN]),
        &mut AdamWState::default(),
        &AdamWConfig::default(),
    );
    assert!(err.is_err());
    assert_eq!(p.0, vec![1.0]);
}
