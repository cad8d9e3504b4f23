use ndarray::Array2;

use crate::error::{Error, Result};

fn log_softmax_row(row: &[f64]) -> (f64, f64) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|&l| (l - max).exp()).sum();
    (max, sum.ln())
}

/// Mean over masked rows of `-ln softmax(logits[i])[targets[i]]`.
pub fn masked_ce_loss(logits: &Array2<f64>, targets: &[usize], mask: &[bool]) -> Result<f64> {
    masked_ce(logits, targets, mask, false).map(|(l, _)| l)
}

/// Loss and its gradient w.r.t. `logits`. Unmasked rows get exactly zero.
pub fn masked_ce_loss_grad(logits: &Array2<f64>, targets: &[usize], mask: &[bool]) -> Result<(f64, Array2<f64>)> {
    masked_ce(logits, targets, mask, true).map(|(l, g)| (l, g.expect("gradient requested")))
}

fn masked_ce(
    logits: &Array2<f64>,
    targets: &[usize],
    mask: &[bool],
    want_grad: bool,
) -> Result<(f64, Option<Array2<f64>>)> {
    let (rows, vocab) = logits.dim();
    if targets.len() != rows || mask.len() != rows {
        return Err(Error::Shape(format!(
            "{rows} logit rows, {} targets, {} mask entries",
            targets.len(),
            mask.len()
        )));
    }
    let m = mask.iter().filter(|&&b| b).count();
    if m == 0 {
        return Err(Error::Empty("loss mask"));
    }
    let mut grad = want_grad.then(|| Array2::zeros((rows, vocab)));
    let mut total = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        if !mask[i] {
            continue;
        }
        let t = targets[i];
        if t >= vocab {
            return Err(Error::UnknownToken(t));
        }
        let row = row.as_slice().expect("standard layout");
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("logits row {i}")));
        }
        let (max, lse) = log_softmax_row(row);
        total += lse - (row[t] - max);
        if let Some(g) = grad.as_mut() {
            let mut grow = g.row_mut(i);
            for (k, &l) in row.iter().enumerate() {
                grow[k] = ((l - max - lse).exp() - if k == t { 1.0 } else { 0.0 }) / m as f64;
            }
        }
    }
    Ok((total / m as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_logits_give_ln_v() {
        let logits = Array2::from_elem((4, 9), 0.3);
        let l = masked_ce_loss(&logits, &[0, 3, 8, 1], &[true, false, true, true]).unwrap();
        assert!((l - 9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_limit_goes_to_zero() {
        let logits = array![[0.0, 60.0, 0.0]];
        assert!(masked_ce_loss(&logits, &[1], &[true]).unwrap() < 1e-20);
    }

    #[test]
    fn three_position_hand_case() {
        let logits = array![[1.0, 2.0], [0.5, -0.5], [3.0, 0.0]];
        let l = masked_ce_loss(&logits, &[1, 0, 1], &[true, true, false]).unwrap();
        let nll = |a: f64, b: f64, t: usize| {
            let z = a.exp() + b.exp();
            -([a, b][t].exp() / z).ln()
        };
        let expected = (nll(1.0, 2.0, 1) + nll(0.5, -0.5, 0)) / 2.0;
        assert!((l - expected).abs() < 1e-14);
    }

    #[test]
    fn masked_rows_have_no_influence() {
        let mut logits = array![[1.0, 2.0], [0.5, -0.5], [3.0, 0.0]];
        let mask = [true, false, true];
        let (l0, g) = masked_ce_loss_grad(&logits, &[1, 0, 1], &mask).unwrap();
        assert!(g.row(1).iter().all(|&v| v == 0.0));
        logits[[1, 0]] += 1e-3;
        assert_eq!(masked_ce_loss(&logits, &[1, 0, 1], &mask).unwrap(), l0);
    }

    #[test]
    fn empty_mask_is_error() {
        assert!(masked_ce_loss(&Array2::zeros((2, 3)), &[0, 0], &[false, false]).is_err());
    }
}
