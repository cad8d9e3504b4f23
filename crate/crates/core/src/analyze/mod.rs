//! Metrics and interpretability reports: MAE/MSE, logit-lens entropy tables,
//! output-token ranks and LoRA effective-delta differences.

mod entropy_table;
mod weight_diff;

pub use entropy_table::{
    entropy_table, entropy_table_from_diffs, BlockGroup, BlockGrouping, EntropyRow, EntropyTable, RecordTraces,
};
pub use weight_diff::{lora_diff, WeightDiffReport};

use ndarray::Array2;

use crate::error::{Error, Result};

pub fn mae_mse(preds: &[f64], golds: &[f64]) -> Result<(f64, f64)> {
    if preds.len() != golds.len() {
        return Err(Error::invalid(format!(
            "{} predictions vs {} gold scores",
            preds.len(),
            golds.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Empty("score list"));
    }
    let n = preds.len() as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (p, g) in preds.iter().zip(golds) {
        let d = p - g;
        abs += d.abs();
        sq += d * d;
    }
    Ok((abs / n, sq / n))
}

/// Shannon entropy in nats. The input is renormalized; `0 ln 0 = 0`.
pub fn entropy(dist: &[f64]) -> Result<f64> {
    if dist.is_empty() {
        return Err(Error::Empty("distribution"));
    }
    if let Some(bad) = dist.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::invalid(format!("distribution entry {bad} is not a probability")));
    }
    let total: f64 = dist.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("distribution has zero mass"));
    }
    Ok(entropy_of(dist, total))
}

/// As [`entropy`] for distributions already known to be valid (softmax output).
pub(crate) fn entropy_unchecked(dist: &[f64]) -> f64 {
    entropy_of(dist, dist.iter().sum())
}

fn entropy_of(dist: &[f64], total: f64) -> f64 {
    let h: f64 = dist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| {
            let q = p / total;
            -q * q.ln()
        })
        .sum();
    h.max(0.0)
}

/// 1-based rank of `target` under descending probability, ties to lower id.
pub fn token_rank(dist: &[f64], target: usize) -> Result<usize> {
    let Some(&pt) = dist.get(target) else {
        return Err(Error::UnknownToken(target));
    };
    let ahead = dist
        .iter()
        .enumerate()
        .filter(|&(i, &p)| p > pt || (p == pt && i < target))
        .count();
    Ok(ahead + 1)
}

pub fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn mae_mse_cases() {
        assert_eq!(mae_mse(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), (0.0, 0.0));
        assert_eq!(mae_mse(&[1.0], &[0.0]).unwrap(), (1.0, 1.0));
        assert!(mae_mse(&[], &[]).is_err());
        assert!(mae_mse(&[1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn entropy_cases() {
        let v = 37;
        let uniform = vec![1.0 / v as f64; v];
        assert_abs_diff_eq!(entropy(&uniform).unwrap(), (v as f64).ln(), epsilon = 1e-9);
        assert_eq!(entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(entropy(&[0.5, 0.25, 0.25]).unwrap(), 1.5 * 2f64.ln(), epsilon = 1e-12);
        assert!(entropy(&[0.5, -0.1, 0.6]).is_err());
    }

    #[test]
    fn rank_cases() {
        assert_eq!(token_rank(&[0.1, 0.7, 0.2], 1).unwrap(), 1);
        let uniform = [0.25; 4];
        for t in 0..4 {
            assert_eq!(token_rank(&uniform, t).unwrap(), t + 1);
        }
        assert!(token_rank(&uniform, 4).is_err());
    }

    #[test]
    fn frobenius_identity() {
        assert_eq!(frobenius(&Array2::zeros((3, 5))), 0.0);
        assert_abs_diff_eq!(frobenius(&Array2::eye(9)), 3.0, epsilon = 1e-15);
    }

    fn dist(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n).prop_filter_map("zero mass", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn entropy_concave(p in dist(6), q in dist(6), lam in 0.0f64..1.0) {
            let mix: Vec<f64> = p.iter().zip(&q).map(|(a, b)| lam * a + (1.0 - lam) * b).collect();
            let lhs = entropy(&mix).unwrap();
            let rhs = lam * entropy(&p).unwrap() + (1.0 - lam) * entropy(&q).unwrap();
            prop_assert!(lhs >= rhs - 1e-9);
        }

        #[test]
        fn entropy_permutation_invariant(p in dist(8), rot in 0usize..8) {
            let mut r = p.clone();
            r.rotate_left(rot);
            prop_assert!((entropy(&p).unwrap() - entropy(&r).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn ranks_are_a_permutation(p in prop::collection::vec(0u8..4, 1..20)) {
            let d: Vec<f64> = p.iter().map(|&x| f64::from(x)).collect();
            let mut ranks: Vec<usize> = (0..d.len()).map(|t| token_rank(&d, t).unwrap()).collect();
            ranks.sort_unstable();
            prop_assert_eq!(ranks, (1..=d.len()).collect::<Vec<_>>());
        }

        #[test]
        fn frobenius_homogeneous_and_triangle(
            a in prop::collection::vec(-5.0f64..5.0, 12),
            b in prop::collection::vec(-5.0f64..5.0, 12),
            c in -4.0f64..4.0,
        ) {
            let ma = Array2::from_shape_vec((3, 4), a).unwrap();
            let mb = Array2::from_shape_vec((3, 4), b).unwrap();
            let fa = frobenius(&ma);
            prop_assert!((frobenius(&(&ma * c)) - c.abs() * fa).abs() <= 1e-12 * (1.0 + fa));
            prop_assert!(frobenius(&(&ma + &mb)) <= fa + frobenius(&mb) + 1e-9);
        }
    }
}
