use super::frobenius;
use crate::error::{Error, Result};
use crate::model::{Adapters, ModelConfig, Target};

/// Per-target size of the difference between two adapter sets' effective
/// deltas, root-sum-squared over blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightDiffReport {
    /// Report order: Down, Gate, Up, K, O, Q, V (targets present only).
    pub raw: Vec<(Target, f64)>,
    /// Divided by the row max; `None` when every raw norm is zero.
    pub normalized: Option<Vec<f64>>,
}

pub fn lora_diff(adapters_e: &Adapters, adapters_n: &Adapters, cfg: &ModelConfig) -> Result<WeightDiffReport> {
    let targets_e = adapters_e.targets();
    if targets_e != adapters_n.targets() {
        return Err(Error::invalid(format!(
            "adapter target sets differ: {:?} vs {:?}",
            targets_e,
            adapters_n.targets()
        )));
    }
    if adapters_e.blocks.len() != cfg.n_blocks || adapters_n.blocks.len() != cfg.n_blocks {
        return Err(Error::Shape("adapter block count does not match config".into()));
    }
    let mut raw = Vec::new();
    for t in Target::REPORT_ORDER {
        if !targets_e.contains(&t) {
            continue;
        }
        let mut sum_sq = 0.0;
        for b in 0..cfg.n_blocks {
            let de = adapters_e.delta(b, t).expect("target present");
            let dn = adapters_n.delta(b, t).expect("target present");
            if de.dim() != dn.dim() {
                return Err(Error::Shape(format!("block {b} target {t} delta shapes differ")));
            }
            let f = frobenius(&(de - dn));
            sum_sq += f * f;
        }
        raw.push((t, sum_sq.sqrt()));
    }
    let max = raw.iter().map(|r| r.1).fold(0.0, f64::max);
    let normalized = (max > 0.0).then(|| raw.iter().map(|r| r.1 / max).collect());
    Ok(WeightDiffReport { raw, normalized })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(cfg: &ModelConfig, seed: u64) -> Adapters {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Adapters::init(cfg, &mut rng);
        for blk in &mut a.blocks {
            for p in blk.values_mut() {
                p.b.mapv_inplace(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0));
            }
        }
        a
    }

    #[test]
    fn self_difference_is_zero() {
        let cfg = ModelConfig::tiny();
        let a = random(&cfg, 3);
        let r = lora_diff(&a, &a, &cfg).unwrap();
        assert!(r.raw.iter().all(|x| x.1 == 0.0));
        assert!(r.normalized.is_none());
    }

    #[test]
    fn all_ones_four_by_four() {
        let mut cfg = ModelConfig::tiny();
        cfg.n_blocks = 1;
        cfg.d_model = 4;
        cfg.n_heads = 1;
        cfg.lora_rank = 1;
        cfg.lora_alpha = 1.0;
        cfg.lora_targets = vec![Target::Q];
        let n = Adapters::zeros(&cfg);
        let mut e = Adapters::zeros(&cfg);
        let p = e.blocks[0].get_mut(&Target::Q).unwrap();
        p.a = Array2::ones((1, 4));
        p.b = Array2::ones((4, 1));
        let r = lora_diff(&e, &n, &cfg).unwrap();
        assert_eq!(r.raw, vec![(Target::Q, 4.0)]);
        assert_eq!(r.normalized, Some(vec![1.0]));
    }

    #[test]
    fn normalized_max_is_one_and_scale_free() {
        let cfg = ModelConfig::tiny();
        let (e, n) = (random(&cfg, 1), random(&cfg, 2));
        let r = lora_diff(&e, &n, &cfg).unwrap();
        let norm = r.normalized.clone().unwrap();
        assert_eq!(norm.iter().copied().fold(0.0, f64::max), 1.0);
        let (mut e2, mut n2) = (e.clone(), n.clone());
        for ad in [&mut e2, &mut n2] {
            for blk in &mut ad.blocks {
                for p in blk.values_mut() {
                    p.b *= 3.5;
                }
            }
        }
        let r2 = lora_diff(&e2, &n2, &cfg).unwrap();
        for (x, y) in norm.iter().zip(r2.normalized.unwrap()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn target_mismatch_is_error() {
        let cfg = ModelConfig::tiny();
        let mut other = cfg.clone();
        other.lora_targets = vec![Target::Q, Target::V];
        assert!(lora_diff(&Adapters::zeros(&cfg), &Adapters::zeros(&other), &cfg).is_err());
    }
}
