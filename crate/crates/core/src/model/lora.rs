//! Low-rank adapters: `W x + (alpha / r) * B (A x)`.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::Rng;

use super::config::{ModelConfig, Target};
use crate::error::{Error, Result};
use crate::params::ParamSet;

/// One adapter factor pair: `a` is `r x d_in`, `b` is `d_out x r`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraPair {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
}

impl LoraPair {
    pub fn zeros(rank: usize, d_in: usize, d_out: usize) -> Self {
        LoraPair {
            a: Array2::zeros((rank, d_in)),
            b: Array2::zeros((d_out, rank)),
        }
    }
}

/// Adapter factors for every (block, target) pair of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapters {
    pub rank: usize,
    pub alpha: f64,
    pub blocks: Vec<BTreeMap<Target, LoraPair>>,
}

impl Adapters {
    /// Fresh adapters: `B = 0`, `A ~ U(-1/sqrt(d_in), 1/sqrt(d_in))`
    /// (zero mean, variance `1 / (3 d_in)`).
    pub fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let mut adapters = Self::zeros(cfg);
        for block in &mut adapters.blocks {
            for pair in block.values_mut() {
                let bound = 1.0 / (pair.a.ncols() as f64).sqrt();
                pair.a.mapv_inplace(|_| rng.gen_range(-bound..bound));
            }
        }
        adapters
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        let blocks = (0..cfg.n_blocks)
            .map(|_| {
                cfg.lora_targets
                    .iter()
                    .map(|&t| {
                        let (d_in, d_out) = t.shape(cfg);
                        (t, LoraPair::zeros(cfg.lora_rank, d_in, d_out))
                    })
                    .collect()
            })
            .collect();
        Adapters {
            rank: cfg.lora_rank,
            alpha: cfg.lora_alpha,
            blocks,
        }
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn pair(&self, block: usize, target: Target) -> Option<&LoraPair> {
        self.blocks.get(block).and_then(|b| b.get(&target))
    }

    pub fn targets(&self) -> Vec<Target> {
        self.blocks
            .first()
            .map(|b| b.keys().copied().collect())
            .unwrap_or_default()
    }

    /// Effective weight delta `(alpha / r) * B A`.
    pub fn delta(&self, block: usize, target: Target) -> Option<Array2<f64>> {
        self.pair(block, target).map(|p| p.b.dot(&p.a) * self.scaling())
    }

    /// A zero-filled copy with the same layout, used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        Adapters {
            rank: self.rank,
            alpha: self.alpha,
            blocks: self
                .blocks
                .iter()
                .map(|b| {
                    b.iter()
                        .map(|(&t, p)| {
                            (
                                t,
                                LoraPair {
                                    a: Array2::zeros(p.a.raw_dim()),
                                    b: Array2::zeros(p.b.raw_dim()),
                                },
                            )
                        })
                        .collect()
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Adapters) {
        for (mine, theirs) in self.blocks.iter_mut().zip(&other.blocks) {
            for (t, p) in mine.iter_mut() {
                let q = &theirs[t];
                p.a += &q.a;
                p.b += &q.b;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for b in &mut self.blocks {
            for p in b.values_mut() {
                p.a *= c;
                p.b *= c;
            }
        }
    }
}

impl ParamSet for Adapters {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        for (bi, block) in self.blocks.iter().enumerate() {
            for (t, p) in block {
                f(
                    &format!("block{bi}.{t}.lora_a"),
                    p.a.as_slice().expect("standard layout"),
                );
                f(
                    &format!("block{bi}.{t}.lora_b"),
                    p.b.as_slice().expect("standard layout"),
                );
            }
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (bi, block) in self.blocks.iter_mut().enumerate() {
            for (t, p) in block.iter_mut() {
                f(
                    &format!("block{bi}.{t}.lora_a"),
                    p.a.as_slice_mut().expect("standard layout"),
                );
                f(
                    &format!("block{bi}.{t}.lora_b"),
                    p.b.as_slice_mut().expect("standard layout"),
                );
            }
        }
    }
}

/// `y = W x + (alpha / r) * B (A x)`.
pub fn lora_apply(
    w: &Array2<f64>,
    a: &Array2<f64>,
    b: &Array2<f64>,
    alpha: f64,
    rank: usize,
    x: &Array1<f64>,
) -> Result<Array1<f64>> {
    let (d_out, d_in) = w.dim();
    if x.len() != d_in || a.dim() != (rank, d_in) || b.dim() != (d_out, rank) || rank == 0 {
        return Err(Error::Shape(format!(
            "W {:?}, A {:?}, B {:?}, x {}, rank {rank}",
            w.dim(),
            a.dim(),
            b.dim(),
            x.len()
        )));
    }
    let base = w.dot(x);
    let low = b.dot(&a.dot(x));
    Ok(base + low * (alpha / rank as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_b_is_identity_path() {
        let w = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let a = array![[0.3, -0.7]];
        let b = Array2::zeros((3, 1));
        let x = array![0.5, -1.5];
        assert_eq!(lora_apply(&w, &a, &b, 2.0, 1, &x).unwrap(), w.dot(&x));
    }

    #[test]
    fn rank_one_hand_computation() {
        // W = 0, A = [1 0], B = [1; 0], alpha = 2, r = 1  ->  y = (2 x1, 0)
        let w = Array2::zeros((2, 2));
        let a = array![[1.0, 0.0]];
        let b = array![[1.0], [0.0]];
        let x = array![3.0, 7.0];
        assert_eq!(lora_apply(&w, &a, &b, 2.0, 1, &x).unwrap(), array![6.0, 0.0]);
    }

    #[test]
    fn doubling_alpha_doubles_delta() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = Array2::from_shape_fn((4, 3), |_| rng.gen_range(-1.0..1.0));
        let a = Array2::from_shape_fn((2, 3), |_| rng.gen_range(-1.0..1.0));
        let b = Array2::from_shape_fn((4, 2), |_| rng.gen_range(-1.0..1.0));
        let x = Array1::from_shape_fn(3, |_| rng.gen_range(-1.0..1.0));
        let wx = w.dot(&x);
        let d1 = lora_apply(&w, &a, &b, 1.5, 2, &x).unwrap() - &wx;
        let d2 = lora_apply(&w, &a, &b, 3.0, 2, &x).unwrap() - &wx;
        for (p, q) in d2.iter().zip(d1.iter()) {
            assert!((p - 2.0 * q).abs() < 1e-14);
        }
        // without the base term the scaling is exact
        let zero = Array2::zeros((4, 3));
        let e1 = lora_apply(&zero, &a, &b, 1.5, 2, &x).unwrap();
        let e2 = lora_apply(&zero, &a, &b, 3.0, 2, &x).unwrap();
        assert_eq!(e2, &e1 * 2.0);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let w = Array2::zeros((2, 2));
        let a = Array2::zeros((1, 3));
        let b = Array2::zeros((2, 1));
        assert!(lora_apply(&w, &a, &b, 1.0, 1, &array![1.0, 2.0]).is_err());
    }

    #[test]
    fn init_has_zero_b() {
        let cfg = ModelConfig::default();
        let ad = Adapters::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(ad.blocks.len(), cfg.n_blocks);
        for b in &ad.blocks {
            assert_eq!(b.len(), 7);
            for p in b.values() {
                assert!(p.b.iter().all(|&v| v == 0.0));
                assert!(p.a.iter().any(|&v| v != 0.0));
                let bound = 1.0 / (p.a.ncols() as f64).sqrt();
                assert!(p.a.iter().all(|v| v.abs() <= bound));
            }
        }
        assert_eq!(ad.scaling(), 2.0);
    }
}
