//! 4-bit NormalFloat block quantization with double-quantized scales.
//!
//! The codebook is built from evenly spaced standard-normal quantiles: eight
//! levels on the negative side, seven on the positive side, an exact zero,
//! scaled so the extremes are -1 and 1 (offset 0.9677083).

use ndarray::Array2;

use super::config::Target;
use super::transformer::BaseWeights;
use crate::error::{Error, Result};

pub const CODEBOOK: [f64; 16] = [
    -1.0,
    -0.69619289060372,
    -0.5250730386952291,
    -0.3949174906993099,
    -0.2844413576181077,
    -0.18477343519288886,
    -0.09104999214427931,
    0.0,
    0.07958032909416937,
    0.16093017270493618,
    0.2461122939299359,
    0.33791519352165506,
    0.44070980241319013,
    0.562616970075237,
    0.7229567278928821,
    1.0,
];

pub const ZERO_CODE: u8 = 7;
pub const BLOCK_SIZE: usize = 64;
pub const SCALE_GROUP: usize = 256;

/// Largest gap between adjacent codebook levels.
pub fn max_codebook_gap() -> f64 {
    CODEBOOK.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantBlock {
    pub codes: Vec<u8>,
    pub absmax: f64,
}

fn nearest_code(x: f64) -> u8 {
    // first level whose upper midpoint is >= x; ties fall to the lower level
    let mut code = 15;
    for i in 0..15 {
        if x <= 0.5 * (CODEBOOK[i] + CODEBOOK[i + 1]) {
            code = i;
            break;
        }
    }
    code as u8
}

/// Quantizes up to [`BLOCK_SIZE`] weights against their absolute maximum.
pub fn nf4_quantize(weights: &[f64]) -> QuantBlock {
    let absmax = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let codes = if absmax == 0.0 {
        vec![ZERO_CODE; weights.len()]
    } else {
        weights.iter().map(|w| nearest_code(w / absmax)).collect()
    };
    QuantBlock { codes, absmax }
}

pub fn nf4_dequantize(block: &QuantBlock) -> Vec<f64> {
    dequantize_with_scale(&block.codes, block.absmax)
}

fn dequantize_with_scale(codes: &[u8], scale: f64) -> Vec<f64> {
    codes.iter().map(|&c| CODEBOOK[c as usize] * scale).collect()
}

/// 8-bit linear codes of a scale stream, one `(min, max)` pair per group.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubleQuant {
    pub group_size: usize,
    pub codes: Vec<u8>,
    pub meta: Vec<(f64, f64)>,
}

pub fn double_quantize(scales: &[f64], group_size: usize) -> DoubleQuant {
    let group_size = group_size.max(1);
    let mut codes = Vec::with_capacity(scales.len());
    let mut meta = Vec::new();
    for group in scales.chunks(group_size) {
        let lo = group.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = group.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        codes.extend(group.iter().map(|&s| {
            if range == 0.0 {
                0
            } else {
                ((s - lo) / range * 255.0).round().clamp(0.0, 255.0) as u8
            }
        }));
        meta.push((lo, hi));
    }
    DoubleQuant {
        group_size,
        codes,
        meta,
    }
}

pub fn double_dequantize(dq: &DoubleQuant) -> Vec<f64> {
    dq.codes
        .chunks(dq.group_size)
        .zip(&dq.meta)
        .flat_map(|(group, &(lo, hi))| {
            let range = hi - lo;
            group.iter().map(move |&c| {
                if c == 255 {
                    hi
                } else {
                    lo + range * f64::from(c) / 255.0
                }
            })
        })
        .collect()
}

/// Two codes per byte, low nibble first.
pub fn pack_codes(codes: &[u8]) -> Vec<u8> {
    codes
        .chunks(2)
        .map(|p| (p[0] & 0x0f) | (p.get(1).copied().unwrap_or(0) << 4))
        .collect()
}

pub fn unpack_codes(packed: &[u8], n: usize) -> Result<Vec<u8>> {
    if packed.len() != n.div_ceil(2) {
        return Err(Error::Checkpoint(format!(
            "{} packed bytes cannot hold exactly {n} codes",
            packed.len()
        )));
    }
    Ok(packed.iter().flat_map(|b| [b & 0x0f, b >> 4]).take(n).collect())
}

/// Bytes for `n_weights` at 4 bits each, one 8-bit scale code per block and
/// two `f64` meta values per scale group.
pub fn storage_bytes(n_weights: usize, block_size: usize, group_size: usize) -> usize {
    let n_blocks = n_weights.div_ceil(block_size);
    n_weights.div_ceil(2) + n_blocks + n_blocks.div_ceil(group_size) * 16
}

/// A row-major matrix stored as packed NF4 codes with double-quantized scales.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMatrix {
    pub rows: usize,
    pub cols: usize,
    pub packed: Vec<u8>,
    pub scales: DoubleQuant,
}

impl QuantizedMatrix {
    pub fn quantize(m: &Array2<f64>) -> Self {
        let flat: Vec<f64> = m.iter().copied().collect();
        let blocks: Vec<QuantBlock> = flat.chunks(BLOCK_SIZE).map(nf4_quantize).collect();
        let codes: Vec<u8> = blocks.iter().flat_map(|b| b.codes.iter().copied()).collect();
        let absmax: Vec<f64> = blocks.iter().map(|b| b.absmax).collect();
        QuantizedMatrix {
            rows: m.nrows(),
            cols: m.ncols(),
            packed: pack_codes(&codes),
            scales: double_quantize(&absmax, SCALE_GROUP),
        }
    }

    pub fn dequantize(&self) -> Result<Array2<f64>> {
        let n = self.rows * self.cols;
        let codes = unpack_codes(&self.packed, n)?;
        let scales = double_dequantize(&self.scales);
        if scales.len() != n.div_ceil(BLOCK_SIZE) {
            return Err(Error::Checkpoint("scale count does not match block count".into()));
        }
        let values: Vec<f64> = codes
            .chunks(BLOCK_SIZE)
            .zip(&scales)
            .flat_map(|(c, &s)| dequantize_with_scale(c, s))
            .collect();
        Array2::from_shape_vec((self.rows, self.cols), values).map_err(|e| Error::Shape(e.to_string()))
    }

    pub fn storage_bytes(&self) -> usize {
        self.packed.len() + self.scales.codes.len() + self.scales.meta.len() * 16
    }
}

/// Base weights with every block projection quantized. Embeddings, norms and
/// the unembedding stay in full precision.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedBase {
    pub full: BaseWeights,
    pub projections: Vec<Vec<(Target, QuantizedMatrix)>>,
}

impl QuantizedBase {
    pub fn quantize(base: &BaseWeights) -> Self {
        let mut full = base.clone();
        let projections = full
            .blocks
            .iter_mut()
            .map(|b| {
                Target::ALL
                    .iter()
                    .map(|&t| {
                        let q = QuantizedMatrix::quantize(b.weight(t));
                        b.weight_mut(t).fill(0.0);
                        (t, q)
                    })
                    .collect()
            })
            .collect();
        QuantizedBase { full, projections }
    }

    /// Full-precision weights for the forward pass.
    pub fn dequantize(&self) -> Result<BaseWeights> {
        let mut out = self.full.clone();
        for (b, mats) in out.blocks.iter_mut().zip(&self.projections) {
            for (t, q) in mats {
                *b.weight_mut(*t) = q.dequantize()?;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn codebook_shape() {
        assert_eq!(CODEBOOK.len(), 16);
        assert!(CODEBOOK.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(CODEBOOK[ZERO_CODE as usize], 0.0);
        assert_eq!((CODEBOOK[0], CODEBOOK[15]), (-1.0, 1.0));
    }

    #[test]
    fn zero_block() {
        let q = nf4_quantize(&[0.0; 64]);
        assert_eq!(q.absmax, 0.0);
        assert!(q.codes.iter().all(|&c| c == ZERO_CODE));
        assert!(nf4_dequantize(&q).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn codebook_values_are_fixed_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let absmax = rng.gen_range(0.01..10.0);
            let mut block: Vec<f64> = (0..64).map(|_| CODEBOOK[rng.gen_range(0..16)] * absmax).collect();
            block[0] = absmax;
            let q = nf4_quantize(&block);
            assert_eq!(nf4_dequantize(&q), block);
        }
    }

    #[test]
    fn random_blocks_respect_gap_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let half_gap = max_codebook_gap() / 2.0;
        for _ in 0..1000 {
            let block: Vec<f64> = (0..64).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let q = nf4_quantize(&block);
            for (w, d) in block.iter().zip(nf4_dequantize(&q)) {
                assert!((w - d).abs() <= q.absmax * half_gap + 1e-15);
            }
        }
    }

    #[test]
    fn double_quant_bounds() {
        let dq = double_quantize(&[0.7; 300], SCALE_GROUP);
        assert_eq!(double_dequantize(&dq), vec![0.7; 300]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let scales: Vec<f64> = (0..256).map(|_| rng.gen_range(0.0..4.0)).collect();
        let dq = double_quantize(&scales, 256);
        let (lo, hi) = dq.meta[0];
        for (s, r) in scales.iter().zip(double_dequantize(&dq)) {
            assert!((s - r).abs() <= (hi - lo) / 128.0);
        }
    }

    #[test]
    fn packing_round_trip() {
        let codes: Vec<u8> = (0..33).map(|i| (i * 7 % 16) as u8).collect();
        let packed = pack_codes(&codes);
        assert_eq!(packed.len(), 17);
        assert_eq!(packed[0], codes[0] | (codes[1] << 4));
        assert_eq!(unpack_codes(&packed, 33).unwrap(), codes);
        assert!(unpack_codes(&packed, 40).is_err());
    }

    #[test]
    fn storage_matches_formula() {
        let m = Array2::from_shape_fn((64, 160), |(i, j)| ((i * 31 + j) % 17) as f64 - 8.0);
        let q = QuantizedMatrix::quantize(&m);
        assert_eq!(q.storage_bytes(), storage_bytes(64 * 160, BLOCK_SIZE, SCALE_GROUP));
        // 4 bits per weight, 1 byte per 64 weights, 16 bytes per 256 blocks
        assert_eq!(storage_bytes(64 * 160, 64, 256), 5120 + 160 + 16);
        let back = q.dequantize().unwrap();
        assert_eq!(back.dim(), m.dim());
    }
}
