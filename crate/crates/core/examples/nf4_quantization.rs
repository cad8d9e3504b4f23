//! Quantizes a randomly initialised base to 4-bit normal-float blocks and
//! reports the storage and reconstruction error.

use expltune::model::nf4::{max_codebook_gap, storage_bytes, BLOCK_SIZE, SCALE_GROUP};
use expltune::model::{nf4_dequantize, nf4_quantize, BaseWeights, ModelConfig, QuantizedBase};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> expltune::Result<()> {
    let w: Vec<f64> = (0..BLOCK_SIZE).map(|i| ((i as f64) * 0.37).sin() * 0.1).collect();
    let q = nf4_quantize(&w);
    let back = nf4_dequantize(&q);
    let worst = w.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let absmax = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    println!(
        "one block: max error {worst:.2e}, bound {:.2e}",
        absmax * max_codebook_gap() / 2.0
    );

    let cfg = ModelConfig::default();
    let base = BaseWeights::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
    let qb = QuantizedBase::quantize(&base);
    let restored = qb.dequantize()?;
    let n: usize = base.tensor_shapes().iter().map(|s| s.iter().product::<usize>()).sum();
    println!("base: {n} weights");
    println!("  f32 bytes {}", n * 4);
    println!(
        "  nf4 bytes {} (block {BLOCK_SIZE}, scale group {SCALE_GROUP})",
        storage_bytes(n, BLOCK_SIZE, SCALE_GROUP)
    );
    for t in cfg.lora_targets.iter().copied() {
        let (w, r) = (base.blocks[0].weight(t), restored.blocks[0].weight(t));
        let err = (w - r).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        println!("  block 0 {:<5} max error {err:.2e}", t.tag());
    }
    Ok(())
}
