//! Tiny decoder-only transformer with LoRA adapters, NF4 quantization of the
//! frozen base and logit-lens capture.

pub mod checkpoint;
mod config;
mod lora;
pub mod nf4;
mod transformer;

pub use config::{ModelConfig, Target};
pub use lora::{lora_apply, Adapters, LoraPair};
pub use nf4::{nf4_dequantize, nf4_quantize, QuantBlock, QuantizedBase};
pub use transformer::{
    backward, block_traces, forward, forward_train, hidden_states, softmax, unembed_rows, unembed_rows_backward,
    BaseWeights, BlockTrace, BlockWeights, ForwardCache, ForwardOutput,
};
