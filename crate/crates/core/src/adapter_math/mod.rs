//! Numerical core: NormalFloat codebooks, blockwise and double
//! quantization, low-rank adapter algebra, and adapter fitting.

mod codebook;
mod fit;
mod lora;
mod matrix;
mod quant;

use thiserror::Error;

pub use codebook::{build_nf4_codebook, normal_float_levels, Codebook, MAX_BITS, MIN_BITS, NF4_TABLE};
pub use fit::{
    fit_adapter, init_adapter, mse_gradient, mse_loss, AdapterGradient, FitConfig, FitError,
    FitResult, Sample, INIT_SCALE,
};
pub use lora::{apply_stack, canonical_order, lora_delta, merge_adapters, LoraAdapter, QuantizedFactors};
pub use matrix::Matrix;
pub use quant::{
    dequantize, dequantize_scales, double_quantize_scales, memory_footprint_bits_per_param,
    quantize_blockwise, DQScales, QuantizedTensor, Scales, TensorHeader, DEFAULT_BLOCK_SIZE,
    DEFAULT_CHUNK_SIZE,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MathError {
    #[error("invalid bit width {0}: must be between 2 and 8")]
    InvalidBitWidth(u8),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("magnitude {0} exceeds the 32-bit scale range")]
    OutOfRange(f64),
    #[error("corrupt tensor: {0}")]
    CorruptTensor(String),
    #[error("invalid adapter: {0}")]
    InvalidAdapter(String),
    #[error("invalid stack: {0}")]
    InvalidStack(String),
}
