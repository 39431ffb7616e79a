//! Low-rank adapters and additive adapter stacks.

use serde::{Deserialize, Serialize};

use super::quant::QuantizedTensor;
use super::{Matrix, MathError};

/// Quantized storage forms of an adapter's factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedFactors {
    pub a: QuantizedTensor,
    pub b: QuantizedTensor,
}

/// A rank-r update `(alpha / r) · B · A` for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    pub adapter_id: String,
    pub target_layer: usize,
    pub rank: usize,
    pub alpha: f64,
    /// r × d_in
    pub a: Matrix,
    /// d_out × r
    pub b: Matrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantized: Option<QuantizedFactors>,
}

impl LoraAdapter {
    pub fn new(
        adapter_id: impl Into<String>,
        target_layer: usize,
        alpha: f64,
        a: Matrix,
        b: Matrix,
    ) -> Result<Self, MathError> {
        let adapter = Self {
            adapter_id: adapter_id.into(),
            target_layer,
            rank: a.rows(),
            alpha,
            a,
            b,
            quantized: None,
        };
        adapter.validate()?;
        Ok(adapter)
    }

    pub fn validate(&self) -> Result<(), MathError> {
        let invalid = |msg: String| Err(MathError::InvalidAdapter(msg));
        if self.rank == 0 {
            return invalid("rank must be at least 1".into());
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return invalid(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.a.rows() != self.rank || self.b.cols() != self.rank {
            return invalid(format!(
                "rank {} does not match A {}x{} / B {}x{}",
                self.rank,
                self.a.rows(),
                self.a.cols(),
                self.b.rows(),
                self.b.cols()
            ));
        }
        if self.a.cols() == 0 || self.b.rows() == 0 {
            return invalid("adapter has an empty dimension".into());
        }
        Ok(())
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn d_in(&self) -> usize {
        self.a.cols()
    }

    pub fn d_out(&self) -> usize {
        self.b.rows()
    }
}

/// Materializes `(alpha / r) · B · A`.
pub fn lora_delta(adapter: &LoraAdapter) -> Result<Matrix, MathError> {
    adapter.validate()?;
    let mut delta = adapter.b.matmul(&adapter.a)?;
    delta.scale(adapter.scaling());
    Ok(delta)
}

/// Adapters sorted by id. Duplicate ids are rejected so the order is total.
pub fn canonical_order<'a>(adapters: &[&'a LoraAdapter]) -> Result<Vec<&'a LoraAdapter>, MathError> {
    let mut sorted = adapters.to_vec();
    sorted.sort_by(|x, y| x.adapter_id.cmp(&y.adapter_id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].adapter_id == w[1].adapter_id) {
        return Err(MathError::InvalidStack(format!(
            "adapter {} appears twice",
            w[0].adapter_id
        )));
    }
    Ok(sorted)
}

fn check_stack_shapes(base: &Matrix, stack: &[&LoraAdapter]) -> Result<(), MathError> {
    for adapter in stack {
        adapter
            .validate()
            .map_err(|e| MathError::InvalidStack(e.to_string()))?;
        if (adapter.d_out(), adapter.d_in()) != base.shape() {
            return Err(MathError::InvalidStack(format!(
                "adapter {} is {}x{}, layer is {}x{}",
                adapter.adapter_id,
                adapter.d_out(),
                adapter.d_in(),
                base.rows(),
                base.cols()
            )));
        }
    }
    Ok(())
}

/// `base·x + Σ (αᵢ/rᵢ)·Bᵢ·(Aᵢ·x)` without forming merged weights. Adapters
/// are summed left to right in adapter-id order, so the result does not
/// depend on the order they were passed in.
pub fn apply_stack(base: &Matrix, adapters: &[&LoraAdapter], x: &[f64]) -> Result<Vec<f64>, MathError> {
    let stack = canonical_order(adapters)?;
    check_stack_shapes(base, &stack)?;
    let mut y = base.matvec(x)?;
    for adapter in stack {
        let down = adapter.a.matvec(x)?;
        let up = adapter.b.matvec(&down)?;
        let s = adapter.scaling();
        for (yi, ui) in y.iter_mut().zip(up) {
            *yi += s * ui;
        }
    }
    Ok(y)
}

/// `base + Σ lora_delta(aᵢ)` in canonical order.
pub fn merge_adapters(base: &Matrix, adapters: &[&LoraAdapter]) -> Result<Matrix, MathError> {
    let stack = canonical_order(adapters)?;
    check_stack_shapes(base, &stack)?;
    let mut merged = base.clone();
    for adapter in stack {
        merged.add_scaled(&lora_delta(adapter)?, 1.0)?;
    }
    Ok(merged)
}
