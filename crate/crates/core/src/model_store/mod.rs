//! Deterministic toy base models and the layered forward pass.

mod rng;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter_math::{apply_stack, LoraAdapter, MathError, Matrix};

pub use rng::ModelRng;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid layer dims: {0}")]
    InvalidDims(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error(transparent)]
    Math(#[from] MathError),
}

/// A tanh MLP whose weights are a pure function of `(seed, layer_dims)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseModel {
    pub model_id: String,
    pub seed: u64,
    pub layer_dims: Vec<usize>,
    /// `layers[l]` has shape `(dims[l+1], dims[l])`.
    pub layers: Vec<Matrix>,
}

/// One inference call: each input vector is one metered unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRequest {
    pub model_id: String,
    pub adapter_ids: Vec<String>,
    pub inputs: Vec<Vec<f64>>,
}

impl InferenceRequest {
    pub fn units(&self) -> u64 {
        self.inputs.len() as u64
    }
}

pub fn default_model_id(seed: u64, layer_dims: &[usize]) -> String {
    let dims: Vec<String> = layer_dims.iter().map(|d| d.to_string()).collect();
    format!("toy-s{seed}-{}", dims.join("x"))
}

/// Weights are unit normals scaled by `1/sqrt(d_in)`, drawn layer by layer
/// in row-major order from one [`ModelRng`] stream.
pub fn generate_base_model(seed: u64, layer_dims: &[usize]) -> Result<BaseModel, ModelError> {
    if layer_dims.len() < 2 {
        return Err(ModelError::InvalidDims(format!(
            "need at least 2 dims, got {}",
            layer_dims.len()
        )));
    }
    if layer_dims.contains(&0) {
        return Err(ModelError::InvalidDims("every dim must be at least 1".into()));
    }
    let mut rng = ModelRng::new(seed);
    let layers = layer_dims
        .windows(2)
        .map(|w| {
            let (d_in, d_out) = (w[0], w[1]);
            let gain = 1.0 / (d_in as f64).sqrt();
            Matrix::from_fn(d_out, d_in, |_, _| rng.normal() * gain)
        })
        .collect();
    Ok(BaseModel {
        model_id: default_model_id(seed, layer_dims),
        seed,
        layer_dims: layer_dims.to_vec(),
        layers,
    })
}

impl BaseModel {
    pub fn with_id(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("at least two dims")
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Checks that `adapter` fits one of this model's layers.
    pub fn check_adapter(&self, adapter: &LoraAdapter) -> Result<(), ModelError> {
        let layer = self.layers.get(adapter.target_layer).ok_or_else(|| {
            ModelError::InvalidShape(format!(
                "adapter {} targets layer {}, model has {}",
                adapter.adapter_id,
                adapter.target_layer,
                self.layers.len()
            ))
        })?;
        if (adapter.d_out(), adapter.d_in()) != layer.shape() {
            return Err(ModelError::InvalidShape(format!(
                "adapter {} is {}x{}, layer {} is {}x{}",
                adapter.adapter_id,
                adapter.d_out(),
                adapter.d_in(),
                adapter.target_layer,
                layer.rows(),
                layer.cols()
            )));
        }
        Ok(())
    }

    /// Little-endian f64 weights, layer-major then row-major.
    pub fn payload_bytes(&self) -> Vec<u8> {
        self.layers
            .iter()
            .flat_map(|l| l.as_slice().iter().flat_map(|v| v.to_le_bytes()))
            .collect()
    }

    pub fn from_payload(
        model_id: String,
        seed: u64,
        layer_dims: Vec<usize>,
        payload: &[u8],
    ) -> Result<Self, ModelError> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(ModelError::InvalidDims(format!("{layer_dims:?}")));
        }
        let expected: usize = layer_dims.windows(2).map(|w| w[0] * w[1]).sum::<usize>() * 8;
        if payload.len() != expected {
            return Err(ModelError::InvalidShape(format!(
                "payload is {} bytes, dims need {expected}",
                payload.len()
            )));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let layers = layer_dims
            .windows(2)
            .map(|w| Matrix::new(w[1], w[0], values.by_ref().take(w[0] * w[1]).collect()))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            model_id,
            seed,
            layer_dims,
            layers,
        })
    }
}

/// Activations recorded during a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `inputs[l]` is the vector fed into layer `l`.
    pub inputs: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

fn group_by_layer<'a>(
    model: &BaseModel,
    adapters: &[&'a LoraAdapter],
) -> Result<Vec<Vec<&'a LoraAdapter>>, ModelError> {
    let mut stacks = vec![Vec::new(); model.layer_count()];
    for adapter in adapters {
        model.check_adapter(adapter)?;
        stacks[adapter.target_layer].push(*adapter);
    }
    Ok(stacks)
}

pub fn forward_trace(
    model: &BaseModel,
    adapters: &[&LoraAdapter],
    x: &[f64],
) -> Result<ForwardTrace, ModelError> {
    if x.len() != model.input_dim() {
        return Err(ModelError::InvalidShape(format!(
            "input has length {}, model expects {}",
            x.len(),
            model.input_dim()
        )));
    }
    let stacks = group_by_layer(model, adapters)?;
    let last = model.layer_count() - 1;
    let mut inputs = Vec::with_capacity(model.layer_count());
    let mut h = x.to_vec();
    for (l, (weights, stack)) in model.layers.iter().zip(&stacks).enumerate() {
        let z = apply_stack(weights, stack, &h)?;
        inputs.push(std::mem::replace(
            &mut h,
            if l == last {
                z
            } else {
                z.into_iter().map(f64::tanh).collect()
            },
        ));
    }
    Ok(ForwardTrace { inputs, output: h })
}

/// Runs `x` through every layer; adapters are routed to their
/// `target_layer` and applied as an additive stack there. Inner layers use
/// tanh, the last layer is linear.
pub fn forward(
    model: &BaseModel,
    adapters: &[&LoraAdapter],
    x: &[f64],
) -> Result<Vec<f64>, ModelError> {
    Ok(forward_trace(model, adapters, x)?.output)
}
