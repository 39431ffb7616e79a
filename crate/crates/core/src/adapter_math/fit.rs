//! Fitting a single adapter by full-batch gradient descent on mean squared
//! error through the whole toy model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{LoraAdapter, MathError, Matrix};
use crate::model_store::{forward, forward_trace, BaseModel, ModelError, ModelRng};

/// Initial A entries are unit normals times this factor; B starts at zero.
pub const INIT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error("invalid fit config: {0}")]
    InvalidConfig(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("fit diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Math(#[from] MathError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

impl Sample {
    pub fn new(input: Vec<f64>, target: Vec<f64>) -> Self {
        Self { input, target }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub adapter: LoraAdapter,
    /// Loss at the start of each epoch, before that epoch's update.
    pub loss_trace: Vec<f64>,
    /// Loss of the returned adapter.
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGradient {
    pub a: Matrix,
    pub b: Matrix,
}

fn check_dataset(model: &BaseModel, dataset: &[Sample]) -> Result<(), FitError> {
    if dataset.is_empty() {
        return Err(FitError::InvalidDataset("dataset is empty".into()));
    }
    for (i, s) in dataset.iter().enumerate() {
        if s.input.len() != model.input_dim() || s.target.len() != model.output_dim() {
            return Err(FitError::InvalidDataset(format!(
                "sample {i} is {}->{}, model is {}->{}",
                s.input.len(),
                s.target.len(),
                model.input_dim(),
                model.output_dim()
            )));
        }
    }
    Ok(())
}

/// Mean over samples and output coordinates of the squared error.
pub fn mse_loss(model: &BaseModel, adapter: &LoraAdapter, dataset: &[Sample]) -> Result<f64, FitError> {
    check_dataset(model, dataset)?;
    let mut total = 0.0;
    for s in dataset {
        let out = forward(model, &[adapter], &s.input)?;
        total += out
            .iter()
            .zip(&s.target)
            .map(|(o, t)| (o - t) * (o - t))
            .sum::<f64>();
    }
    Ok(total / (dataset.len() * model.output_dim()) as f64)
}

/// Loss and its gradient with respect to A and B, by backpropagation from
/// the model output down to the adapted layer.
pub fn mse_gradient(
    model: &BaseModel,
    adapter: &LoraAdapter,
    dataset: &[Sample],
) -> Result<(f64, AdapterGradient), FitError> {
    check_dataset(model, dataset)?;
    model.check_adapter(adapter)?;
    let layer = adapter.target_layer;
    let last = model.layer_count() - 1;
    let norm = (dataset.len() * model.output_dim()) as f64;
    let scaling = adapter.scaling();

    let mut loss = 0.0;
    let mut grad_a = Matrix::zeros(adapter.a.rows(), adapter.a.cols());
    let mut grad_b = Matrix::zeros(adapter.b.rows(), adapter.b.cols());
    for s in dataset {
        let trace = forward_trace(model, &[adapter], &s.input)?;
        let residual: Vec<f64> = trace.output.iter().zip(&s.target).map(|(o, t)| o - t).collect();
        loss += residual.iter().map(|r| r * r).sum::<f64>();

        // dL/dz for the current layer, starting at the (linear) output.
        let mut g: Vec<f64> = residual.iter().map(|r| 2.0 * r / norm).collect();
        for l in (layer + 1..=last).rev() {
            let dh = model.layers[l].matvec_transposed(&g)?;
            let h = &trace.inputs[l];
            g = dh.iter().zip(h).map(|(d, hv)| d * (1.0 - hv * hv)).collect();
        }

        let h = &trace.inputs[layer];
        let down = adapter.a.matvec(h)?;
        let back = adapter.b.matvec_transposed(&g)?;
        let gb = grad_b.as_mut_slice();
        for (i, gi) in g.iter().enumerate() {
            for (k, dk) in down.iter().enumerate() {
                gb[i * adapter.rank + k] += scaling * gi * dk;
            }
        }
        let cols = adapter.d_in();
        let ga = grad_a.as_mut_slice();
        for (k, bk) in back.iter().enumerate() {
            for (j, hj) in h.iter().enumerate() {
                ga[k * cols + j] += scaling * bk * hj;
            }
        }
    }
    Ok((loss / norm, AdapterGradient { a: grad_a, b: grad_b }))
}

/// Zero-effect starting point: seeded small A, B = 0.
pub fn init_adapter(
    model: &BaseModel,
    layer: usize,
    rank: usize,
    alpha: f64,
    seed: u64,
) -> Result<LoraAdapter, FitError> {
    let weights = model.layers.get(layer).ok_or_else(|| {
        FitError::InvalidConfig(format!("model has no layer {layer}"))
    })?;
    let (d_out, d_in) = weights.shape();
    if rank == 0 || rank > d_in.min(d_out) {
        return Err(FitError::InvalidConfig(format!(
            "rank {rank} outside 1..={}",
            d_in.min(d_out)
        )));
    }
    let mut rng = ModelRng::new(seed);
    let a = Matrix::from_fn(rank, d_in, |_, _| rng.normal() * INIT_SCALE);
    let b = Matrix::zeros(d_out, rank);
    let id = format!("{}-l{layer}-r{rank}-s{seed}", model.model_id);
    Ok(LoraAdapter::new(id, layer, alpha, a, b)?)
}

pub fn fit_adapter(
    model: &BaseModel,
    layer: usize,
    dataset: &[Sample],
    rank: usize,
    alpha: f64,
    cfg: &FitConfig,
) -> Result<FitResult, FitError> {
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate > 0.0) {
        return Err(FitError::InvalidConfig(format!(
            "learning rate must be positive, got {}",
            cfg.learning_rate
        )));
    }
    if cfg.epochs == 0 {
        return Err(FitError::InvalidConfig("epochs must be at least 1".into()));
    }
    check_dataset(model, dataset)?;
    let mut adapter = init_adapter(model, layer, rank, alpha, cfg.seed)?;
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (loss, grad) = mse_gradient(model, &adapter, dataset)?;
        if !loss.is_finite() {
            return Err(FitError::Diverged { epoch, loss });
        }
        loss_trace.push(loss);
        adapter.a.add_scaled(&grad.a, -cfg.learning_rate)?;
        adapter.b.add_scaled(&grad.b, -cfg.learning_rate)?;
        let weights_ok = adapter.a.as_slice().iter().chain(adapter.b.as_slice()).all(|v| v.is_finite());
        if !weights_ok {
            return Err(FitError::Diverged { epoch, loss: f64::NAN });
        }
    }
    let final_loss = mse_loss(model, &adapter, dataset)?;
    if !final_loss.is_finite() {
        return Err(FitError::Diverged {
            epoch: cfg.epochs,
            loss: final_loss,
        });
    }
    Ok(FitResult {
        adapter,
        loss_trace,
        final_loss,
    })
}
