//! Ready-made adapters, manifests and drafts for demos, tests and benches.

use crate::adapter_math::{LoraAdapter, Matrix, MathError};
use crate::bundle::{encode_adapter_bundle, sha256_hex, BundleError, QuantSettings};
use crate::compliance::{DataSource, LicenseManifest};
use crate::model_store::{BaseModel, ModelError, ModelRng};
use crate::registry::{Category, ListingDraft, PricingTerms};

/// Seeded adapter with N(0, scale^2) entries in both factors.
pub fn random_adapter(
    adapter_id: impl Into<String>,
    layer_shape: (usize, usize),
    target_layer: usize,
    rank: usize,
    alpha: f64,
    seed: u64,
) -> Result<LoraAdapter, MathError> {
    let (d_out, d_in) = layer_shape;
    let mut rng = ModelRng::new(seed);
    let a = Matrix::from_fn(rank, d_in, |_, _| rng.normal() * 0.3);
    let b = Matrix::from_fn(d_out, rank, |_, _| rng.normal() * 0.3);
    LoraAdapter::new(adapter_id, target_layer, alpha, a, b)
}

/// Random adapter shaped for `model`'s layer `target_layer`.
pub fn adapter_for(
    model: &BaseModel,
    adapter_id: impl Into<String>,
    target_layer: usize,
    rank: usize,
    seed: u64,
) -> Result<LoraAdapter, ModelError> {
    let layer = model.layers.get(target_layer).ok_or_else(|| {
        ModelError::InvalidShape(format!("model has no layer {target_layer}"))
    })?;
    Ok(random_adapter(adapter_id, layer.shape(), target_layer, rank, rank as f64, seed)?)
}

/// Encoded bundle of a random adapter for `model` with default quantization.
pub fn bundle_for(
    model: &BaseModel,
    adapter_id: &str,
    target_layer: usize,
    rank: usize,
    seed: u64,
) -> Result<Vec<u8>, BundleError> {
    let adapter = adapter_for(model, adapter_id, target_layer, rank, seed)?;
    encode_adapter_bundle(&adapter, &model.model_id, QuantSettings::default())
}

fn source(uri: &str, license_id: &str) -> DataSource {
    DataSource {
        uri: uri.to_string(),
        license_id: license_id.to_string(),
        content_hash: sha256_hex(uri.as_bytes()),
    }
}

/// One source per license id.
pub fn manifest_with(license_ids: &[&str]) -> LicenseManifest {
    LicenseManifest {
        sources: license_ids
            .iter()
            .enumerate()
            .map(|(i, l)| source(&format!("https://data.example/set-{i}"), l))
            .collect(),
        data_usage_disclosure: "synthetic demo data".into(),
    }
}

pub fn clean_manifest() -> LicenseManifest {
    manifest_with(&["CC-BY-4.0", "MIT"])
}

pub fn draft(domain: &str, language: &str, perf_score: f64, terms: PricingTerms) -> ListingDraft {
    ListingDraft {
        category: Category {
            domain: domain.to_string(),
            language: language.to_string(),
            perf_score,
        },
        terms,
    }
}
