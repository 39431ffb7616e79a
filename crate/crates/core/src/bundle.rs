//! Adapter and model bundle files.
//!
//! Both share one container layout:
//!
//! ```text
//! offset  size  field
//! 0       4     magic: "VZAB" (adapter) or "VZMB" (model)
//! 4       4     manifest length M, u32 little-endian
//! 8       M     manifest, UTF-8 JSON
//! 8+M     ..    payload, little-endian binary
//! ```
//!
//! The manifest records the SHA-256 of the payload. See `docs/FORMATS.md`
//! for the payload layouts.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adapter_math::{
    build_nf4_codebook, dequantize, quantize_blockwise, LoraAdapter, MathError, QuantizedFactors,
    QuantizedTensor, TensorHeader,
};
use crate::model_store::{BaseModel, ModelError};

pub const ADAPTER_MAGIC: &[u8; 4] = b"VZAB";
pub const MODEL_MAGIC: &[u8; 4] = b"VZMB";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("corrupt bundle: {0}")]
    Corrupt(String),
    #[error("payload hash mismatch: manifest says {expected}, payload hashes to {actual}")]
    HashMismatch { expected: String, actual: String },
    #[error(transparent)]
    Math(#[from] MathError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterManifest {
    pub format_version: u32,
    pub adapter_id: String,
    pub base_model_id: String,
    pub target_layer: usize,
    pub rank: usize,
    pub alpha: f64,
    pub d_in: usize,
    pub d_out: usize,
    pub codebook_bits: u8,
    pub block_size: usize,
    /// Present when block scales are double-quantized.
    pub chunk_size: Option<usize>,
    pub payload_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format_version: u32,
    pub model_id: String,
    pub seed: u64,
    pub layer_dims: Vec<usize>,
    pub payload_sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantSettings {
    pub codebook_bits: u8,
    pub block_size: usize,
    pub chunk_size: Option<usize>,
}

impl Default for QuantSettings {
    fn default() -> Self {
        Self {
            codebook_bits: 4,
            block_size: crate::adapter_math::DEFAULT_BLOCK_SIZE,
            chunk_size: Some(crate::adapter_math::DEFAULT_CHUNK_SIZE),
        }
    }
}

/// A decoded adapter bundle. `adapter.a` / `adapter.b` hold the dequantized
/// factors; the packed forms are kept in `adapter.quantized`.
#[derive(Debug, Clone)]
pub struct AdapterBundle {
    pub manifest: AdapterManifest,
    pub adapter: LoraAdapter,
    pub payload_sha256: String,
}

fn write_container(magic: &[u8; 4], manifest: &[u8], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + manifest.len() + payload.len());
    out.extend_from_slice(magic);
    out.extend((manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(manifest);
    out.extend_from_slice(payload);
    out
}

fn read_container<'a>(magic: &[u8; 4], bytes: &'a [u8]) -> Result<(&'a [u8], &'a [u8]), BundleError> {
    if bytes.len() < 8 || &bytes[..4] != magic {
        return Err(BundleError::Corrupt(format!(
            "missing {} header",
            String::from_utf8_lossy(magic)
        )));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let end = 8usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| BundleError::Corrupt("manifest length exceeds file".into()))?;
    Ok((&bytes[8..end], &bytes[end..]))
}

fn check_hash(expected: &str, payload: &[u8]) -> Result<String, BundleError> {
    let actual = sha256_hex(payload);
    if actual != expected {
        return Err(BundleError::HashMismatch {
            expected: expected.to_string(),
            actual,
        });
    }
    Ok(actual)
}

pub fn encode_adapter_bundle(
    adapter: &LoraAdapter,
    base_model_id: &str,
    settings: QuantSettings,
) -> Result<Vec<u8>, BundleError> {
    adapter.validate()?;
    let codebook = build_nf4_codebook(settings.codebook_bits)?;
    let qa = quantize_blockwise(&adapter.a, settings.block_size, &codebook, settings.chunk_size)?;
    let qb = quantize_blockwise(&adapter.b, settings.block_size, &codebook, settings.chunk_size)?;
    let mut payload = qa.payload_bytes();
    payload.extend(qb.payload_bytes());
    let manifest = AdapterManifest {
        format_version: FORMAT_VERSION,
        adapter_id: adapter.adapter_id.clone(),
        base_model_id: base_model_id.to_string(),
        target_layer: adapter.target_layer,
        rank: adapter.rank,
        alpha: adapter.alpha,
        d_in: adapter.d_in(),
        d_out: adapter.d_out(),
        codebook_bits: settings.codebook_bits,
        block_size: settings.block_size,
        chunk_size: settings.chunk_size,
        payload_sha256: sha256_hex(&payload),
    };
    let manifest = serde_json::to_vec(&manifest).expect("manifest serializes");
    Ok(write_container(ADAPTER_MAGIC, &manifest, &payload))
}

pub fn decode_adapter_bundle(bytes: &[u8]) -> Result<AdapterBundle, BundleError> {
    let (manifest, payload) = read_container(ADAPTER_MAGIC, bytes)?;
    let manifest: AdapterManifest = serde_json::from_slice(manifest)
        .map_err(|e| BundleError::Corrupt(format!("manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(BundleError::Corrupt(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    let payload_sha256 = check_hash(&manifest.payload_sha256, payload)?;
    let header = |rows, cols| TensorHeader {
        rows,
        cols,
        block_size: manifest.block_size,
        codebook_bits: manifest.codebook_bits,
        chunk_size: manifest.chunk_size,
    };
    let (qa, used) = QuantizedTensor::from_payload(&header(manifest.rank, manifest.d_in), payload)?;
    let (qb, used_b) =
        QuantizedTensor::from_payload(&header(manifest.d_out, manifest.rank), &payload[used..])?;
    if used + used_b != payload.len() {
        return Err(BundleError::Corrupt("trailing bytes after payload".into()));
    }
    let codebook = build_nf4_codebook(manifest.codebook_bits)?;
    let mut adapter = LoraAdapter::new(
        manifest.adapter_id.clone(),
        manifest.target_layer,
        manifest.alpha,
        dequantize(&qa, &codebook)?,
        dequantize(&qb, &codebook)?,
    )?;
    adapter.quantized = Some(QuantizedFactors { a: qa, b: qb });
    Ok(AdapterBundle {
        manifest,
        adapter,
        payload_sha256,
    })
}

pub fn encode_model_bundle(model: &BaseModel) -> Vec<u8> {
    let payload = model.payload_bytes();
    let manifest = ModelManifest {
        format_version: FORMAT_VERSION,
        model_id: model.model_id.clone(),
        seed: model.seed,
        layer_dims: model.layer_dims.clone(),
        payload_sha256: sha256_hex(&payload),
    };
    let manifest = serde_json::to_vec(&manifest).expect("manifest serializes");
    write_container(MODEL_MAGIC, &manifest, &payload)
}

pub fn decode_model_bundle(bytes: &[u8]) -> Result<BaseModel, BundleError> {
    let (manifest, payload) = read_container(MODEL_MAGIC, bytes)?;
    let manifest: ModelManifest = serde_json::from_slice(manifest)
        .map_err(|e| BundleError::Corrupt(format!("manifest: {e}")))?;
    check_hash(&manifest.payload_sha256, payload)?;
    Ok(BaseModel::from_payload(
        manifest.model_id,
        manifest.seed,
        manifest.layer_dims,
        payload,
    )?)
}
