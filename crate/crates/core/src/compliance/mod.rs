//! Publication gate: license-manifest validation and the hash-chained
//! provenance log.

mod manifest;
mod provenance;

use thiserror::Error;

pub use manifest::{default_allowlist, validate_manifest, DataSource, LicenseManifest, Violation};
pub(crate) use provenance::parse_canonical_lines;
pub use provenance::{ProvenanceLog, ProvenanceRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComplianceError {
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("provenance log failed verification; refusing to append")]
    RefuseAppend,
    #[error("malformed provenance log at line {line}: {reason}")]
    MalformedLog { line: usize, reason: String },
}
