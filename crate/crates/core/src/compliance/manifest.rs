use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::ComplianceError;
use crate::canonical::{Digest, Encoder};

pub const DEFAULT_ALLOWED_LICENSES: [&str; 5] =
    ["CC0-1.0", "CC-BY-4.0", "Apache-2.0", "MIT", "public-domain"];

pub fn default_allowlist() -> BTreeSet<String> {
    DEFAULT_ALLOWED_LICENSES.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSource {
    pub uri: String,
    pub license_id: String,
    /// SHA-256 of the source content, lowercase hex.
    pub content_hash: String,
}

/// A provider's attestation of the data an adapter was trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LicenseManifest {
    pub sources: Vec<DataSource>,
    #[serde(default)]
    pub data_usage_disclosure: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub index: usize,
    pub license_id: String,
}

impl LicenseManifest {
    pub fn hash(&self) -> Digest {
        let mut enc = Encoder::new().u64(self.sources.len() as u64);
        for s in &self.sources {
            enc = enc.str(&s.uri).str(&s.license_id).str(&s.content_hash);
        }
        enc.str(&self.data_usage_disclosure).hash()
    }
}

/// `Ok(vec![])` when every source is allowlisted, otherwise the offending
/// sources in order. Structural problems are errors.
pub fn validate_manifest(
    manifest: &LicenseManifest,
    allowlist: &BTreeSet<String>,
) -> Result<Vec<Violation>, ComplianceError> {
    if manifest.sources.is_empty() {
        return Err(ComplianceError::InvalidManifest("no data sources listed".into()));
    }
    for (i, s) in manifest.sources.iter().enumerate() {
        if s.license_id.trim().is_empty() {
            return Err(ComplianceError::InvalidManifest(format!(
                "source {i} has an empty license id"
            )));
        }
        if Digest::from_hex(&s.content_hash).is_none() {
            return Err(ComplianceError::InvalidManifest(format!(
                "source {i} content hash is not a lowercase sha-256 hex digest"
            )));
        }
    }
    Ok(manifest
        .sources
        .iter()
        .enumerate()
        .filter(|(_, s)| !allowlist.contains(&s.license_id))
        .map(|(index, s)| Violation {
            index,
            license_id: s.license_id.clone(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn source(license: &str) -> DataSource {
        DataSource {
            uri: format!("https://example.org/{license}"),
            license_id: license.into(),
            content_hash: Digest::of(license.as_bytes()).to_hex(),
        }
    }

    fn manifest(licenses: &[&str]) -> LicenseManifest {
        LicenseManifest {
            sources: licenses.iter().map(|l| source(l)).collect(),
            data_usage_disclosure: "fine-tuning only".into(),
        }
    }

    #[test]
    fn all_cc0_passes() {
        let v = validate_manifest(&manifest(&["CC0-1.0", "CC0-1.0"]), &default_allowlist()).unwrap();
        assert!(v.is_empty());
    }

    #[test]
    fn proprietary_source_reported() {
        let v = validate_manifest(&manifest(&["MIT", "proprietary", "CC-BY-4.0"]), &default_allowlist())
            .unwrap();
        assert_eq!(
            v,
            vec![Violation {
                index: 1,
                license_id: "proprietary".into()
            }]
        );
    }

    #[test]
    fn structural_errors() {
        let allow = default_allowlist();
        assert!(matches!(
            validate_manifest(&manifest(&[]), &allow),
            Err(ComplianceError::InvalidManifest(_))
        ));
        let mut m = manifest(&["MIT"]);
        m.sources[0].license_id = " ".into();
        assert!(validate_manifest(&m, &allow).is_err());
        let mut m = manifest(&["MIT"]);
        m.sources[0].content_hash = "abc".into();
        assert!(validate_manifest(&m, &allow).is_err());
    }

    #[test]
    fn custom_allowlist() {
        let allow: BTreeSet<String> = ["internal-ok".to_string()].into();
        assert!(validate_manifest(&manifest(&["internal-ok"]), &allow).unwrap().is_empty());
        assert_eq!(validate_manifest(&manifest(&["MIT"]), &allow).unwrap().len(), 1);
    }

    #[test]
    fn hash_depends_on_every_field() {
        let base = manifest(&["MIT", "CC0-1.0"]);
        let mut other = base.clone();
        other.data_usage_disclosure.push('.');
        assert_ne!(base.hash(), other.hash());
        let mut other = base.clone();
        other.sources.swap(0, 1);
        assert_ne!(base.hash(), other.hash());
        assert_eq!(base.hash(), base.clone().hash());
    }
}
