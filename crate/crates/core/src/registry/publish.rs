use std::collections::{BTreeMap, BTreeSet};

use super::{AdapterListing, ListingDraft, ListingStatus, Registry, RegistryError};
use crate::adapter_math::LoraAdapter;
use crate::bundle::{decode_adapter_bundle, BundleError};
use crate::canonical::Digest;
use crate::compliance::{validate_manifest, ComplianceError, LicenseManifest, ProvenanceLog};
use crate::model_store::BaseModel;

/// Everything needed to create a listing, checked but not yet applied.
#[derive(Debug, Clone)]
pub struct ValidatedPublication {
    pub provider_id: String,
    pub adapter: LoraAdapter,
    pub base_model_id: String,
    pub bundle_sha256: String,
    pub manifest_hash: Digest,
    pub draft: ListingDraft,
}

/// Runs every publication check without touching any state: manifest
/// licenses, bundle integrity, base-model shape compatibility, listing
/// terms and adapter-id uniqueness.
pub fn validate_publication(
    registry: &Registry,
    models: &BTreeMap<String, BaseModel>,
    allowlist: &BTreeSet<String>,
    provider_id: &str,
    bundle: &[u8],
    draft: &ListingDraft,
    manifest: &LicenseManifest,
) -> Result<ValidatedPublication, RegistryError> {
    let violations = validate_manifest(manifest, allowlist).map_err(|e| match e {
        ComplianceError::InvalidManifest(msg) => RegistryError::InvalidManifest(msg),
        other => RegistryError::Compliance(other),
    })?;
    if !violations.is_empty() {
        return Err(RegistryError::PublicationRefused(violations));
    }
    let decoded = decode_adapter_bundle(bundle).map_err(|e| match e {
        BundleError::HashMismatch { .. } | BundleError::Corrupt(_) => {
            RegistryError::CorruptBundle(e.to_string())
        }
        other => RegistryError::CorruptBundle(other.to_string()),
    })?;
    let base_model_id = decoded.manifest.base_model_id.clone();
    let model = models
        .get(&base_model_id)
        .ok_or_else(|| RegistryError::NotFound(format!("base model {base_model_id}")))?;
    model
        .check_adapter(&decoded.adapter)
        .map_err(|e| RegistryError::InvalidShape(e.to_string()))?;
    draft.validate()?;
    let adapter_id = &decoded.adapter.adapter_id;
    if adapter_id.is_empty() {
        return Err(RegistryError::InvalidListing("empty adapter id".into()));
    }
    if registry.adapter(adapter_id).is_some() {
        return Err(RegistryError::Conflict(format!(
            "adapter {adapter_id} is already published"
        )));
    }
    Ok(ValidatedPublication {
        provider_id: provider_id.to_string(),
        base_model_id,
        bundle_sha256: crate::bundle::sha256_hex(bundle),
        manifest_hash: manifest.hash(),
        draft: draft.clone(),
        adapter: decoded.adapter,
    })
}

impl Registry {
    /// Appends the provenance record and activates the listing.
    pub(crate) fn apply_publication(
        &mut self,
        publication: ValidatedPublication,
        provenance: &mut ProvenanceLog,
        timestamp: i64,
    ) -> Result<String, RegistryError> {
        let record = provenance.append(
            &publication.adapter.adapter_id,
            &publication.base_model_id,
            publication.manifest_hash,
            timestamp,
        )?;
        let listing = AdapterListing {
            listing_id: self.next_listing_id(),
            adapter_id: publication.adapter.adapter_id.clone(),
            provider_id: publication.provider_id,
            base_model_id: publication.base_model_id,
            category: publication.draft.category,
            terms: publication.draft.terms,
            manifest_hash: publication.manifest_hash,
            bundle_sha256: publication.bundle_sha256,
            provenance_seq: record.seq,
            provenance_hash: record.record_hash,
            status: ListingStatus::Active,
            published_at: timestamp,
        };
        let id = listing.listing_id.clone();
        self.insert(listing, publication.adapter);
        Ok(id)
    }
}

/// Validates and publishes in one step. A listing only becomes active after
/// its manifest passed and its provenance record was chained.
#[allow(clippy::too_many_arguments)]
pub fn publish_adapter(
    registry: &mut Registry,
    provenance: &mut ProvenanceLog,
    models: &BTreeMap<String, BaseModel>,
    allowlist: &BTreeSet<String>,
    provider_id: &str,
    bundle: &[u8],
    draft: &ListingDraft,
    manifest: &LicenseManifest,
    timestamp: i64,
) -> Result<String, RegistryError> {
    let publication =
        validate_publication(registry, models, allowlist, provider_id, bundle, draft, manifest)?;
    registry.apply_publication(publication, provenance, timestamp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compliance::{default_allowlist, Violation};
    use crate::fixtures::{bundle_for, clean_manifest, draft, manifest_with};
    use crate::model_store::generate_base_model;
    use crate::money::Money;
    use crate::registry::{ListingFilter, PricingMode, PricingTerms};

    struct World {
        registry: Registry,
        provenance: ProvenanceLog,
        models: BTreeMap<String, BaseModel>,
    }

    fn world() -> World {
        let model = generate_base_model(1, &[8, 16, 4]).unwrap().with_id("toy");
        World {
            registry: Registry::new(),
            provenance: ProvenanceLog::new(),
            models: BTreeMap::from([("toy".to_string(), model)]),
        }
    }

    fn publish(w: &mut World, id: &str, d: ListingDraft, m: &LicenseManifest) -> Result<String, RegistryError> {
        let bytes = bundle_for(&w.models["toy"], id, 1, 2, 3).unwrap();
        publish_adapter(
            &mut w.registry,
            &mut w.provenance,
            &w.models,
            &default_allowlist(),
            "prov",
            &bytes,
            &d,
            m,
            100,
        )
    }

    fn terms() -> PricingTerms {
        PricingTerms::metered(Money(1_000))
    }

    #[test]
    fn clean_publication_chains_provenance() {
        let mut w = world();
        let id = publish(&mut w, "a", draft("med", "en", 0.4, terms()), &clean_manifest()).unwrap();
        let listing = w.registry.listing(&id).unwrap();
        assert!(listing.is_active());
        assert_eq!(w.provenance.records().len(), 1);
        assert_eq!(listing.provenance_hash, w.provenance.head());
        assert_eq!(listing.manifest_hash, clean_manifest().hash());
    }

    #[test]
    fn disallowed_license_is_refused_with_offending_source() {
        let mut w = world();
        let m = manifest_with(&["Apache-2.0", "proprietary", "CC0-1.0"]);
        let err = publish(&mut w, "a", draft("med", "en", 0.4, terms()), &m).unwrap_err();
        let RegistryError::PublicationRefused(v) = err else { panic!("{err:?}") };
        assert_eq!(v, vec![Violation { index: 1, license_id: "proprietary".into() }]);
        assert_eq!(w.registry.listings().count(), 0);
        assert!(w.provenance.records().is_empty());
    }

    #[test]
    fn duplicate_adapter_conflicts() {
        let mut w = world();
        publish(&mut w, "a", draft("med", "en", 0.4, terms()), &clean_manifest()).unwrap();
        let err = publish(&mut w, "a", draft("med", "en", 0.4, terms()), &clean_manifest()).unwrap_err();
        assert!(matches!(err, RegistryError::Conflict(_)));
    }

    #[test]
    fn tampered_bundle_is_corrupt() {
        let mut w = world();
        let mut bytes = bundle_for(&w.models["toy"], "a", 1, 2, 3).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        let err = publish_adapter(
            &mut w.registry,
            &mut w.provenance,
            &w.models,
            &default_allowlist(),
            "prov",
            &bytes,
            &draft("med", "en", 0.4, terms()),
            &clean_manifest(),
            0,
        )
        .unwrap_err();
        assert!(matches!(err, RegistryError::CorruptBundle(_)));
    }

    #[test]
    fn search_orders_by_perf_then_id() {
        let mut w = world();
        publish(&mut w, "a", draft("med", "en", 0.5, terms()), &clean_manifest()).unwrap();
        publish(&mut w, "b", draft("med", "en", 0.9, terms()), &clean_manifest()).unwrap();
        publish(&mut w, "c", draft("med", "de", 0.5, PricingTerms::outright(Money(9))), &clean_manifest()).unwrap();
        publish(&mut w, "d", draft("law", "en", 0.99, terms()), &clean_manifest()).unwrap();
        let filter = ListingFilter {
            domain: Some("med".into()),
            ..Default::default()
        };
        let ids: Vec<&str> = w.registry.search_listings(&filter).iter().map(|l| l.adapter_id.as_str()).collect();
        assert_eq!(ids, ["b", "a", "c"]);
        let filter = ListingFilter {
            domain: Some("med".into()),
            min_perf: Some(0.5),
            mode: Some(PricingMode::Metered),
            language: Some("en".into()),
        };
        assert_eq!(w.registry.search_listings(&filter).len(), 2);
    }

    #[test]
    fn only_the_owner_reprices() {
        let mut w = world();
        let id = publish(&mut w, "a", draft("med", "en", 0.5, terms()), &clean_manifest()).unwrap();
        let new = PricingTerms::metered(Money(2_000));
        assert!(matches!(
            w.registry.update_price(&id, "someone", new, 1),
            Err(RegistryError::Forbidden(_))
        ));
        w.registry.update_price(&id, "prov", new, 1).unwrap();
        assert_eq!(w.registry.price_journal().len(), 1);
        w.registry.delist(&id, "prov").unwrap();
        assert!(matches!(w.registry.update_price(&id, "prov", new, 2), Err(RegistryError::Gone(_))));
    }
}
