//! Event-sourced marketplace state. Every mutation is validated, applied,
//! appended to the hash-chained [`EventLog`] and handed to the
//! [`EventSink`]; replaying the log from genesis rebuilds the registry,
//! ledger and provenance chain exactly.

mod config;
mod event;
mod store;

use std::collections::BTreeMap;
use std::fs;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter_math::LoraAdapter;
use crate::billing::{
    charge_for_request, AdapterCharge, BillingError, Invoice, LeaderboardEntry, Ledger, License,
    LicenseKind, PayoutStatement, Period, UsageEvent,
};
use crate::compliance::{LicenseManifest, ProvenanceLog};
use crate::model_store::{forward, generate_base_model, BaseModel, InferenceRequest, ModelError};
use crate::money::Money;
use crate::registry::{
    suggest_price, validate_publication, AdapterListing, ListingDraft, ListingFilter, PricingTerms,
    Registry, RegistryError,
};

pub use config::{Account, MarketConfig, ModelSpec, Role};
pub use event::{Event, EventLog, EventLogEntry};
pub use store::{
    BlobStore, DataDir, DirBlobs, EventSink, FileSink, MemoryBlobs, NullSink, ReadOnlySink,
};

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("unauthorized")]
    Unauthorized,
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Billing(#[from] BillingError),
    #[error("storage failure: {0}")]
    Storage(String),
    #[error("corrupt event log: {0}")]
    CorruptLog(String),
    #[error("marketplace is read-only after a storage failure; restart to recover")]
    Unavailable,
    #[error("data directory was opened read-only")]
    ReadOnly,
}

impl From<ModelError> for MarketError {
    fn from(e: ModelError) -> Self {
        MarketError::InvalidShape(e.to_string())
    }
}

/// What a committed event produced.
#[derive(Debug, Clone, PartialEq)]
pub enum Applied {
    Listing(String),
    PriceUpdated(String),
    Delisted(String),
    License(License),
    Usage(u64),
    PeriodClosed(Period),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReceipt {
    pub outputs: Vec<Vec<f64>>,
    pub units: u64,
    pub charges: Vec<AdapterCharge>,
    pub usage_seq: u64,
}

/// Forward results computed under a read snapshot, waiting to be metered.
#[derive(Debug, Clone)]
pub struct PreparedInference {
    account_id: String,
    model_id: String,
    adapter_ids: Vec<String>,
    outputs: Vec<Vec<f64>>,
}

pub struct Marketplace {
    config: MarketConfig,
    models: BTreeMap<String, BaseModel>,
    registry: Registry,
    ledger: Ledger,
    provenance: ProvenanceLog,
    log: EventLog,
    blobs: Box<dyn BlobStore>,
    sink: Box<dyn EventSink>,
    poisoned: bool,
}

impl std::fmt::Debug for Marketplace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Marketplace")
            .field("events", &self.log.len())
            .field("listings", &self.registry.listings().count())
            .finish_non_exhaustive()
    }
}

fn storage(e: impl std::fmt::Display) -> MarketError {
    MarketError::Storage(e.to_string())
}

impl Marketplace {
    pub fn new(
        config: MarketConfig,
        blobs: Box<dyn BlobStore>,
        sink: Box<dyn EventSink>,
    ) -> Result<Self, MarketError> {
        config.validate().map_err(MarketError::InvalidRequest)?;
        let models = config
            .models
            .iter()
            .map(|spec| {
                let model = generate_base_model(spec.seed, &spec.layer_dims)
                    .map_err(|e| MarketError::InvalidRequest(format!("model {}: {e}", spec.model_id)))?
                    .with_id(spec.model_id.clone());
                Ok((spec.model_id.clone(), model))
            })
            .collect::<Result<_, MarketError>>()?;
        Ok(Self {
            config,
            models,
            registry: Registry::new(),
            ledger: Ledger::new(),
            provenance: ProvenanceLog::new(),
            log: EventLog::new(),
            blobs,
            sink,
            poisoned: false,
        })
    }

    pub fn in_memory(config: MarketConfig) -> Result<Self, MarketError> {
        Self::new(config, Box::new(MemoryBlobs::default()), Box::new(NullSink))
    }

    /// Rebuilds state from `log`, refusing a log whose chain does not verify.
    pub fn replay(
        config: MarketConfig,
        log: &EventLog,
        blobs: Box<dyn BlobStore>,
        sink: Box<dyn EventSink>,
    ) -> Result<Self, MarketError> {
        if let Some(i) = log.first_broken() {
            return Err(MarketError::CorruptLog(format!("chain breaks at entry {i}")));
        }
        let mut market = Self::new(config, blobs, Box::new(NullSink))?;
        for entry in log.entries() {
            let event = entry
                .event()
                .map_err(|e| MarketError::CorruptLog(format!("entry {}: {e}", entry.seq)))?;
            market
                .apply(entry.timestamp, &event)
                .map_err(|e| MarketError::CorruptLog(format!("entry {} ({}): {e}", entry.seq, entry.kind)))?;
            market.log.push(entry.clone());
        }
        market.sink = sink;
        Ok(market)
    }

    /// Writes `config.toml` into a new data directory.
    pub fn init_data_dir(dir: &DataDir, config: &MarketConfig) -> Result<(), MarketError> {
        config.validate().map_err(MarketError::InvalidRequest)?;
        fs::create_dir_all(dir.blobs_dir()).map_err(storage)?;
        if dir.config_path().exists() {
            return Err(MarketError::InvalidRequest(format!(
                "{} already exists",
                dir.config_path().display()
            )));
        }
        fs::write(dir.config_path(), config.to_toml()).map_err(storage)
    }

    pub fn load_config(dir: &DataDir) -> Result<MarketConfig, MarketError> {
        let text = fs::read_to_string(dir.config_path())
            .map_err(|e| storage(format!("{}: {e}", dir.config_path().display())))?;
        MarketConfig::from_toml(&text).map_err(MarketError::InvalidRequest)
    }

    /// Opens a data directory for writing: takes the directory lock,
    /// verifies the event chain, replays it, and checks the stored
    /// provenance log against the replayed one.
    pub fn open(dir: &DataDir) -> Result<Self, MarketError> {
        let sink = FileSink::open(dir).map_err(storage)?;
        let mut market = Self::load(dir)?;
        market.sink = Box::new(sink);
        Ok(market)
    }

    /// Like [`Marketplace::open`] without the lock; every write is refused.
    pub fn open_read_only(dir: &DataDir) -> Result<Self, MarketError> {
        let mut market = Self::load(dir)?;
        market.sink = Box::new(ReadOnlySink);
        Ok(market)
    }

    fn load(dir: &DataDir) -> Result<Self, MarketError> {
        let config = Self::load_config(dir)?;
        let log = read_event_log(dir)?;
        let stored = read_provenance(dir)?;
        let market = Self::replay(config, &log, Box::new(DirBlobs::new(dir.blobs_dir())), Box::new(NullSink))?;
        if !stored.verify_chain() {
            return Err(MarketError::CorruptLog("provenance chain does not verify".into()));
        }
        if stored.records() != market.provenance.records() {
            return Err(MarketError::CorruptLog(
                "provenance log disagrees with the event log".into(),
            ));
        }
        Ok(market)
    }

    pub fn config(&self) -> &MarketConfig {
        &self.config
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn provenance(&self) -> &ProvenanceLog {
        &self.provenance
    }

    pub fn event_log(&self) -> &EventLog {
        &self.log
    }

    pub fn blobs(&self) -> &dyn BlobStore {
        self.blobs.as_ref()
    }

    pub fn model(&self, model_id: &str) -> Option<&BaseModel> {
        self.models.get(model_id)
    }

    pub fn models(&self) -> impl Iterator<Item = &BaseModel> {
        self.models.values()
    }

    pub fn account(&self, account_id: &str) -> Option<&Account> {
        self.config.accounts.iter().find(|a| a.account_id == account_id)
    }

    pub fn authenticate(&self, token: &str) -> Option<&Account> {
        self.config.accounts.iter().find(|a| a.token == token)
    }

    fn require_account(&self, account_id: &str) -> Result<&Account, MarketError> {
        self.account(account_id).ok_or(MarketError::Unauthorized)
    }

    fn require_provider(&self, account_id: &str) -> Result<(), MarketError> {
        match self.require_account(account_id)?.role {
            Role::Provider => Ok(()),
            _ => Err(MarketError::Forbidden(format!("{account_id} is not a provider"))),
        }
    }

    /// Event timestamps never go backwards.
    fn event_time(&self, now: i64) -> i64 {
        self.log.last_timestamp().map_or(now, |last| now.max(last))
    }

    fn apply(&mut self, timestamp: i64, event: &Event) -> Result<Applied, MarketError> {
        match event {
            Event::Publish {
                provider_id,
                bundle_sha256,
                draft,
                manifest,
            } => {
                let bundle = self
                    .blobs
                    .get(bundle_sha256)
                    .map_err(storage)?
                    .ok_or_else(|| MarketError::NotFound(format!("bundle blob {bundle_sha256}")))?;
                let publication = validate_publication(
                    &self.registry,
                    &self.models,
                    &self.config.license_allowlist,
                    provider_id,
                    &bundle,
                    draft,
                    manifest,
                )?;
                let id = self
                    .registry
                    .apply_publication(publication, &mut self.provenance, timestamp)?;
                Ok(Applied::Listing(id))
            }
            Event::PriceUpdate {
                listing_id,
                provider_id,
                terms,
            } => {
                self.registry.update_price(listing_id, provider_id, *terms, timestamp)?;
                Ok(Applied::PriceUpdated(listing_id.clone()))
            }
            Event::Delist {
                listing_id,
                provider_id,
            } => {
                self.registry.delist(listing_id, provider_id)?;
                Ok(Applied::Delisted(listing_id.clone()))
            }
            Event::LicenseGrant { license, months } => {
                let expected = self.ledger.check_license_grant(
                    &self.registry,
                    &license.account_id,
                    &license.listing_id,
                    license.kind,
                    *months,
                    timestamp,
                )?;
                if &expected != license {
                    return Err(MarketError::CorruptLog(format!(
                        "license {} does not match its grant",
                        license.license_key
                    )));
                }
                self.ledger.apply_license(expected.clone());
                Ok(Applied::License(expected))
            }
            Event::Usage { event } => {
                if event.timestamp != timestamp || event.seq != self.ledger.next_usage_seq() {
                    return Err(MarketError::CorruptLog(format!(
                        "usage {} out of sequence",
                        event.seq
                    )));
                }
                let charges = charge_for_request(
                    &self.registry,
                    &self.ledger,
                    &event.account_id,
                    &event.adapter_ids,
                    event.units,
                    timestamp,
                )?;
                let amounts: Vec<Money> = charges.iter().map(|c| c.amount).collect();
                let listings: Vec<&String> = charges.iter().map(|c| &c.listing_id).collect();
                if amounts != event.charges
                    || listings.iter().ne(event.listing_ids.iter().collect::<Vec<_>>().iter())
                {
                    return Err(MarketError::CorruptLog(format!(
                        "usage {} charges do not recompute",
                        event.seq
                    )));
                }
                let seq = self.ledger.record_usage(event.clone())?;
                Ok(Applied::Usage(seq))
            }
            Event::PeriodClose { period } => {
                self.ledger.check_close(*period, timestamp)?;
                self.ledger.apply_close(*period);
                Ok(Applied::PeriodClosed(*period))
            }
        }
    }

    fn commit(&mut self, now: i64, event: Event) -> Result<Applied, MarketError> {
        if self.poisoned {
            return Err(MarketError::Unavailable);
        }
        if !self.sink.accepts_writes() {
            return Err(MarketError::ReadOnly);
        }
        let timestamp = self.event_time(now);
        let entry = self.log.next_entry(timestamp, &event);
        let applied = self.apply(timestamp, &event)?;
        let record = match &applied {
            Applied::Listing(_) => self.provenance.records().last().cloned(),
            _ => None,
        };
        if let Err(e) = self.sink.append(&entry, record.as_ref()) {
            self.poisoned = true;
            return Err(storage(e));
        }
        self.log.push(entry);
        Ok(applied)
    }

    pub fn publish(
        &mut self,
        provider_id: &str,
        bundle: &[u8],
        draft: &ListingDraft,
        manifest: &LicenseManifest,
        now: i64,
    ) -> Result<AdapterListing, MarketError> {
        self.require_provider(provider_id)?;
        validate_publication(
            &self.registry,
            &self.models,
            &self.config.license_allowlist,
            provider_id,
            bundle,
            draft,
            manifest,
        )?;
        let bundle_sha256 = self.blobs.put(bundle).map_err(storage)?;
        let applied = self.commit(
            now,
            Event::Publish {
                provider_id: provider_id.to_string(),
                bundle_sha256,
                draft: draft.clone(),
                manifest: manifest.clone(),
            },
        )?;
        let Applied::Listing(id) = applied else {
            unreachable!("publish yields a listing")
        };
        Ok(self.registry.listing(&id).expect("just published").clone())
    }

    pub fn update_price(
        &mut self,
        provider_id: &str,
        listing_id: &str,
        terms: PricingTerms,
        now: i64,
    ) -> Result<AdapterListing, MarketError> {
        self.require_account(provider_id)?;
        self.registry.check_price_update(listing_id, provider_id, &terms)?;
        self.commit(
            now,
            Event::PriceUpdate {
                listing_id: listing_id.to_string(),
                provider_id: provider_id.to_string(),
                terms,
            },
        )?;
        Ok(self.registry.listing(listing_id).expect("exists").clone())
    }

    pub fn delist(&mut self, provider_id: &str, listing_id: &str, now: i64) -> Result<(), MarketError> {
        self.require_account(provider_id)?;
        self.registry.owned_active(listing_id, provider_id)?;
        self.commit(
            now,
            Event::Delist {
                listing_id: listing_id.to_string(),
                provider_id: provider_id.to_string(),
            },
        )?;
        Ok(())
    }

    pub fn grant_license(
        &mut self,
        account_id: &str,
        listing_id: &str,
        kind: LicenseKind,
        months: u32,
        now: i64,
    ) -> Result<License, MarketError> {
        self.require_account(account_id)?;
        if self.registry.listing(listing_id).is_some_and(|l| !l.is_active()) {
            return Err(RegistryError::Gone(listing_id.to_string()).into());
        }
        let timestamp = self.event_time(now);
        let license = self.ledger.check_license_grant(
            &self.registry,
            account_id,
            listing_id,
            kind,
            months,
            timestamp,
        )?;
        match self.commit(now, Event::LicenseGrant { license, months })? {
            Applied::License(l) => Ok(l),
            other => unreachable!("license grant yielded {other:?}"),
        }
    }

    fn resolve_adapters(&self, request: &InferenceRequest) -> Result<Vec<&LoraAdapter>, MarketError> {
        let mut seen = std::collections::BTreeSet::new();
        request
            .adapter_ids
            .iter()
            .map(|id| {
                if !seen.insert(id) {
                    return Err(MarketError::InvalidShape(format!("adapter {id} listed twice")));
                }
                let listing = self
                    .registry
                    .listing_for_adapter(id)
                    .ok_or_else(|| MarketError::NotFound(format!("adapter {id}")))?;
                if listing.base_model_id != request.model_id {
                    return Err(MarketError::InvalidShape(format!(
                        "adapter {id} targets {}, not {}",
                        listing.base_model_id, request.model_id
                    )));
                }
                Ok(self.registry.adapter(id).expect("listed adapter is stored"))
            })
            .collect()
    }

    /// License check and forward pass; nothing is recorded yet.
    pub fn prepare_infer(
        &self,
        account_id: &str,
        request: &InferenceRequest,
        now: i64,
    ) -> Result<PreparedInference, MarketError> {
        self.require_account(account_id)?;
        let model = self
            .models
            .get(&request.model_id)
            .ok_or_else(|| MarketError::NotFound(format!("model {}", request.model_id)))?;
        if request.inputs.is_empty() {
            return Err(MarketError::InvalidShape("request has no inputs".into()));
        }
        let adapters = self.resolve_adapters(request)?;
        charge_for_request(
            &self.registry,
            &self.ledger,
            account_id,
            &request.adapter_ids,
            request.units(),
            self.event_time(now),
        )?;
        let outputs = request
            .inputs
            .iter()
            .map(|x| forward(model, &adapters, x))
            .collect::<Result<_, _>>()?;
        Ok(PreparedInference {
            account_id: account_id.to_string(),
            model_id: request.model_id.clone(),
            adapter_ids: request.adapter_ids.clone(),
            outputs,
        })
    }

    /// Charges and records a prepared inference.
    pub fn commit_infer(&mut self, prepared: PreparedInference, now: i64) -> Result<InferenceReceipt, MarketError> {
        let timestamp = self.event_time(now);
        let units = prepared.outputs.len() as u64;
        let charges = charge_for_request(
            &self.registry,
            &self.ledger,
            &prepared.account_id,
            &prepared.adapter_ids,
            units,
            timestamp,
        )?;
        let event = UsageEvent {
            seq: self.ledger.next_usage_seq(),
            timestamp,
            account_id: prepared.account_id,
            model_id: prepared.model_id,
            adapter_ids: charges.iter().map(|c| c.adapter_id.clone()).collect(),
            listing_ids: charges.iter().map(|c| c.listing_id.clone()).collect(),
            units,
            charges: charges.iter().map(|c| c.amount).collect(),
        };
        let Applied::Usage(usage_seq) = self.commit(now, Event::Usage { event })? else {
            unreachable!("usage yields a sequence number")
        };
        Ok(InferenceReceipt {
            outputs: prepared.outputs,
            units,
            charges,
            usage_seq,
        })
    }

    pub fn infer(
        &mut self,
        account_id: &str,
        request: &InferenceRequest,
        now: i64,
    ) -> Result<InferenceReceipt, MarketError> {
        let prepared = self.prepare_infer(account_id, request, now)?;
        self.commit_infer(prepared, now)
    }

    /// Closes `period` for the whole marketplace if needed and returns the
    /// account's invoice. Repeated calls return identical invoices.
    pub fn close_period(&mut self, account_id: &str, period: Period, now: i64) -> Result<Invoice, MarketError> {
        self.require_account(account_id)?;
        let timestamp = self.event_time(now);
        self.ledger.check_close(period, timestamp)?;
        if !self.ledger.is_closed(period) {
            self.commit(now, Event::PeriodClose { period })?;
        }
        Ok(self.ledger.invoice(account_id, period))
    }

    pub fn payout_statement(&self, provider_id: &str, period: Period) -> Result<PayoutStatement, MarketError> {
        match self.account(provider_id) {
            Some(a) if a.role == Role::Provider => {}
            _ => return Err(MarketError::NotFound(format!("provider {provider_id}"))),
        }
        Ok(self.ledger.payout_statement(
            &self.registry,
            provider_id,
            period,
            self.config.platform_share,
        )?)
    }

    /// Invoices for every account with activity in `period`.
    pub fn all_invoices(&self, period: Period) -> Vec<Invoice> {
        self.ledger
            .billed_accounts(period)
            .iter()
            .map(|a| self.ledger.invoice(a, period))
            .collect()
    }

    /// Payout statements for every configured provider.
    pub fn all_payouts(&self, period: Period) -> Result<Vec<PayoutStatement>, MarketError> {
        self.config
            .accounts
            .iter()
            .filter(|a| a.role == Role::Provider)
            .map(|a| self.payout_statement(&a.account_id, period))
            .collect()
    }

    pub fn search(&self, filter: &ListingFilter) -> Vec<&AdapterListing> {
        self.registry.search_listings(filter)
    }

    pub fn suggest_price(&self, listing_id: &str) -> Result<Money, MarketError> {
        let listing = self
            .registry
            .listing(listing_id)
            .ok_or_else(|| MarketError::NotFound(format!("listing {listing_id}")))?;
        Ok(suggest_price(listing, &self.ledger.demand_history(listing_id))?)
    }

    pub fn leaderboard(&self, period: Period, n: usize) -> Vec<LeaderboardEntry> {
        self.ledger.leaderboard(period, n)
    }

    pub fn usage(&self, account_id: &str, period: Period) -> Vec<&UsageEvent> {
        self.ledger.usage_for(account_id, period)
    }
}

pub fn read_event_log(dir: &DataDir) -> Result<EventLog, MarketError> {
    let text = DataDir::read_optional(&dir.events_path()).map_err(storage)?;
    EventLog::from_jsonl(&text).map_err(|e| MarketError::CorruptLog(e.to_string()))
}

pub fn read_provenance(dir: &DataDir) -> Result<ProvenanceLog, MarketError> {
    let text = DataDir::read_optional(&dir.provenance_path()).map_err(storage)?;
    ProvenanceLog::from_jsonl(&text).map_err(|e| MarketError::CorruptLog(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{bundle_for, clean_manifest, draft, manifest_with};

    const FEB_2026: i64 = 1_769_904_000;
    const DAY: i64 = 86_400;

    fn market() -> Marketplace {
        Marketplace::in_memory(MarketConfig::demo()).unwrap()
    }

    fn publish(m: &mut Marketplace, id: &str, terms: PricingTerms, now: i64) -> AdapterListing {
        let model = m.model("toy-small").unwrap().clone();
        let bytes = bundle_for(&model, id, 0, 2, 5).unwrap();
        m.publish("prov-a", &bytes, &draft("legal", "en", 0.8, terms), &clean_manifest(), now)
            .unwrap()
    }

    fn request(adapters: &[&str], n: usize) -> InferenceRequest {
        InferenceRequest {
            model_id: "toy-small".into(),
            adapter_ids: adapters.iter().map(|s| s.to_string()).collect(),
            inputs: vec![vec![0.1; 8]; n],
        }
    }

    #[test]
    fn metered_inference_is_charged() {
        let mut m = market();
        let l = publish(&mut m, "ad-1", PricingTerms::metered(Money(2_000_000)), FEB_2026);
        m.grant_license("cons-a", &l.listing_id, LicenseKind::Subscription, 1, FEB_2026)
            .unwrap();
        let r = m.infer("cons-a", &request(&["ad-1"], 3), FEB_2026 + 10).unwrap();
        assert_eq!(r.units, 3);
        assert_eq!(r.charges[0].amount, Money(6_000));
        assert_eq!(r.outputs.len(), 3);
    }

    #[test]
    fn unlicensed_inference_records_nothing() {
        let mut m = market();
        publish(&mut m, "ad-1", PricingTerms::metered(Money(1_000)), FEB_2026);
        let before = m.event_log().len();
        let err = m.infer("cons-a", &request(&["ad-1"], 1), FEB_2026).unwrap_err();
        assert!(matches!(err, MarketError::Billing(BillingError::PaymentRequired(_))));
        assert_eq!(m.event_log().len(), before);
        assert!(m.ledger().usage().is_empty());
    }

    #[test]
    fn refused_publication_leaves_no_trace() {
        let mut m = market();
        let model = m.model("toy-small").unwrap().clone();
        let bytes = bundle_for(&model, "ad-x", 0, 2, 5).unwrap();
        let err = m
            .publish(
                "prov-a",
                &bytes,
                &draft("legal", "en", 0.5, PricingTerms::outright(Money(1))),
                &manifest_with(&["MIT", "GPL-3.0"]),
                FEB_2026,
            )
            .unwrap_err();
        match err {
            MarketError::Registry(RegistryError::PublicationRefused(v)) => {
                assert_eq!(v.len(), 1);
                assert_eq!(v[0].license_id, "GPL-3.0");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(m.event_log().is_empty());
        assert!(m.provenance().records().is_empty());
    }

    #[test]
    fn consumers_cannot_publish() {
        let mut m = market();
        let model = m.model("toy-small").unwrap().clone();
        let bytes = bundle_for(&model, "ad-x", 0, 2, 5).unwrap();
        let d = draft("legal", "en", 0.5, PricingTerms::outright(Money(1)));
        let err = m.publish("cons-a", &bytes, &d, &clean_manifest(), 0).unwrap_err();
        assert!(matches!(err, MarketError::Forbidden(_)));
    }

    #[test]
    fn closing_is_idempotent_and_blocks_late_events() {
        let mut m = market();
        let l = publish(&mut m, "ad-1", PricingTerms::subscription(Money(5_000_000)), FEB_2026);
        m.grant_license("cons-a", &l.listing_id, LicenseKind::Subscription, 1, FEB_2026 + DAY)
            .unwrap();
        let feb = Period::containing(FEB_2026);
        assert!(matches!(
            m.close_period("cons-a", feb, FEB_2026 + DAY),
            Err(MarketError::Billing(BillingError::TooEarly(_)))
        ));
        let first = m.close_period("cons-a", feb, feb.end()).unwrap();
        let second = m.close_period("cons-a", feb, feb.end() + DAY).unwrap();
        assert_eq!(first, second);
        assert_eq!(first.total, Money(5_000_000));
        let payout = m.payout_statement("prov-a", feb).unwrap();
        assert_eq!(payout.total_platform_cut, Money(1_500_000));
        assert_eq!(payout.total_net, Money(3_500_000));
    }

    #[test]
    fn replay_rebuilds_identical_state() {
        let mut m = market();
        let l = publish(&mut m, "ad-1", PricingTerms::subscription_metered(Money(1_000), Money(7)), FEB_2026);
        m.grant_license("cons-b", &l.listing_id, LicenseKind::Subscription, 2, FEB_2026).unwrap();
        m.infer("cons-b", &request(&["ad-1"], 2), FEB_2026 + 5).unwrap();
        m.update_price("prov-a", &l.listing_id, PricingTerms::subscription_metered(Money(2_000), Money(9)), FEB_2026 + 6)
            .unwrap();
        let mut blobs = MemoryBlobs::default();
        let model = m.model("toy-small").unwrap().clone();
        blobs.put(&bundle_for(&model, "ad-1", 0, 2, 5).unwrap()).unwrap();
        let r = Marketplace::replay(
            MarketConfig::demo(),
            m.event_log(),
            Box::new(blobs),
            Box::new(NullSink),
        )
        .unwrap();
        assert_eq!(r.event_log().head(), m.event_log().head());
        assert_eq!(r.provenance().records(), m.provenance().records());
        assert_eq!(r.ledger().usage(), m.ledger().usage());
        assert_eq!(r.registry().listing(&l.listing_id), m.registry().listing(&l.listing_id));
    }

    #[test]
    fn replay_refuses_a_tampered_log() {
        let mut m = market();
        publish(&mut m, "ad-1", PricingTerms::outright(Money(10)), FEB_2026);
        let mut entries = m.event_log().entries().to_vec();
        entries[0].timestamp += 1;
        let err = Marketplace::replay(
            MarketConfig::demo(),
            &EventLog::from_entries(entries),
            Box::new(MemoryBlobs::default()),
            Box::new(NullSink),
        )
        .unwrap_err();
        assert!(matches!(err, MarketError::CorruptLog(_)));
    }

    #[test]
    fn event_time_never_decreases() {
        let mut m = market();
        publish(&mut m, "ad-1", PricingTerms::outright(Money(10)), FEB_2026);
        publish(&mut m, "ad-2", PricingTerms::outright(Money(10)), FEB_2026 - 100);
        let ts: Vec<i64> = m.event_log().entries().iter().map(|e| e.timestamp).collect();
        assert_eq!(ts, vec![FEB_2026, FEB_2026]);
    }

    #[test]
    fn delisted_adapters_cannot_be_licensed() {
        let mut m = market();
        let l = publish(&mut m, "ad-1", PricingTerms::outright(Money(10)), FEB_2026);
        assert!(matches!(m.delist("prov-b", &l.listing_id, FEB_2026), Err(MarketError::Registry(_))));
        m.delist("prov-a", &l.listing_id, FEB_2026).unwrap();
        assert!(matches!(
            m.grant_license("cons-a", &l.listing_id, LicenseKind::Outright, 0, FEB_2026),
            Err(MarketError::Registry(RegistryError::Gone(_)))
        ));
    }

    #[test]
    fn unknown_provider_payouts_are_not_found() {
        let m = market();
        let feb = Period::containing(FEB_2026);
        assert!(matches!(m.payout_statement("nobody", feb), Err(MarketError::NotFound(_))));
        assert!(matches!(m.payout_statement("cons-a", feb), Err(MarketError::NotFound(_))));
    }

    #[test]
    fn data_dir_survives_restart_and_detects_tampering() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = DataDir::new(tmp.path());
        Marketplace::init_data_dir(&dir, &MarketConfig::demo()).unwrap();
        let head = {
            let mut m = Marketplace::open(&dir).unwrap();
            let l = publish(&mut m, "ad-1", PricingTerms::metered(Money(3_000)), FEB_2026);
            m.grant_license("cons-a", &l.listing_id, LicenseKind::Subscription, 1, FEB_2026).unwrap();
            m.infer("cons-a", &request(&["ad-1"], 4), FEB_2026 + 1).unwrap();
            m.event_log().head()
        };
        let reopened = Marketplace::open(&dir).unwrap();
        assert!(matches!(Marketplace::open(&dir), Err(MarketError::Storage(_))));
        let mut viewer = Marketplace::open_read_only(&dir).unwrap();
        assert!(matches!(viewer.delist("prov-a", "lst-000001", FEB_2026), Err(MarketError::ReadOnly)));
        assert!(viewer.registry().listing("lst-000001").unwrap().is_active());
        assert_eq!(viewer.registry().listings().count(), 1);
        assert_eq!(reopened.event_log().head(), head);
        assert_eq!(reopened.ledger().usage().len(), 1);

        drop(reopened);
        let text = fs::read_to_string(dir.events_path()).unwrap();
        fs::write(dir.events_path(), text.replacen("\"units\":4", "\"units\":5", 1)).unwrap();
        assert!(matches!(Marketplace::open(&dir), Err(MarketError::CorruptLog(_))));
    }
}
