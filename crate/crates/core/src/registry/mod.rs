//! Marketplace catalog: listings, search, pricing terms and price
//! suggestions.

mod pricing;
mod publish;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapter_math::LoraAdapter;
use crate::canonical::Digest;
use crate::compliance::{ComplianceError, Violation};
use crate::money::Money;

pub use pricing::{
    daily_series, demand_ema, suggest_from_stats, suggest_price, DemandWindow, EMA_LAMBDA,
    MULTIPLIER_MAX, MULTIPLIER_MIN, PRICE_GRANULARITY, REFERENCE_DAYS, SENSITIVITY,
};
pub use publish::{publish_adapter, validate_publication, ValidatedPublication};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistryError {
    #[error("publication refused: {} disallowed source license(s)", .0.len())]
    PublicationRefused(Vec<Violation>),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("corrupt bundle: {0}")]
    CorruptBundle(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid listing: {0}")]
    InvalidListing(String),
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("listing {0} is delisted")]
    Gone(String),
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error(transparent)]
    Compliance(#[from] ComplianceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PricingMode {
    Outright,
    Subscription,
    Metered,
    SubscriptionMetered,
}

impl PricingMode {
    pub fn is_metered(self) -> bool {
        matches!(self, PricingMode::Metered | PricingMode::SubscriptionMetered)
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "outright" => Some(Self::Outright),
            "subscription" => Some(Self::Subscription),
            "metered" => Some(Self::Metered),
            "subscription_metered" | "subscription+metered" => Some(Self::SubscriptionMetered),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PricingTerms {
    pub mode: PricingMode,
    pub outright_price: Money,
    pub monthly_fee: Money,
    pub per_1k_units: Money,
}

impl PricingTerms {
    pub fn outright(price: Money) -> Self {
        Self {
            mode: PricingMode::Outright,
            outright_price: price,
            monthly_fee: Money::ZERO,
            per_1k_units: Money::ZERO,
        }
    }

    pub fn subscription(monthly_fee: Money) -> Self {
        Self {
            mode: PricingMode::Subscription,
            outright_price: Money::ZERO,
            monthly_fee,
            per_1k_units: Money::ZERO,
        }
    }

    pub fn metered(per_1k_units: Money) -> Self {
        Self {
            mode: PricingMode::Metered,
            outright_price: Money::ZERO,
            monthly_fee: Money::ZERO,
            per_1k_units,
        }
    }

    pub fn subscription_metered(monthly_fee: Money, per_1k_units: Money) -> Self {
        Self {
            mode: PricingMode::SubscriptionMetered,
            outright_price: Money::ZERO,
            monthly_fee,
            per_1k_units,
        }
    }

    /// Prices are non-negative and fields the mode does not use are zero.
    pub fn validate(&self) -> Result<(), RegistryError> {
        let prices = [self.outright_price, self.monthly_fee, self.per_1k_units];
        if prices.iter().any(|p| p.is_negative()) {
            return Err(RegistryError::InvalidListing("prices must be >= 0".into()));
        }
        let (outright, monthly, metered) = match self.mode {
            PricingMode::Outright => (true, false, false),
            PricingMode::Subscription => (false, true, false),
            PricingMode::Metered => (false, false, true),
            PricingMode::SubscriptionMetered => (false, true, true),
        };
        let unused = [
            (!outright, self.outright_price, "outright_price"),
            (!monthly, self.monthly_fee, "monthly_fee"),
            (!metered, self.per_1k_units, "per_1k_units"),
        ];
        if let Some((_, _, field)) = unused.iter().find(|(off, p, _)| *off && *p != Money::ZERO) {
            return Err(RegistryError::InvalidListing(format!(
                "{field} must be 0 in {:?} mode",
                self.mode
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub domain: String,
    pub language: String,
    /// Provider-declared, 0 to 1.
    pub perf_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ListingStatus {
    Active,
    Delisted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListingDraft {
    pub category: Category,
    pub terms: PricingTerms,
}

impl ListingDraft {
    pub fn validate(&self) -> Result<(), RegistryError> {
        let p = self.category.perf_score;
        if !(0.0..=1.0).contains(&p) {
            return Err(RegistryError::InvalidListing(format!(
                "perf_score {p} outside [0, 1]"
            )));
        }
        self.terms.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterListing {
    pub listing_id: String,
    pub adapter_id: String,
    pub provider_id: String,
    pub base_model_id: String,
    pub category: Category,
    pub terms: PricingTerms,
    pub manifest_hash: Digest,
    pub bundle_sha256: String,
    pub provenance_seq: u64,
    pub provenance_hash: Digest,
    pub status: ListingStatus,
    pub published_at: i64,
}

impl AdapterListing {
    pub fn is_active(&self) -> bool {
        self.status == ListingStatus::Active
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceChange {
    pub listing_id: String,
    pub timestamp: i64,
    pub previous: PricingTerms,
    pub terms: PricingTerms,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ListingFilter {
    pub domain: Option<String>,
    pub language: Option<String>,
    pub min_perf: Option<f64>,
    pub mode: Option<PricingMode>,
}

impl ListingFilter {
    pub fn matches(&self, l: &AdapterListing) -> bool {
        self.domain.as_ref().is_none_or(|d| *d == l.category.domain)
            && self.language.as_ref().is_none_or(|g| *g == l.category.language)
            && self.min_perf.is_none_or(|m| l.category.perf_score >= m)
            && self.mode.is_none_or(|m| m == l.terms.mode)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Registry {
    listings: BTreeMap<String, AdapterListing>,
    adapters: BTreeMap<String, LoraAdapter>,
    price_journal: Vec<PriceChange>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn listing(&self, listing_id: &str) -> Option<&AdapterListing> {
        self.listings.get(listing_id)
    }

    pub fn listings(&self) -> impl Iterator<Item = &AdapterListing> {
        self.listings.values()
    }

    /// Listing currently serving `adapter_id`, if any (active or not).
    pub fn listing_for_adapter(&self, adapter_id: &str) -> Option<&AdapterListing> {
        self.listings.values().find(|l| l.adapter_id == adapter_id)
    }

    pub fn adapter(&self, adapter_id: &str) -> Option<&LoraAdapter> {
        self.adapters.get(adapter_id)
    }

    pub fn price_journal(&self) -> &[PriceChange] {
        &self.price_journal
    }

    pub fn next_listing_id(&self) -> String {
        format!("lst-{:06}", self.listings.len() + 1)
    }

    pub(crate) fn insert(&mut self, listing: AdapterListing, adapter: LoraAdapter) {
        self.adapters.insert(listing.adapter_id.clone(), adapter);
        self.listings.insert(listing.listing_id.clone(), listing);
    }

    /// Active listings matching every supplied predicate, best score first,
    /// then by id.
    pub fn search_listings(&self, filter: &ListingFilter) -> Vec<&AdapterListing> {
        let mut hits: Vec<&AdapterListing> = self
            .listings
            .values()
            .filter(|l| l.is_active() && filter.matches(l))
            .collect();
        hits.sort_by(|a, b| {
            b.category
                .perf_score
                .total_cmp(&a.category.perf_score)
                .then_with(|| a.listing_id.cmp(&b.listing_id))
        });
        hits
    }

    /// Listing owned by `provider_id` that is still active.
    pub fn owned_active(&self, listing_id: &str, provider_id: &str) -> Result<&AdapterListing, RegistryError> {
        let listing = self
            .listings
            .get(listing_id)
            .ok_or_else(|| RegistryError::NotFound(format!("listing {listing_id}")))?;
        if listing.provider_id != provider_id {
            return Err(RegistryError::Forbidden(format!(
                "{provider_id} does not own {listing_id}"
            )));
        }
        if !listing.is_active() {
            return Err(RegistryError::Gone(listing_id.to_string()));
        }
        Ok(listing)
    }

    pub fn check_price_update(
        &self,
        listing_id: &str,
        provider_id: &str,
        terms: &PricingTerms,
    ) -> Result<(), RegistryError> {
        self.owned_active(listing_id, provider_id)?;
        terms.validate()
    }

    pub(crate) fn apply_price_update(&mut self, listing_id: &str, terms: PricingTerms, timestamp: i64) {
        let listing = self.listings.get_mut(listing_id).expect("checked listing");
        self.price_journal.push(PriceChange {
            listing_id: listing_id.to_string(),
            timestamp,
            previous: listing.terms,
            terms,
        });
        listing.terms = terms;
    }

    /// Replaces a listing's terms and journals the change.
    pub fn update_price(
        &mut self,
        listing_id: &str,
        provider_id: &str,
        terms: PricingTerms,
        timestamp: i64,
    ) -> Result<&AdapterListing, RegistryError> {
        self.check_price_update(listing_id, provider_id, &terms)?;
        self.apply_price_update(listing_id, terms, timestamp);
        Ok(&self.listings[listing_id])
    }

    pub(crate) fn apply_delist(&mut self, listing_id: &str) {
        if let Some(l) = self.listings.get_mut(listing_id) {
            l.status = ListingStatus::Delisted;
        }
    }

    pub fn delist(&mut self, listing_id: &str, provider_id: &str) -> Result<(), RegistryError> {
        self.owned_active(listing_id, provider_id)?;
        self.apply_delist(listing_id);
        Ok(())
    }
}
