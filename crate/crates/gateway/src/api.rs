//! Request and response bodies. Money fields are integer micro-USD.

use serde::{Deserialize, Serialize};
use viz_core::billing::{LicenseKind, Period, UsageEvent};
use viz_core::money::Money;
use viz_core::registry::{AdapterListing, PricingMode, PricingTerms};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishResponse {
    pub listing_id: String,
    pub listing: AdapterListing,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ListingQuery {
    pub domain: Option<String>,
    pub language: Option<String>,
    pub min_perf: Option<f64>,
    pub mode: Option<PricingMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceResponse {
    pub listing_id: String,
    pub terms: PricingTerms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSuggestion {
    pub listing_id: String,
    pub current_per_1k_units: Money,
    pub suggested_per_1k_units: Money,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LicenseRequest {
    pub listing_id: String,
    pub kind: LicenseKind,
    /// Subscription length in calendar months; ignored for outright.
    #[serde(default = "one")]
    pub months: u32,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LicenseResponse {
    pub license_key: String,
    pub license: viz_core::billing::License,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PeriodQuery {
    pub period: Option<Period>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PayoutQuery {
    /// Admins may ask for any provider; providers always get their own.
    pub provider_id: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardQuery {
    pub period: Option<Period>,
    pub n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageReport {
    pub account_id: String,
    pub period: Period,
    pub events: Vec<UsageEvent>,
    pub total_units: u64,
    pub total_charges: Money,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub model_id: String,
    pub layer_dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub events: usize,
    pub log_head: String,
    pub listings: usize,
}
