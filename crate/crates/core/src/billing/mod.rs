//! Licensing, metering, invoices, revenue-share payouts and the
//! popularity leaderboard. All amounts are integer micro-USD.

mod ledger;
mod period;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::money::{Money, Ratio};

pub use ledger::{charge_for_request, AdapterCharge, Ledger};
pub use period::{ParsePeriodError, Period};

/// Platform share of gross provider revenue.
pub const DEFAULT_PLATFORM_SHARE: Ratio = Ratio { num: 30, den: 100 };

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BillingError {
    #[error("payment required: no valid license for {0}")]
    PaymentRequired(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("period {0} has not elapsed yet")]
    TooEarly(Period),
    #[error("period {0} is not closed")]
    PeriodOpen(Period),
    #[error("period {0} is already closed")]
    PeriodClosed(Period),
    #[error("invalid license request: {0}")]
    InvalidLicense(String),
    #[error("conflict: {0}")]
    Conflict(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LicenseKind {
    Outright,
    Subscription,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct License {
    pub license_key: String,
    pub account_id: String,
    pub listing_id: String,
    pub kind: LicenseKind,
    pub granted_at: i64,
    /// Subscription validity `[period_start, period_end)`; `None` for outright.
    pub period_start: Option<i64>,
    pub period_end: Option<i64>,
    /// Outright price paid, or the monthly fee for subscriptions.
    pub price: Money,
}

impl License {
    pub fn is_valid_at(&self, timestamp: i64) -> bool {
        match self.kind {
            LicenseKind::Outright => timestamp >= self.granted_at,
            LicenseKind::Subscription => match (self.period_start, self.period_end) {
                (Some(s), Some(e)) => (s..e).contains(&timestamp),
                _ => false,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageEvent {
    pub seq: u64,
    pub timestamp: i64,
    pub account_id: String,
    pub model_id: String,
    /// Adapter ids in canonical (sorted) order.
    pub adapter_ids: Vec<String>,
    /// Listing of each adapter, aligned with `adapter_ids`.
    pub listing_ids: Vec<String>,
    pub units: u64,
    /// Charge per adapter, aligned with `adapter_ids`.
    pub charges: Vec<Money>,
}

impl UsageEvent {
    pub fn total(&self) -> Money {
        self.charges.iter().copied().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvoiceLine {
    pub listing_id: String,
    pub units: u64,
    pub metered: Money,
    pub subscription_fees: Money,
    pub outright_purchases: Money,
    pub subtotal: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invoice {
    pub account_id: String,
    pub period: Period,
    pub lines: Vec<InvoiceLine>,
    pub total: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayoutLine {
    pub listing_id: String,
    pub gross: Money,
    pub platform_cut: Money,
    pub net: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayoutStatement {
    pub provider_id: String,
    pub period: Period,
    pub platform_share: Ratio,
    pub lines: Vec<PayoutLine>,
    pub total_gross: Money,
    pub total_platform_cut: Money,
    pub total_net: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub rank: usize,
    pub listing_id: String,
    pub units: u64,
}
