//! Demand-driven price suggestions for metered listings.
//!
//! `multiplier = clamp(1 + SENSITIVITY · (d_ema - d_ref) / d_ref, 0.5, 2.0)`
//! where `d_ema` is an exponential moving average of daily units (oldest
//! first, seeded with the first day) and `d_ref` the plain mean of the last
//! `REFERENCE_DAYS` days. Suggestions are advisory; nothing applies them.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{AdapterListing, RegistryError};
use crate::money::Money;

pub const EMA_LAMBDA: f64 = 0.3;
pub const SENSITIVITY: f64 = 0.5;
pub const MULTIPLIER_MIN: f64 = 0.5;
pub const MULTIPLIER_MAX: f64 = 2.0;
pub const REFERENCE_DAYS: usize = 30;
pub const PRICE_GRANULARITY: i64 = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemandWindow {
    pub listing_id: String,
    pub day: NaiveDate,
    pub units_billed: u64,
}

/// Dense day-by-day units from the first to the last day present; missing
/// days count as zero and repeated days are summed.
pub fn daily_series(history: &[DemandWindow]) -> Vec<f64> {
    let mut by_day: BTreeMap<NaiveDate, u64> = BTreeMap::new();
    for w in history {
        *by_day.entry(w.day).or_default() += w.units_billed;
    }
    let (Some((&first, _)), Some((&last, _))) = (by_day.first_key_value(), by_day.last_key_value())
    else {
        return Vec::new();
    };
    first
        .iter_days()
        .take_while(|d| *d <= last)
        .map(|d| by_day.get(&d).copied().unwrap_or(0) as f64)
        .collect()
}

pub fn demand_ema(series: &[f64]) -> Option<f64> {
    let (first, rest) = series.split_first()?;
    Some(rest
        .iter()
        .fold(*first, |ema, u| EMA_LAMBDA * u + (1.0 - EMA_LAMBDA) * ema))
}

fn reference_mean(series: &[f64]) -> Option<f64> {
    let tail = &series[series.len().saturating_sub(REFERENCE_DAYS)..];
    (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
}

/// Applies the clamped multiplier and rounds half-even to a multiple of
/// [`PRICE_GRANULARITY`]. A zero reference leaves the price unchanged.
pub fn suggest_from_stats(current: Money, d_ema: f64, d_ref: f64) -> Money {
    if d_ref == 0.0 {
        return current;
    }
    let multiplier = (1.0 + SENSITIVITY * (d_ema - d_ref) / d_ref).clamp(MULTIPLIER_MIN, MULTIPLIER_MAX);
    let steps = (current.0 as f64 * multiplier / PRICE_GRANULARITY as f64).round_ties_even();
    Money(steps as i64 * PRICE_GRANULARITY)
}

pub fn suggest_price(listing: &AdapterListing, history: &[DemandWindow]) -> Result<Money, RegistryError> {
    if !listing.terms.mode.is_metered() {
        return Err(RegistryError::NotApplicable(format!(
            "listing {} is not metered",
            listing.listing_id
        )));
    }
    let own: Vec<DemandWindow> = history
        .iter()
        .filter(|w| w.listing_id == listing.listing_id)
        .cloned()
        .collect();
    let series = daily_series(&own);
    let current = listing.terms.per_1k_units;
    match (demand_ema(&series), reference_mean(&series)) {
        (Some(ema), Some(reference)) => Ok(suggest_from_stats(current, ema, reference)),
        _ => Ok(current),
    }
}
