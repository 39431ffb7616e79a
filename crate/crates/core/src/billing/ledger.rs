use std::collections::{BTreeMap, BTreeSet};

use chrono::DateTime;
use serde::{Deserialize, Serialize};

use super::{
    BillingError, Invoice, InvoiceLine, LeaderboardEntry, License, LicenseKind, PayoutLine,
    PayoutStatement, Period, UsageEvent,
};
use crate::money::{metered_charge, Money, Ratio};
use crate::registry::{DemandWindow, PricingMode, Registry};

pub const MAX_SUBSCRIPTION_MONTHS: u32 = 36;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterCharge {
    pub adapter_id: String,
    pub listing_id: String,
    pub amount: Money,
}

/// Append-only billing state: licenses, usage events and closed periods.
#[derive(Debug, Clone, Default)]
pub struct Ledger {
    licenses: Vec<License>,
    by_holder: BTreeMap<(String, String), Vec<usize>>,
    usage: Vec<UsageEvent>,
    closed: BTreeSet<Period>,
}

#[derive(Default)]
struct Attribution {
    units: u64,
    metered: Money,
    subscription_fees: Money,
    outright_purchases: Money,
}

impl Attribution {
    fn total(&self) -> Money {
        self.metered + self.subscription_fees + self.outright_purchases
    }
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn licenses(&self) -> &[License] {
        &self.licenses
    }

    pub fn usage(&self) -> &[UsageEvent] {
        &self.usage
    }

    pub fn is_closed(&self, period: Period) -> bool {
        self.closed.contains(&period)
    }

    pub fn closed_periods(&self) -> impl Iterator<Item = Period> + '_ {
        self.closed.iter().copied()
    }

    fn ensure_open(&self, timestamp: i64) -> Result<(), BillingError> {
        let p = Period::containing(timestamp);
        if self.closed.contains(&p) {
            return Err(BillingError::PeriodClosed(p));
        }
        Ok(())
    }

    /// Best license `account_id` holds for `listing_id` at `timestamp`;
    /// outright licenses win over subscriptions.
    pub fn valid_license(&self, account_id: &str, listing_id: &str, timestamp: i64) -> Option<&License> {
        let idx = self
            .by_holder
            .get(&(account_id.to_string(), listing_id.to_string()))?;
        let mut valid = idx
            .iter()
            .map(|&i| &self.licenses[i])
            .filter(|l| l.is_valid_at(timestamp));
        let first = valid.next()?;
        if first.kind == LicenseKind::Outright {
            return Some(first);
        }
        Some(valid.find(|l| l.kind == LicenseKind::Outright).unwrap_or(first))
    }

    /// Builds the license a grant would create, without recording it.
    pub fn check_license_grant(
        &self,
        registry: &Registry,
        account_id: &str,
        listing_id: &str,
        kind: LicenseKind,
        months: u32,
        now: i64,
    ) -> Result<License, BillingError> {
        self.ensure_open(now)?;
        let listing = registry
            .listing(listing_id)
            .filter(|l| l.is_active())
            .ok_or_else(|| BillingError::NotFound(format!("active listing {listing_id}")))?;
        let wanted = match listing.terms.mode {
            PricingMode::Outright => LicenseKind::Outright,
            _ => LicenseKind::Subscription,
        };
        if kind != wanted {
            return Err(BillingError::InvalidLicense(format!(
                "listing {listing_id} is sold as {wanted:?}, not {kind:?}"
            )));
        }
        let license_key = format!("lic-{:06}", self.licenses.len() + 1);
        let license = match kind {
            LicenseKind::Outright => {
                if self
                    .valid_license(account_id, listing_id, now)
                    .is_some_and(|l| l.kind == LicenseKind::Outright)
                {
                    return Err(BillingError::Conflict(format!(
                        "{account_id} already owns {listing_id}"
                    )));
                }
                License {
                    license_key,
                    account_id: account_id.to_string(),
                    listing_id: listing_id.to_string(),
                    kind,
                    granted_at: now,
                    period_start: None,
                    period_end: None,
                    price: listing.terms.outright_price,
                }
            }
            LicenseKind::Subscription => {
                if !(1..=MAX_SUBSCRIPTION_MONTHS).contains(&months) {
                    return Err(BillingError::InvalidLicense(format!(
                        "subscription length must be 1..={MAX_SUBSCRIPTION_MONTHS} months"
                    )));
                }
                let mut last = Period::containing(now);
                for _ in 1..months {
                    last = last.next();
                }
                License {
                    license_key,
                    account_id: account_id.to_string(),
                    listing_id: listing_id.to_string(),
                    kind,
                    granted_at: now,
                    period_start: Some(now),
                    period_end: Some(last.end()),
                    price: listing.terms.monthly_fee,
                }
            }
        };
        Ok(license)
    }

    pub(crate) fn apply_license(&mut self, license: License) {
        self.by_holder
            .entry((license.account_id.clone(), license.listing_id.clone()))
            .or_default()
            .push(self.licenses.len());
        self.licenses.push(license);
    }

    /// Grants an outright purchase or a subscription running from `now` to
    /// the end of the `months`-th calendar month.
    pub fn grant_license(
        &mut self,
        registry: &Registry,
        account_id: &str,
        listing_id: &str,
        kind: LicenseKind,
        months: u32,
        now: i64,
    ) -> Result<&License, BillingError> {
        let license = self.check_license_grant(registry, account_id, listing_id, kind, months, now)?;
        self.apply_license(license);
        Ok(self.licenses.last().expect("just pushed"))
    }

    pub fn next_usage_seq(&self) -> u64 {
        self.usage.len() as u64
    }

    pub fn check_usage(&self, event: &UsageEvent) -> Result<(), BillingError> {
        self.ensure_open(event.timestamp)?;
        if event.charges.len() != event.adapter_ids.len()
            || event.listing_ids.len() != event.adapter_ids.len()
        {
            return Err(BillingError::InvalidLicense(
                "charges must align with adapter ids".into(),
            ));
        }
        Ok(())
    }

    /// Appends `event` with the next sequence number and returns it.
    pub fn record_usage(&mut self, mut event: UsageEvent) -> Result<u64, BillingError> {
        self.check_usage(&event)?;
        event.seq = self.next_usage_seq();
        let seq = event.seq;
        self.usage.push(event);
        Ok(seq)
    }

    pub fn check_close(&self, period: Period, now: i64) -> Result<(), BillingError> {
        if now < period.end() {
            return Err(BillingError::TooEarly(period));
        }
        Ok(())
    }

    pub(crate) fn apply_close(&mut self, period: Period) {
        self.closed.insert(period);
    }

    /// Closes `period` (if not already closed) and returns the account's
    /// invoice for it. Repeated calls return identical invoices.
    pub fn close_billing_period(&mut self, account_id: &str, period: Period, now: i64) -> Result<Invoice, BillingError> {
        self.check_close(period, now)?;
        self.apply_close(period);
        Ok(self.invoice(account_id, period))
    }

    fn attribute(&self, period: Period, mut include: impl FnMut(&str, &str) -> bool) -> BTreeMap<String, Attribution> {
        let mut out: BTreeMap<String, Attribution> = BTreeMap::new();
        for event in self.usage.iter().filter(|e| period.contains(e.timestamp)) {
            for (listing, charge) in event.listing_ids.iter().zip(&event.charges) {
                if include(&event.account_id, listing) {
                    let a = out.entry(listing.clone()).or_default();
                    a.units += event.units;
                    a.metered += *charge;
                }
            }
        }
        for l in &self.licenses {
            if !include(&l.account_id, &l.listing_id) {
                continue;
            }
            match l.kind {
                LicenseKind::Outright if period.contains(l.granted_at) => {
                    out.entry(l.listing_id.clone()).or_default().outright_purchases += l.price;
                }
                LicenseKind::Subscription => {
                    if let (Some(s), Some(e)) = (l.period_start, l.period_end) {
                        if period.overlaps(s, e) {
                            out.entry(l.listing_id.clone()).or_default().subscription_fees += l.price;
                        }
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// Everything `account_id` owes for `period`, one line per listing.
    pub fn invoice(&self, account_id: &str, period: Period) -> Invoice {
        let lines: Vec<InvoiceLine> = self
            .attribute(period, |acct, _| acct == account_id)
            .into_iter()
            .map(|(listing_id, a)| InvoiceLine {
                subtotal: a.total(),
                listing_id,
                units: a.units,
                metered: a.metered,
                subscription_fees: a.subscription_fees,
                outright_purchases: a.outright_purchases,
            })
            .collect();
        let total = lines.iter().map(|l| l.subtotal).sum();
        Invoice {
            account_id: account_id.to_string(),
            period,
            lines,
            total,
        }
    }

    /// Accounts with any billable activity in `period`.
    pub fn billed_accounts(&self, period: Period) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self
            .usage
            .iter()
            .filter(|e| period.contains(e.timestamp))
            .map(|e| e.account_id.clone())
            .collect();
        out.extend(
            self.licenses
                .iter()
                .filter(|l| match l.kind {
                    LicenseKind::Outright => period.contains(l.granted_at),
                    LicenseKind::Subscription => l
                        .period_start
                        .zip(l.period_end)
                        .is_some_and(|(s, e)| period.overlaps(s, e)),
                })
                .map(|l| l.account_id.clone()),
        );
        out
    }

    /// Splits each of the provider's listings' gross revenue for a closed
    /// period: `cut = floor(share · gross)`, `net = gross - cut`.
    pub fn payout_statement(
        &self,
        registry: &Registry,
        provider_id: &str,
        period: Period,
        share: Ratio,
    ) -> Result<PayoutStatement, BillingError> {
        if !self.is_closed(period) {
            return Err(BillingError::PeriodOpen(period));
        }
        let owned: BTreeSet<&str> = registry
            .listings()
            .filter(|l| l.provider_id == provider_id)
            .map(|l| l.listing_id.as_str())
            .collect();
        let gross = self.attribute(period, |_, listing| owned.contains(listing));
        let lines: Vec<PayoutLine> = owned
            .iter()
            .map(|id| {
                let gross = gross.get(*id).map_or(Money::ZERO, Attribution::total);
                let platform_cut = gross.mul_ratio_floor(share);
                PayoutLine {
                    listing_id: id.to_string(),
                    gross,
                    platform_cut,
                    net: gross - platform_cut,
                }
            })
            .collect();
        Ok(PayoutStatement {
            provider_id: provider_id.to_string(),
            period,
            platform_share: share,
            total_gross: lines.iter().map(|l| l.gross).sum(),
            total_platform_cut: lines.iter().map(|l| l.platform_cut).sum(),
            total_net: lines.iter().map(|l| l.net).sum(),
            lines,
        })
    }

    /// Top `n` listings by units billed in `period`; ties by listing id.
    pub fn leaderboard(&self, period: Period, n: usize) -> Vec<LeaderboardEntry> {
        let mut units: BTreeMap<&str, u64> = BTreeMap::new();
        for e in self.usage.iter().filter(|e| period.contains(e.timestamp)) {
            for listing in &e.listing_ids {
                *units.entry(listing).or_default() += e.units;
            }
        }
        let mut ranked: Vec<(&str, u64)> = units.into_iter().filter(|(_, u)| *u > 0).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked
            .into_iter()
            .take(n)
            .enumerate()
            .map(|(i, (listing_id, units))| LeaderboardEntry {
                rank: i + 1,
                listing_id: listing_id.to_string(),
                units,
            })
            .collect()
    }

    pub fn usage_for(&self, account_id: &str, period: Period) -> Vec<&UsageEvent> {
        self.usage
            .iter()
            .filter(|e| e.account_id == account_id && period.contains(e.timestamp))
            .collect()
    }

    /// Daily units billed for a listing, as input to price suggestions.
    pub fn demand_history(&self, listing_id: &str) -> Vec<DemandWindow> {
        let mut by_day = BTreeMap::new();
        for e in &self.usage {
            if e.listing_ids.iter().any(|l| l == listing_id) {
                let day = DateTime::from_timestamp(e.timestamp, 0)
                    .expect("timestamp in range")
                    .date_naive();
                *by_day.entry(day).or_insert(0u64) += e.units;
            }
        }
        by_day
            .into_iter()
            .map(|(day, units_billed)| DemandWindow {
                listing_id: listing_id.to_string(),
                day,
                units_billed,
            })
            .collect()
    }
}

/// Per-adapter charges for a request of `units` by `account_id`, in
/// adapter-id order. Every adapter must be covered by a license valid at
/// `now`; outright licenses are charged nothing per use.
pub fn charge_for_request(
    registry: &Registry,
    ledger: &Ledger,
    account_id: &str,
    adapter_ids: &[String],
    units: u64,
    now: i64,
) -> Result<Vec<AdapterCharge>, BillingError> {
    let mut ids: Vec<&String> = adapter_ids.iter().collect();
    ids.sort();
    ids.dedup();
    ids.into_iter()
        .map(|adapter_id| {
            let listing = registry
                .listing_for_adapter(adapter_id)
                .ok_or_else(|| BillingError::NotFound(format!("adapter {adapter_id}")))?;
            let license = ledger
                .valid_license(account_id, &listing.listing_id, now)
                .ok_or_else(|| BillingError::PaymentRequired(adapter_id.clone()))?;
            let amount = match license.kind {
                LicenseKind::Outright => Money::ZERO,
                LicenseKind::Subscription if listing.terms.mode.is_metered() => {
                    metered_charge(units, listing.terms.per_1k_units)
                }
                LicenseKind::Subscription => Money::ZERO,
            };
            Ok(AdapterCharge {
                adapter_id: adapter_id.clone(),
                listing_id: listing.listing_id.clone(),
                amount,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::compliance::{default_allowlist, ProvenanceLog};
    use crate::fixtures::{bundle_for, clean_manifest, draft};
    use crate::model_store::generate_base_model;
    use crate::registry::{publish_adapter, PricingTerms};

    const FEB: i64 = 1_769_904_000;

    fn registry_with(terms: &[PricingTerms]) -> Registry {
        let model = generate_base_model(1, &[4, 4]).unwrap().with_id("m");
        let models = BTreeMap::from([("m".to_string(), model.clone())]);
        let mut registry = Registry::new();
        let mut prov = ProvenanceLog::new();
        for (i, t) in terms.iter().enumerate() {
            let bytes = bundle_for(&model, &format!("ad-{i}"), 0, 1, i as u64).unwrap();
            publish_adapter(
                &mut registry,
                &mut prov,
                &models,
                &default_allowlist(),
                "prov",
                &bytes,
                &draft("d", "en", 0.5, *t),
                &clean_manifest(),
                0,
            )
            .unwrap();
        }
        registry
    }

    fn usage(ledger: &mut Ledger, reg: &Registry, units: u64, now: i64) -> Result<Vec<AdapterCharge>, BillingError> {
        let ids = vec!["ad-0".to_string()];
        let charges = charge_for_request(reg, ledger, "c", &ids, units, now)?;
        ledger.record_usage(UsageEvent {
            seq: 0,
            timestamp: now,
            account_id: "c".into(),
            model_id: "m".into(),
            adapter_ids: ids,
            listing_ids: charges.iter().map(|c| c.listing_id.clone()).collect(),
            units,
            charges: charges.iter().map(|c| c.amount).collect(),
        })?;
        Ok(charges)
    }

    #[test]
    fn subscription_fee_is_billed_in_every_overlapped_month() {
        let reg = registry_with(&[PricingTerms::subscription(Money(9_000_000))]);
        let mut ledger = Ledger::new();
        let lic = ledger
            .grant_license(&reg, "c", "lst-000001", LicenseKind::Subscription, 2, FEB + 10 * 86_400)
            .unwrap();
        let feb = Period::containing(FEB);
        assert_eq!(lic.period_end, Some(feb.next().end()));
        for p in [feb, feb.next()] {
            assert_eq!(ledger.invoice("c", p).total, Money(9_000_000));
        }
        assert_eq!(ledger.invoice("c", feb.next().next()).total, Money::ZERO);
    }

    #[test]
    fn subscription_expires_and_then_requires_payment() {
        let reg = registry_with(&[PricingTerms::metered(Money(1_500))]);
        let mut ledger = Ledger::new();
        ledger
            .grant_license(&reg, "c", "lst-000001", LicenseKind::Subscription, 1, FEB)
            .unwrap();
        let charges = usage(&mut ledger, &reg, 1001, FEB + 1).unwrap();
        // 1001 * 1500 / 1000 = 1501.5, half-even to 1502
        assert_eq!(charges[0].amount, Money(1_502));
        let march = Period::containing(FEB).end();
        assert!(matches!(usage(&mut ledger, &reg, 1, march), Err(BillingError::PaymentRequired(_))));
    }

    #[test]
    fn outright_license_is_free_per_use_and_billed_once() {
        let reg = registry_with(&[PricingTerms::outright(Money(4_000_000))]);
        let mut ledger = Ledger::new();
        assert!(matches!(
            ledger.grant_license(&reg, "c", "lst-000001", LicenseKind::Subscription, 1, FEB),
            Err(BillingError::InvalidLicense(_))
        ));
        ledger.grant_license(&reg, "c", "lst-000001", LicenseKind::Outright, 0, FEB).unwrap();
        assert!(matches!(
            ledger.grant_license(&reg, "c", "lst-000001", LicenseKind::Outright, 0, FEB),
            Err(BillingError::Conflict(_))
        ));
        let charges = usage(&mut ledger, &reg, 500, FEB + 5).unwrap();
        assert_eq!(charges[0].amount, Money::ZERO);
        let inv = ledger.invoice("c", Period::containing(FEB));
        assert_eq!(inv.total, Money(4_000_000));
        assert_eq!(inv.lines[0].units, 500);
    }

    #[test]
    fn closed_periods_reject_events_and_split_payouts() {
        let reg = registry_with(&[PricingTerms::metered(Money(333))]);
        let mut ledger = Ledger::new();
        ledger.grant_license(&reg, "c", "lst-000001", LicenseKind::Subscription, 3, FEB).unwrap();
        usage(&mut ledger, &reg, 10_000, FEB + 1).unwrap();
        let feb = Period::containing(FEB);
        assert!(matches!(
            ledger.payout_statement(&reg, "prov", feb, crate::billing::DEFAULT_PLATFORM_SHARE),
            Err(BillingError::PeriodOpen(_))
        ));
        let inv = ledger.close_billing_period("c", feb, feb.end()).unwrap();
        assert_eq!(inv.total, Money(3_330));
        assert!(matches!(usage(&mut ledger, &reg, 1, FEB + 2), Err(BillingError::PeriodClosed(_))));
        let payout = ledger
            .payout_statement(&reg, "prov", feb, crate::billing::DEFAULT_PLATFORM_SHARE)
            .unwrap();
        assert_eq!(payout.total_platform_cut, Money(999));
        assert_eq!(payout.total_net, Money(2_331));
        assert_eq!(payout.total_net + payout.total_platform_cut, inv.total);
    }

    #[test]
    fn leaderboard_ranks_units_with_id_tiebreak() {
        let reg = registry_with(&[PricingTerms::metered(Money(1)), PricingTerms::metered(Money(1))]);
        let mut ledger = Ledger::new();
        for l in ["lst-000001", "lst-000002"] {
            ledger.grant_license(&reg, "c", l, LicenseKind::Subscription, 1, FEB).unwrap();
        }
        let ids = vec!["ad-1".to_string(), "ad-0".to_string()];
        let charges = charge_for_request(&reg, &ledger, "c", &ids, 7, FEB).unwrap();
        assert_eq!(charges[0].adapter_id, "ad-0");
        ledger
            .record_usage(UsageEvent {
                seq: 0,
                timestamp: FEB,
                account_id: "c".into(),
                model_id: "m".into(),
                adapter_ids: charges.iter().map(|c| c.adapter_id.clone()).collect(),
                listing_ids: charges.iter().map(|c| c.listing_id.clone()).collect(),
                units: 7,
                charges: charges.iter().map(|c| c.amount).collect(),
            })
            .unwrap();
        let board = ledger.leaderboard(Period::containing(FEB), 10);
        let ids: Vec<_> = board.iter().map(|e| (e.rank, e.listing_id.as_str(), e.units)).collect();
        assert_eq!(ids, [(1, "lst-000001", 7), (2, "lst-000002", 7)]);
    }
}
