//! Seeded marketplace workload: providers publish, consumers license and
//! run inference over one calendar month, then the month is closed.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use crate::billing::{LicenseKind, Period};
use crate::fixtures::{bundle_for, clean_manifest, draft};
use crate::marketplace::{Account, MarketConfig, MarketError, Marketplace, ModelSpec, Role};
use crate::model_store::InferenceRequest;
use crate::money::Money;
use crate::registry::{PricingMode, PricingTerms};

pub const SIM_MODEL: &str = "sim-model";
pub const OPERATOR: &str = "operator";

#[derive(Debug, Clone, Copy)]
pub struct SimConfig {
    pub seed: u64,
    pub providers: usize,
    pub consumers: usize,
    pub listings_per_provider: usize,
    pub requests: usize,
    pub period: Period,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 2026,
            providers: 5,
            consumers: 20,
            listings_per_provider: 2,
            requests: 1000,
            period: Period::new(2026, 4).expect("valid month"),
        }
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct SimStats {
    pub published: usize,
    pub licenses: usize,
    pub served: usize,
    pub refused: usize,
    pub price_updates: usize,
}

pub struct SimOutcome {
    pub market: Marketplace,
    pub stats: SimStats,
}

struct Rng(Xoshiro256StarStar);

impl Rng {
    fn below(&mut self, n: u64) -> u64 {
        self.0.next_u64() % n
    }

    fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len() as u64) as usize]
    }
}

pub fn sim_market_config(cfg: &SimConfig) -> MarketConfig {
    let mut accounts = vec![Account {
        account_id: OPERATOR.into(),
        role: Role::Admin,
        display_name: "Operator".into(),
        token: "tok-operator".into(),
    }];
    let mut add = |prefix: &str, n: usize, role: Role| {
        for i in 0..n {
            let id = format!("{prefix}-{i:02}");
            accounts.push(Account {
                token: format!("tok-{id}"),
                display_name: id.clone(),
                account_id: id,
                role,
            });
        }
    };
    add("prov", cfg.providers, Role::Provider);
    add("cons", cfg.consumers, Role::Consumer);
    MarketConfig {
        accounts,
        models: vec![ModelSpec {
            model_id: SIM_MODEL.into(),
            seed: 1,
            layer_dims: vec![8, 12, 4],
        }],
        ..MarketConfig::default()
    }
}

fn random_terms(rng: &mut Rng) -> PricingTerms {
    // Odd micro-dollar amounts exercise rounding and the floor split.
    let price = |rng: &mut Rng| Money(1 + rng.below(9_999_999) as i64);
    match rng.below(4) {
        0 => PricingTerms::outright(price(rng)),
        1 => PricingTerms::subscription(price(rng)),
        2 => PricingTerms::metered(price(rng)),
        _ => PricingTerms::subscription_metered(price(rng), price(rng)),
    }
}

/// Runs the workload and closes `cfg.period`. Refused requests (for example
/// a consumer using an adapter it never licensed) are counted, not fatal.
pub fn run_simulation(cfg: &SimConfig) -> Result<SimOutcome, MarketError> {
    let mut rng = Rng(Xoshiro256StarStar::seed_from_u64(cfg.seed));
    let mut market = Marketplace::in_memory(sim_market_config(cfg))?;
    let model = market.model(SIM_MODEL).expect("configured").clone();
    let start = cfg.period.start();
    let span = (cfg.period.end() - start) as u64;
    let mut stats = SimStats::default();

    let mut adapters = Vec::new();
    for p in 0..cfg.providers {
        for k in 0..cfg.listings_per_provider {
            let id = format!("sim-{p:02}-{k}");
            let layer = rng.below(2) as usize;
            let bundle = bundle_for(&model, &id, layer, 1 + rng.below(3) as usize, rng.0.next_u64())
                .map_err(|e| MarketError::InvalidRequest(e.to_string()))?;
            let domain = *rng.pick(&["legal", "medical", "code"]);
            let d = draft(domain, "en", rng.below(101) as f64 / 100.0, random_terms(&mut rng));
            let listing = market.publish(&format!("prov-{p:02}"), &bundle, &d, &clean_manifest(), start)?;
            adapters.push((listing.listing_id, id));
            stats.published += 1;
        }
    }

    // Each consumer licenses a few listings early in the month.
    let mut owned: Vec<Vec<usize>> = vec![Vec::new(); cfg.consumers];
    for (c, mine) in owned.iter_mut().enumerate() {
        for _ in 0..3 {
            let idx = rng.below(adapters.len() as u64) as usize;
            if mine.contains(&idx) {
                continue;
            }
            let listing = market.registry().listing(&adapters[idx].0).expect("published").clone();
            let kind = match listing.terms.mode {
                PricingMode::Outright => LicenseKind::Outright,
                _ => LicenseKind::Subscription,
            };
            let at = start + rng.below(span / 10) as i64;
            let months = 1 + rng.below(2) as u32;
            market.grant_license(&format!("cons-{c:02}"), &listing.listing_id, kind, months, at)?;
            mine.push(idx);
            stats.licenses += 1;
        }
    }

    let mut times: Vec<i64> = (0..cfg.requests)
        .map(|_| start + (span / 10 + rng.below(span - span / 10)) as i64)
        .collect();
    times.sort_unstable();
    for now in times {
        if rng.below(50) == 0 {
            let (listing_id, _) = rng.pick(&adapters).clone();
            let provider = market.registry().listing(&listing_id).expect("published").provider_id.clone();
            let mode = market.registry().listing(&listing_id).expect("published").terms.mode;
            let mut terms = random_terms(&mut rng);
            while terms.mode != mode {
                terms = random_terms(&mut rng);
            }
            market.update_price(&provider, &listing_id, terms, now)?;
            stats.price_updates += 1;
            continue;
        }
        let c = rng.below(cfg.consumers as u64) as usize;
        let mut ids: Vec<String> = Vec::new();
        for _ in 0..1 + rng.below(3) {
            // One request in ten reaches for an arbitrary, possibly unlicensed adapter.
            let idx = if owned[c].is_empty() || rng.below(10) == 0 {
                rng.below(adapters.len() as u64) as usize
            } else {
                *rng.pick(&owned[c])
            };
            if !ids.contains(&adapters[idx].1) {
                ids.push(adapters[idx].1.clone());
            }
        }
        let n = 1 + rng.below(5) as usize;
        let request = InferenceRequest {
            model_id: SIM_MODEL.into(),
            adapter_ids: ids,
            inputs: (0..n)
                .map(|_| (0..8).map(|_| rng.below(2001) as f64 / 1000.0 - 1.0).collect())
                .collect(),
        };
        match market.infer(&format!("cons-{c:02}"), &request, now) {
            Ok(_) => stats.served += 1,
            Err(MarketError::Billing(_)) => stats.refused += 1,
            Err(e) => return Err(e),
        }
    }
    market.close_period(OPERATOR, cfg.period, cfg.period.end())?;
    Ok(SimOutcome { market, stats })
}
