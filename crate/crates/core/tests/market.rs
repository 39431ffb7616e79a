use std::collections::BTreeSet;

use viz_core::compliance::{default_allowlist, ProvenanceLog};
use viz_core::marketplace::{BlobStore, EventLog, Marketplace, MemoryBlobs, NullSink};
use viz_core::money::Money;
use viz_core::sim::{run_simulation, sim_market_config, SimConfig};

fn small() -> SimConfig {
    SimConfig {
        requests: 300,
        ..SimConfig::default()
    }
}

fn reports(m: &Marketplace, cfg: &SimConfig) -> String {
    let invoices = m.all_invoices(cfg.period);
    let payouts = m.all_payouts(cfg.period).unwrap();
    serde_json::to_string(&(invoices, payouts)).unwrap()
}

#[test]
fn money_is_conserved() {
    let cfg = small();
    let out = run_simulation(&cfg).unwrap();
    assert!(out.stats.served > 200 && out.stats.refused > 0, "{:?}", out.stats);
    let billed: Money = out.market.all_invoices(cfg.period).iter().map(|i| i.total).sum();
    let payouts = out.market.all_payouts(cfg.period).unwrap();
    let net: Money = payouts.iter().map(|p| p.total_net).sum();
    let cut: Money = payouts.iter().map(|p| p.total_platform_cut).sum();
    assert!(billed > Money::ZERO);
    assert_eq!(net + cut, billed);
}

#[test]
fn replay_reproduces_reports_byte_for_byte() {
    let cfg = small();
    let out = run_simulation(&cfg).unwrap();
    let text = out.market.event_log().to_jsonl();
    let log = EventLog::from_jsonl(&text).unwrap();
    let mut blobs = MemoryBlobs::default();
    for l in out.market.registry().listings() {
        blobs.put(&out.market.blobs().get(&l.bundle_sha256).unwrap().unwrap()).unwrap();
    }
    let replayed = Marketplace::replay(sim_market_config(&cfg), &log, Box::new(blobs), Box::new(NullSink)).unwrap();
    assert_eq!(reports(&replayed, &cfg), reports(&out.market, &cfg));
    assert_eq!(replayed.event_log().to_jsonl(), text);
}

#[test]
fn every_single_byte_tamper_is_detected() {
    let out = run_simulation(&small()).unwrap();
    let prov = out.market.provenance().to_jsonl();
    let events = out.market.event_log().to_jsonl();
    let mut seen = BTreeSet::new();
    let mut state = 0x9e37_79b9_7f4a_7c15_u64;
    for _ in 0..200 {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        for (name, text) in [("provenance", &prov), ("events", &events)] {
            let mut bytes = text.clone().into_bytes();
            let pos = (state >> 11) as usize % bytes.len();
            let flip = 1u8 << ((state >> 3) % 7);
            bytes[pos] ^= flip;
            seen.insert(pos);
            let Ok(s) = String::from_utf8(bytes) else { continue };
            let accepted = match name {
                "provenance" => ProvenanceLog::from_jsonl(&s).is_ok_and(|l| l.verify_chain()),
                _ => EventLog::from_jsonl(&s).is_ok_and(|l| l.verify_chain()),
            };
            assert!(!accepted, "{name}: flip {flip:#x} at {pos} went unnoticed");
        }
    }
    assert!(seen.len() > 150);
}

#[test]
fn allowlist_is_the_documented_default() {
    let a = default_allowlist();
    assert!(a.contains("CC-BY-4.0") && a.contains("MIT") && !a.contains("GPL-3.0"));
}
