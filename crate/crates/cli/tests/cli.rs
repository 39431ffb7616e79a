use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const FEB_10: &str = "2026-02-10T00:00:00Z";
const MAR_1: &str = "2026-03-01T00:00:00Z";

struct Env {
    dir: tempfile::TempDir,
}

impl Env {
    fn new() -> Self {
        let env = Self { dir: tempfile::tempdir().unwrap() };
        assert!(env.run(None, &["init"]).status.success());
        env
    }

    fn data(&self) -> PathBuf {
        self.dir.path().join("data")
    }

    fn file(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, token: Option<&str>, args: &[&str]) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_viz"));
        cmd.env_remove("VIZ_TOKEN").env("VIZ_DATA_DIR", self.data()).env("VIZ_LOG", "off");
        if let Some(t) = token {
            cmd.args(["--token", t]);
        }
        cmd.args(args).output().unwrap()
    }

    /// Runs in machine mode and parses stdout.
    fn machine(&self, token: Option<&str>, args: &[&str]) -> Value {
        let mut full = vec!["--format", "machine"];
        full.extend_from_slice(args);
        let out = self.run(token, &full);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        serde_json::from_slice(&out.stdout).unwrap()
    }

    fn bundle(&self, adapter: &str, layer: &str) -> PathBuf {
        let path = self.file(&format!("{adapter}.viz"));
        let p = path.to_str().unwrap();
        self.machine(None, &["make-bundle", "--model", "toy-small", "--adapter-id", adapter, "--layer", layer, "-o", p]);
        path
    }

    fn manifest(&self, licenses: &[&str]) -> PathBuf {
        let sources: Vec<Value> = licenses
            .iter()
            .enumerate()
            .map(|(i, l)| {
                serde_json::json!({
                    "uri": format!("https://data.example/{i}"),
                    "license_id": l,
                    "content_hash": "ab".repeat(32),
                })
            })
            .collect();
        let path = self.file(&format!("manifest-{}.json", licenses.join("_")));
        std::fs::write(&path, serde_json::json!({"sources": sources}).to_string()).unwrap();
        path
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn publish_args<'a>(bundle: &'a Path, manifest: &'a Path, terms: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![
        "--now", FEB_10, "publish", "--bundle", s(bundle), "--manifest", s(manifest),
        "--domain", "legal", "--language", "en", "--perf", "0.7",
    ];
    args.extend_from_slice(terms);
    args
}

#[test]
fn publish_prints_listing_id_and_refusals_exit_nonzero() {
    let env = Env::new();
    let bundle = env.bundle("ad-1", "0");
    let bad = env.manifest(&["MIT", "proprietary"]);
    let out = env.run(Some("tok-prov-a"), &publish_args(&bundle, &bad, &["--mode", "metered", "--per-1k", "2000"]));
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("publication-refused") && err.contains("proprietary"), "{err}");

    let good = env.manifest(&["MIT", "CC0-1.0"]);
    let out = env.run(Some("tok-prov-a"), &publish_args(&bundle, &good, &["--mode", "metered", "--per-1k", "2000"]));
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("lst-000001"));

    // Consumers cannot publish; unknown tokens are rejected.
    let other = env.bundle("ad-2", "1");
    let out = env.run(Some("tok-cons-a"), &publish_args(&other, &good, &["--mode", "metered", "--per-1k", "1"]));
    assert!(String::from_utf8_lossy(&out.stderr).contains("forbidden"));
    let out = env.run(Some("nope"), &publish_args(&other, &good, &["--mode", "metered", "--per-1k", "1"]));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unauthorized"));

    let listings = env.machine(None, &["list", "--domain", "legal"]);
    assert_eq!(listings.as_array().unwrap().len(), 1);
    assert_eq!(listings[0]["adapter_id"], "ad-1");
}

#[test]
fn license_infer_and_billing_flow() {
    let env = Env::new();
    let manifest = env.manifest(&["Apache-2.0"]);
    let a = env.bundle("ad-a", "0");
    let b = env.bundle("ad-b", "1");
    let args = publish_args(&a, &manifest, &["--mode", "subscription_metered", "--monthly-fee", "100000", "--per-1k", "5000"]);
    assert_eq!(env.machine(Some("tok-prov-a"), &args)["listing_id"], "lst-000001");
    let args = publish_args(&b, &manifest, &["--mode", "metered", "--per-1k", "2000"]);
    assert_eq!(env.machine(Some("tok-prov-b"), &args)["listing_id"], "lst-000002");

    let infer = ["--now", FEB_10, "infer", "--model", "toy-small", "--adapters", "ad-a,ad-b", "--inputs", "[[0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8],[1,0,0,0,0,0,0,0],[0,0,0,0,0,0,0,-1]]"];
    let out = env.run(Some("tok-cons-a"), &infer);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("payment-required"));
    let usage = env.machine(Some("tok-cons-a"), &["--now", FEB_10, "usage"]);
    assert_eq!(usage["total_units"], 0);

    for l in ["lst-000001", "lst-000002"] {
        env.machine(Some("tok-cons-a"), &["--now", FEB_10, "subscribe", l]);
    }
    let receipt = env.machine(Some("tok-cons-a"), &infer);
    assert_eq!(receipt["units"], 3);
    let amounts: Vec<i64> = receipt["charges"].as_array().unwrap().iter().map(|c| c["amount"].as_i64().unwrap()).collect();
    assert_eq!(amounts, [15, 6]);
    assert_eq!(receipt["outputs"].as_array().unwrap().len(), 3);

    // Invoices wait for the period to end.
    let out = env.run(Some("tok-cons-a"), &["--now", FEB_10, "invoice", "2026-02"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("period-not-elapsed"));
    let invoice = env.machine(Some("tok-cons-a"), &["--now", MAR_1, "invoice", "2026-02"]);
    assert_eq!(invoice["total"], 100_021);

    let mine = env.machine(Some("tok-prov-a"), &["payouts", "2026-02"]);
    assert_eq!((mine[0]["total_gross"].as_i64(), mine[0]["total_net"].as_i64()), (Some(100_015), Some(70_011)));
    let all = env.machine(Some("tok-admin"), &["payouts", "2026-02"]);
    assert_eq!(all.as_array().unwrap().len(), 2);
    assert_eq!(all[1]["total_platform_cut"], 1);
    let out = env.run(Some("tok-cons-a"), &["payouts", "2026-02"]);
    assert_eq!(out.status.code(), Some(1));

    let board = env.machine(None, &["leaderboard", "--period", "2026-02"]);
    assert_eq!(board.as_array().unwrap().len(), 2);
    let suggestion = env.machine(None, &["suggest-price", "lst-000002"]);
    assert_eq!(suggestion["suggested_per_1k_units"].as_i64().unwrap() % 1000, 0);
    let report = env.machine(None, &["verify-log"]);
    assert_eq!(report["events"], 6);
}

#[test]
fn verify_log_fails_on_tampering() {
    let env = Env::new();
    let bundle = env.bundle("ad-1", "0");
    let manifest = env.manifest(&["MIT"]);
    env.machine(Some("tok-prov-a"), &publish_args(&bundle, &manifest, &["--mode", "outright", "--outright-price", "9000000"]));
    env.machine(Some("tok-cons-b"), &["--now", FEB_10, "buy", "lst-000001"]);
    assert!(env.run(None, &["verify-log"]).status.success());

    let events = env.data().join("events.jsonl");
    let text = std::fs::read_to_string(&events).unwrap();
    std::fs::write(&events, text.replace("9000000", "9000001")).unwrap();
    let out = env.run(None, &["verify-log"]);
    assert_eq!(out.status.code(), Some(1));
    // Writers refuse to open the tampered directory as well.
    let out = env.run(Some("tok-prov-a"), &["delist", "lst-000001"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("storage"));
}

#[test]
fn init_refuses_to_overwrite_and_flags_are_validated() {
    let env = Env::new();
    assert_eq!(env.run(None, &["init"]).status.code(), Some(1));
    let out = env.run(Some("tok-prov-a"), &["set-price", "lst-000001", "--mode", "metered", "--per-1k=-5"]);
    assert_eq!(out.status.code(), Some(1));
    let out = env.run(None, &["--now", "yesterday", "list"]);
    assert_eq!(out.status.code(), Some(2));
    let out = env.run(None, &["usage"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--token"));
}
