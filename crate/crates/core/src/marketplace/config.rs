use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::billing::DEFAULT_PLATFORM_SHARE;
use crate::compliance::default_allowlist;
use crate::money::Ratio;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Provider,
    Consumer,
    Admin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub account_id: String,
    pub role: Role,
    pub display_name: String,
    /// Static bearer token.
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: String,
    pub seed: u64,
    pub layer_dims: Vec<usize>,
}

fn default_port() -> u16 {
    8080
}

fn default_share() -> Ratio {
    DEFAULT_PLATFORM_SHARE
}

/// Deployment configuration, stored as `config.toml` in the data directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketConfig {
    #[serde(default = "default_port")]
    pub port: u16,
    #[serde(default = "default_allowlist")]
    pub license_allowlist: BTreeSet<String>,
    #[serde(default = "default_share")]
    pub platform_share: Ratio,
    #[serde(default)]
    pub accounts: Vec<Account>,
    #[serde(default)]
    pub models: Vec<ModelSpec>,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            port: default_port(),
            license_allowlist: default_allowlist(),
            platform_share: default_share(),
            accounts: Vec::new(),
            models: Vec::new(),
        }
    }
}

impl MarketConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.platform_share.den == 0 || self.platform_share.num > self.platform_share.den {
            return Err("platform_share must be a fraction in [0, 1]".into());
        }
        let mut ids = BTreeSet::new();
        let mut tokens = BTreeSet::new();
        for a in &self.accounts {
            if !ids.insert(&a.account_id) {
                return Err(format!("duplicate account id {}", a.account_id));
            }
            if a.token.is_empty() || !tokens.insert(&a.token) {
                return Err(format!("account {} needs a unique non-empty token", a.account_id));
            }
        }
        let mut models = BTreeSet::new();
        for m in &self.models {
            if !models.insert(&m.model_id) {
                return Err(format!("duplicate model id {}", m.model_id));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// A small ready-to-run marketplace: one admin, two providers, two
    /// consumers and two toy models.
    pub fn demo() -> Self {
        let account = |id: &str, role, name: &str| Account {
            account_id: id.into(),
            role,
            display_name: name.into(),
            token: format!("tok-{id}"),
        };
        Self {
            accounts: vec![
                account("admin", Role::Admin, "Operator"),
                account("prov-a", Role::Provider, "Provider A"),
                account("prov-b", Role::Provider, "Provider B"),
                account("cons-a", Role::Consumer, "Consumer A"),
                account("cons-b", Role::Consumer, "Consumer B"),
            ],
            models: vec![
                ModelSpec {
                    model_id: "toy-small".into(),
                    seed: 1,
                    layer_dims: vec![8, 16, 4],
                },
                ModelSpec {
                    model_id: "toy-base".into(),
                    seed: 7,
                    layer_dims: vec![16, 32, 16, 8],
                },
            ],
            ..Self::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_round_trips_through_toml() {
        let cfg = MarketConfig::demo();
        let back = MarketConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn defaults_apply() {
        let cfg = MarketConfig::from_toml("").unwrap();
        assert_eq!(cfg.platform_share, Ratio { num: 30, den: 100 });
        assert!(cfg.license_allowlist.contains("CC0-1.0"));
        assert_eq!(cfg.port, 8080);
    }

    #[test]
    fn rejects_duplicates() {
        let mut cfg = MarketConfig::demo();
        cfg.accounts[1].token = cfg.accounts[0].token.clone();
        assert!(cfg.validate().is_err());
        let mut cfg = MarketConfig::demo();
        cfg.platform_share = Ratio { num: 3, den: 2 };
        assert!(cfg.validate().is_err());
    }
}
