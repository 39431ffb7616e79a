use std::fmt::Write as _;
use std::fs;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use serde_json::json;
use viz_core::billing::{LicenseKind, Period};
use viz_core::bundle::{encode_adapter_bundle, QuantSettings};
use viz_core::compliance::LicenseManifest;
use viz_core::fixtures::random_adapter;
use viz_core::marketplace::{
    read_event_log, read_provenance, Account, DataDir, MarketConfig, Marketplace, Role,
};
use viz_core::model_store::InferenceRequest;
use viz_core::money::Money;
use viz_core::registry::{AdapterListing, Category, ListingDraft, ListingFilter, PricingMode, PricingTerms};
use viz_gateway::api::{ModelInfo, PriceSuggestion, UsageReport};
use viz_gateway::{AppState, SystemClock};

use crate::output::{emit, Refused};
use crate::{Cli, Command, InferArgs, MakeBundle, Publish, TermsArgs};

struct Ctx {
    dir: DataDir,
    token: Option<String>,
    format: crate::Format,
    now: i64,
}

impl Ctx {
    fn writer(&self) -> Result<Marketplace> {
        Ok(Marketplace::open(&self.dir).map_err(Refused::from)?)
    }

    fn reader(&self) -> Result<Marketplace> {
        Ok(Marketplace::open_read_only(&self.dir).map_err(Refused::from)?)
    }

    /// The account behind `--token`.
    fn caller(&self, market: &Marketplace) -> Result<Account> {
        let token = self
            .token
            .as_deref()
            .ok_or_else(|| anyhow!("this command needs --token (or VIZ_TOKEN)"))?;
        market
            .authenticate(token)
            .cloned()
            .ok_or_else(|| Refused(viz_gateway::ApiError::unauthorized().body).into())
    }

    fn period(&self, p: Option<&str>) -> Result<Period> {
        match p {
            Some(s) => s.parse().map_err(|e| anyhow!("{e}")),
            None => Ok(Period::containing(self.now)),
        }
    }

    fn emit<T: Serialize>(&self, value: &T, text: impl FnOnce(&T) -> String) {
        emit(self.format, value, text)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx {
        dir: DataDir::new(&cli.data_dir),
        token: cli.token,
        format: cli.format,
        now: cli.now.unwrap_or_else(|| chrono::Utc::now().timestamp()),
    };
    match cli.command {
        Command::Init { config } => init(&ctx, config),
        Command::Models => models(&ctx),
        Command::MakeBundle(args) => make_bundle(&ctx, args),
        Command::Publish(args) => publish(&ctx, args),
        Command::List(args) => {
            let market = ctx.reader()?;
            let filter = ListingFilter {
                domain: args.domain,
                language: args.language,
                min_perf: args.min_perf,
                mode: args.mode.as_deref().map(parse_mode).transpose()?,
            };
            let hits: Vec<AdapterListing> = market.search(&filter).into_iter().cloned().collect();
            ctx.emit(&hits, |hits| {
                let mut out = String::new();
                for l in hits {
                    let _ = writeln!(
                        out,
                        "{}  {:<16} {:<10} {:<4} perf {:.2}  {}  by {}",
                        l.listing_id,
                        l.adapter_id,
                        l.category.domain,
                        l.category.language,
                        l.category.perf_score,
                        describe_terms(&l.terms),
                        l.provider_id
                    );
                }
                if hits.is_empty() {
                    out.push_str("no matching listings");
                }
                out
            });
            Ok(())
        }
        Command::SetPrice { listing_id, terms } => {
            let mut market = ctx.writer()?;
            let caller = ctx.caller(&market)?;
            let listing = market
                .update_price(&caller.account_id, &listing_id, terms_from(&terms)?, ctx.now)
                .map_err(Refused::from)?;
            ctx.emit(&json!({"listing_id": listing.listing_id, "terms": listing.terms}), |_| {
                format!("{}: {}", listing.listing_id, describe_terms(&listing.terms))
            });
            Ok(())
        }
        Command::Delist { listing_id } => {
            let mut market = ctx.writer()?;
            let caller = ctx.caller(&market)?;
            market
                .delist(&caller.account_id, &listing_id, ctx.now)
                .map_err(Refused::from)?;
            ctx.emit(&json!({"listing_id": listing_id, "status": "delisted"}), |_| {
                format!("{listing_id} delisted")
            });
            Ok(())
        }
        Command::Subscribe { listing_id, months } => license(&ctx, &listing_id, LicenseKind::Subscription, months),
        Command::Buy { listing_id } => license(&ctx, &listing_id, LicenseKind::Outright, 1),
        Command::Infer(args) => infer(&ctx, args),
        Command::Usage { period } => {
            let market = ctx.reader()?;
            let caller = ctx.caller(&market)?;
            let period = ctx.period(period.as_deref())?;
            let events: Vec<_> = market.usage(&caller.account_id, period).into_iter().cloned().collect();
            let report = UsageReport {
                account_id: caller.account_id,
                period,
                total_units: events.iter().map(|e| e.units).sum(),
                total_charges: events.iter().map(|e| e.total()).sum(),
                events,
            };
            ctx.emit(&report, |r| {
                let mut out = String::new();
                for e in &r.events {
                    let _ = writeln!(
                        out,
                        "#{:<5} {} {:>6} units  {:>12}  [{}]",
                        e.seq,
                        e.model_id,
                        e.units,
                        e.total().to_string(),
                        e.adapter_ids.join(", ")
                    );
                }
                let _ = write!(out, "{} {}: {} units, {}", r.account_id, r.period, r.total_units, r.total_charges);
                out
            });
            Ok(())
        }
        Command::Invoice { period } => {
            let period = ctx.period(Some(&period))?;
            let mut market = ctx.writer()?;
            let caller = ctx.caller(&market)?;
            let invoice = market
                .close_period(&caller.account_id, period, ctx.now)
                .map_err(Refused::from)?;
            ctx.emit(&invoice, |inv| {
                let mut out = format!("invoice {} for {}\n", inv.period, inv.account_id);
                for l in &inv.lines {
                    let _ = writeln!(
                        out,
                        "  {}  {:>8} units  metered {}  subscriptions {}  outright {}  = {}",
                        l.listing_id, l.units, l.metered, l.subscription_fees, l.outright_purchases, l.subtotal
                    );
                }
                let _ = write!(out, "total {}", inv.total);
                out
            });
            Ok(())
        }
        Command::Payouts { period, provider } => payouts(&ctx, &period, provider),
        Command::Leaderboard { period, n } => {
            let market = ctx.reader()?;
            let period = ctx.period(period.as_deref())?;
            let board = market.leaderboard(period, n);
            ctx.emit(&board, |b| {
                b.iter()
                    .map(|e| format!("{:>3}. {}  {} units\n", e.rank, e.listing_id, e.units))
                    .collect::<String>()
            });
            Ok(())
        }
        Command::SuggestPrice { listing_id } => {
            let market = ctx.reader()?;
            let suggested = market.suggest_price(&listing_id).map_err(Refused::from)?;
            let current = market
                .registry()
                .listing(&listing_id)
                .map(|l| l.terms.per_1k_units)
                .unwrap_or_default();
            let s = PriceSuggestion {
                listing_id,
                current_per_1k_units: current,
                suggested_per_1k_units: suggested,
            };
            ctx.emit(&s, |s| {
                format!(
                    "{}: per 1k units {} -> suggested {} ({} micro-USD)",
                    s.listing_id,
                    s.current_per_1k_units,
                    s.suggested_per_1k_units,
                    s.suggested_per_1k_units.micros()
                )
            });
            Ok(())
        }
        Command::VerifyLog => verify_log(&ctx),
        Command::Serve { host } => serve(&ctx, &host, cli.port),
    }
}

fn init(ctx: &Ctx, config: Option<std::path::PathBuf>) -> Result<()> {
    let config = match config {
        Some(path) => {
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            MarketConfig::from_toml(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?
        }
        None => MarketConfig::demo(),
    };
    Marketplace::init_data_dir(&ctx.dir, &config).map_err(Refused::from)?;
    ctx.emit(
        &json!({"data_dir": ctx.dir.root(), "accounts": config.accounts.len(), "models": config.models.len()}),
        |_| {
            format!(
                "initialized {} ({} accounts, {} models)",
                ctx.dir.root().display(),
                config.accounts.len(),
                config.models.len()
            )
        },
    );
    Ok(())
}

fn models(ctx: &Ctx) -> Result<()> {
    let market = ctx.reader()?;
    let infos: Vec<ModelInfo> = market
        .models()
        .map(|m| ModelInfo {
            model_id: m.model_id.clone(),
            layer_dims: m.layer_dims.clone(),
        })
        .collect();
    ctx.emit(&infos, |infos| {
        infos
            .iter()
            .map(|m| format!("{}  dims {:?}\n", m.model_id, m.layer_dims))
            .collect()
    });
    Ok(())
}

fn make_bundle(ctx: &Ctx, args: MakeBundle) -> Result<()> {
    let config = Marketplace::load_config(&ctx.dir).map_err(Refused::from)?;
    let spec = config
        .models
        .iter()
        .find(|m| m.model_id == args.model)
        .ok_or_else(|| anyhow!("no model {} in {}", args.model, ctx.dir.config_path().display()))?;
    let layers = spec.layer_dims.len().saturating_sub(1);
    if args.layer >= layers {
        bail!("model {} has {layers} layers; --layer must be below that", spec.model_id);
    }
    let shape = (spec.layer_dims[args.layer + 1], spec.layer_dims[args.layer]);
    let alpha = args.alpha.unwrap_or(args.rank as f64);
    let adapter = random_adapter(&args.adapter_id, shape, args.layer, args.rank, alpha, args.seed)?;
    let settings = QuantSettings {
        codebook_bits: args.bits,
        block_size: args.block_size,
        chunk_size: if args.no_dq { None } else { QuantSettings::default().chunk_size },
    };
    let bytes = encode_adapter_bundle(&adapter, &spec.model_id, settings)?;
    fs::write(&args.out, &bytes).with_context(|| format!("writing {}", args.out.display()))?;
    ctx.emit(
        &json!({"path": args.out, "bytes": bytes.len(), "adapter_id": args.adapter_id, "shape": [shape.0, shape.1]}),
        |_| {
            format!(
                "wrote {} ({} bytes): adapter {} on {} layer {} ({}x{}, rank {})",
                args.out.display(),
                bytes.len(),
                args.adapter_id,
                spec.model_id,
                args.layer,
                shape.0,
                shape.1,
                args.rank
            )
        },
    );
    Ok(())
}

fn publish(ctx: &Ctx, args: Publish) -> Result<()> {
    let bundle = fs::read(&args.bundle).with_context(|| format!("reading {}", args.bundle.display()))?;
    let text = fs::read_to_string(&args.manifest).with_context(|| format!("reading {}", args.manifest.display()))?;
    let manifest: LicenseManifest =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", args.manifest.display()))?;
    let draft = ListingDraft {
        category: Category {
            domain: args.domain,
            language: args.language,
            perf_score: args.perf,
        },
        terms: terms_from(&args.terms)?,
    };
    let mut market = ctx.writer()?;
    let caller = ctx.caller(&market)?;
    let listing = market
        .publish(&caller.account_id, &bundle, &draft, &manifest, ctx.now)
        .map_err(Refused::from)?;
    ctx.emit(&json!({"listing_id": listing.listing_id, "listing": listing}), |_| {
        format!("{} (adapter {}, provenance #{})", listing.listing_id, listing.adapter_id, listing.provenance_seq)
    });
    Ok(())
}

fn license(ctx: &Ctx, listing_id: &str, kind: LicenseKind, months: u32) -> Result<()> {
    let mut market = ctx.writer()?;
    let caller = ctx.caller(&market)?;
    let license = market
        .grant_license(&caller.account_id, listing_id, kind, months, ctx.now)
        .map_err(Refused::from)?;
    ctx.emit(&json!({"license_key": license.license_key, "license": license}), |_| {
        format!("{} for {} ({})", license.license_key, license.listing_id, license.price)
    });
    Ok(())
}

fn infer(ctx: &Ctx, args: InferArgs) -> Result<()> {
    let raw = match (args.inputs, args.inputs_file) {
        (Some(s), _) => s,
        (None, Some(p)) => fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?,
        (None, None) => bail!("give --inputs or --inputs-file"),
    };
    let inputs: Vec<Vec<f64>> = serde_json::from_str(&raw).context("inputs must be a JSON array of arrays")?;
    let request = InferenceRequest {
        model_id: args.model,
        adapter_ids: args.adapters.into_iter().filter(|a| !a.is_empty()).collect(),
        inputs,
    };
    let mut market = ctx.writer()?;
    let caller = ctx.caller(&market)?;
    let receipt = market
        .infer(&caller.account_id, &request, ctx.now)
        .map_err(Refused::from)?;
    ctx.emit(&receipt, |r| {
        let mut out = String::new();
        for y in &r.outputs {
            let cells: Vec<String> = y.iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(out, "[{}]", cells.join(", "));
        }
        let _ = write!(out, "usage #{}: {} units", r.usage_seq, r.units);
        for c in &r.charges {
            let _ = write!(out, ", {} {}", c.adapter_id, c.amount);
        }
        out
    });
    Ok(())
}

fn payouts(ctx: &Ctx, period: &str, provider: Option<String>) -> Result<()> {
    let market = ctx.reader()?;
    let caller = ctx.caller(&market)?;
    let period = ctx.period(Some(period))?;
    let statements = match (caller.role, provider) {
        (Role::Admin, None) => market.all_payouts(period),
        (Role::Admin, Some(p)) => market.payout_statement(&p, period).map(|s| vec![s]),
        (Role::Provider, p) if p.as_ref().is_none_or(|p| *p == caller.account_id) => {
            market.payout_statement(&caller.account_id, period).map(|s| vec![s])
        }
        _ => bail!("forbidden: payout statements are visible to their provider and to admins"),
    }
    .map_err(Refused::from)?;
    ctx.emit(&statements, |all| {
        let mut out = String::new();
        for s in all {
            let _ = writeln!(
                out,
                "{} {}: gross {}  platform cut {}  net {}",
                s.provider_id, s.period, s.total_gross, s.total_platform_cut, s.total_net
            );
            for l in &s.lines {
                let _ = writeln!(out, "  {}  gross {}  cut {}  net {}", l.listing_id, l.gross, l.platform_cut, l.net);
            }
        }
        out
    });
    Ok(())
}

fn verify_log(ctx: &Ctx) -> Result<()> {
    let events = read_event_log(&ctx.dir).map_err(Refused::from)?;
    if let Some(i) = events.first_broken() {
        bail!("event log chain breaks at entry {i}");
    }
    let provenance = read_provenance(&ctx.dir).map_err(Refused::from)?;
    if !provenance.verify_chain() {
        bail!("provenance chain does not verify");
    }
    let market = ctx.reader()?;
    let report = json!({
        "status": "ok",
        "events": market.event_log().len(),
        "log_head": market.event_log().head().to_hex(),
        "provenance_records": market.provenance().records().len(),
        "provenance_head": market.provenance().head().to_hex(),
        "listings": market.registry().listings().count(),
    });
    ctx.emit(&report, |r| {
        format!(
            "ok: {} events (head {}), {} provenance records (head {}), {} listings",
            r["events"],
            r["log_head"].as_str().unwrap_or_default(),
            r["provenance_records"],
            r["provenance_head"].as_str().unwrap_or_default(),
            r["listings"]
        )
    });
    Ok(())
}

fn serve(ctx: &Ctx, host: &str, port: Option<u16>) -> Result<()> {
    let market = ctx.writer()?;
    let port = port.unwrap_or(market.config().port);
    let state = AppState::new(market, Arc::new(SystemClock));
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .with_context(|| format!("binding {host}:{port}"))?;
        viz_gateway::serve(listener, state).await?;
        Ok(())
    })
}

fn parse_mode(s: &str) -> Result<PricingMode> {
    PricingMode::parse(s).ok_or_else(|| {
        anyhow!("unknown pricing mode {s:?} (outright, subscription, metered, subscription_metered)")
    })
}

fn terms_from(args: &TermsArgs) -> Result<PricingTerms> {
    let terms = PricingTerms {
        mode: parse_mode(&args.mode)?,
        outright_price: Money(args.outright_price),
        monthly_fee: Money(args.monthly_fee),
        per_1k_units: Money(args.per_1k),
    };
    terms.validate().map_err(|e| anyhow!("{e}"))?;
    Ok(terms)
}

fn describe_terms(t: &PricingTerms) -> String {
    match t.mode {
        PricingMode::Outright => format!("outright {}", t.outright_price),
        PricingMode::Subscription => format!("{}/month", t.monthly_fee),
        PricingMode::Metered => format!("{}/1k units", t.per_1k_units),
        PricingMode::SubscriptionMetered => format!("{}/month + {}/1k units", t.monthly_fee, t.per_1k_units),
    }
}
