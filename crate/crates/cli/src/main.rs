//! `viz`: operator command line for the adapter marketplace.
//!
//! Commands work directly on a data directory. Commands that change state
//! take the directory's writer lock, so they cannot run while `viz serve`
//! holds it; read-only commands replay the log without the lock.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use output::Refused;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    /// One JSON document per command on stdout.
    Machine,
}

#[derive(Debug, Parser)]
#[command(name = "viz", version, about = "Operate a Viz adapter marketplace")]
pub struct Cli {
    /// Data directory holding config.toml, the event log and bundles.
    #[arg(long, global = true, env = "VIZ_DATA_DIR", default_value = "./viz-data")]
    pub data_dir: PathBuf,
    /// Bearer token identifying the acting account.
    #[arg(long, global = true, env = "VIZ_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Clock override: unix seconds or RFC 3339 (defaults to the system clock).
    #[arg(long, global = true, value_parser = parse_time)]
    pub now: Option<i64>,
    /// Port for `serve` (defaults to the configured port).
    #[arg(long, global = true)]
    pub port: Option<u16>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a data directory with a configuration file.
    Init {
        /// Copy this config.toml instead of writing the demo configuration.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// List the configured base models.
    Models,
    /// Write a random adapter bundle for a configured base model.
    MakeBundle(MakeBundle),
    /// Validate and publish an adapter bundle.
    Publish(Publish),
    /// Search active listings.
    List(ListArgs),
    /// Replace a listing's pricing terms.
    SetPrice {
        listing_id: String,
        #[command(flatten)]
        terms: TermsArgs,
    },
    /// Withdraw a listing.
    Delist { listing_id: String },
    /// Subscribe to a listing for whole calendar months.
    Subscribe {
        listing_id: String,
        #[arg(long, default_value_t = 1)]
        months: u32,
    },
    /// Buy a perpetual license for an outright listing.
    Buy { listing_id: String },
    /// Run inference with licensed adapters.
    Infer(InferArgs),
    /// Usage events of the acting account.
    Usage {
        #[arg(long)]
        period: Option<String>,
    },
    /// Close a billing period (if needed) and print the account's invoice.
    Invoice { period: String },
    /// Payout statements; admins see every provider unless one is named.
    Payouts {
        period: String,
        #[arg(long)]
        provider: Option<String>,
    },
    /// Listings ranked by billed units.
    Leaderboard {
        #[arg(long)]
        period: Option<String>,
        #[arg(short, long, default_value_t = 10)]
        n: usize,
    },
    /// Demand-driven per-1k price suggestion for a listing.
    SuggestPrice { listing_id: String },
    /// Verify the event and provenance chains and replay them.
    VerifyLog,
    /// Run the HTTP gateway on this data directory.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

#[derive(Debug, Args)]
pub struct MakeBundle {
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub adapter_id: String,
    #[arg(long, default_value_t = 0)]
    pub layer: usize,
    #[arg(long, default_value_t = 4)]
    pub rank: usize,
    /// Defaults to the rank.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub bits: u8,
    #[arg(long, default_value_t = 64)]
    pub block_size: usize,
    /// Store plain f32 block scales instead of double-quantizing them.
    #[arg(long)]
    pub no_dq: bool,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Publish {
    #[arg(long)]
    pub bundle: PathBuf,
    /// License manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub domain: String,
    #[arg(long)]
    pub language: String,
    #[arg(long)]
    pub perf: f64,
    #[command(flatten)]
    pub terms: TermsArgs,
}

/// Pricing terms; amounts are integer micro-USD.
#[derive(Debug, Clone, Args)]
pub struct TermsArgs {
    /// outright, subscription, metered or subscription_metered.
    #[arg(long)]
    pub mode: String,
    #[arg(long, default_value_t = 0)]
    pub outright_price: i64,
    #[arg(long, default_value_t = 0)]
    pub monthly_fee: i64,
    #[arg(long, default_value_t = 0)]
    pub per_1k: i64,
}

#[derive(Debug, Args)]
pub struct ListArgs {
    #[arg(long)]
    pub domain: Option<String>,
    #[arg(long)]
    pub language: Option<String>,
    #[arg(long)]
    pub min_perf: Option<f64>,
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: String,
    /// Adapter ids, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub adapters: Vec<String>,
    /// Input vectors as a JSON array of arrays.
    #[arg(long, conflicts_with = "inputs_file")]
    pub inputs: Option<String>,
    #[arg(long)]
    pub inputs_file: Option<PathBuf>,
}

fn parse_time(s: &str) -> Result<i64, String> {
    if let Ok(secs) = s.parse::<i64>() {
        return Ok(secs);
    }
    chrono::DateTime::parse_from_rfc3339(s)
        .map(|t| t.timestamp())
        .map_err(|e| format!("expected unix seconds or RFC 3339: {e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("VIZ_LOG").unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let format = cli.format;
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            match (format, err.downcast_ref::<Refused>()) {
                (Format::Machine, Some(r)) => {
                    eprintln!("{}", serde_json::to_string(&r.0).expect("error body serializes"))
                }
                (Format::Machine, None) => eprintln!(
                    "{}",
                    serde_json::json!({"error": "cli", "message": format!("{err:#}")})
                ),
                (Format::Text, _) => eprintln!("error: {err:#}"),
            }
            ExitCode::FAILURE
        }
    }
}
