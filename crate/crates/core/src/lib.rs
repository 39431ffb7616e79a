//! Core of the Viz adapter marketplace: quantized LoRA adapter math, toy
//! base models, license compliance and provenance, the listing registry,
//! exact billing, and the event-sourced [`Marketplace`] that ties them
//! together.

pub mod adapter_math;
pub mod model_store;
pub mod bundle;
pub mod canonical;
pub mod compliance;
pub mod money;
pub mod registry;
pub mod billing;
pub mod marketplace;
pub mod fixtures;
pub mod sim;

pub use adapter_math::{LoraAdapter, Matrix};
pub use billing::{Invoice, License, LicenseKind, PayoutStatement, Period, UsageEvent};
pub use compliance::{LicenseManifest, ProvenanceLog, ProvenanceRecord, Violation};
pub use marketplace::{Account, InferenceReceipt, MarketConfig, MarketError, Marketplace, Role};
pub use model_store::{BaseModel, InferenceRequest};
pub use money::{Money, Ratio};
pub use registry::{AdapterListing, ListingDraft, PricingMode, PricingTerms};
