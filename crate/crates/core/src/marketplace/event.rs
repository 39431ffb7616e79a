//! The hash-chained event log every state change goes through.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::billing::{License, Period, UsageEvent};
use crate::canonical::{Digest, Encoder};
use crate::compliance::{ComplianceError, LicenseManifest};
use crate::registry::{ListingDraft, PricingTerms};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "kebab-case")]
pub enum Event {
    Publish {
        provider_id: String,
        bundle_sha256: String,
        draft: ListingDraft,
        manifest: LicenseManifest,
    },
    PriceUpdate {
        listing_id: String,
        provider_id: String,
        terms: PricingTerms,
    },
    Delist {
        listing_id: String,
        provider_id: String,
    },
    LicenseGrant {
        license: License,
        months: u32,
    },
    Usage {
        event: UsageEvent,
    },
    PeriodClose {
        period: Period,
    },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::Publish { .. } => "publish",
            Event::PriceUpdate { .. } => "price-update",
            Event::Delist { .. } => "delist",
            Event::LicenseGrant { .. } => "license-grant",
            Event::Usage { .. } => "usage",
            Event::PeriodClose { .. } => "period-close",
        }
    }

    fn payload(&self) -> Value {
        let mut tagged = serde_json::to_value(self).expect("event serializes");
        tagged
            .get_mut("payload")
            .map(Value::take)
            .expect("adjacently tagged")
    }

    fn from_parts(kind: &str, payload: &Value) -> Result<Self, String> {
        serde_json::from_value(serde_json::json!({ "kind": kind, "payload": payload }))
            .map_err(|e| e.to_string())
    }
}

/// One line of `events.jsonl`. The payload is stored as a JSON value whose
/// object keys are sorted, so its rendering is canonical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventLogEntry {
    pub seq: u64,
    pub timestamp: i64,
    pub kind: String,
    pub payload: Value,
    pub prev_hash: Digest,
    pub record_hash: Digest,
}

impl EventLogEntry {
    pub fn compute_hash(&self) -> Digest {
        Encoder::new()
            .u64(self.seq)
            .i64(self.timestamp)
            .str(&self.kind)
            .str(&serde_json::to_string(&self.payload).expect("value serializes"))
            .digest(&self.prev_hash)
            .hash()
    }

    pub fn event(&self) -> Result<Event, String> {
        Event::from_parts(&self.kind, &self.payload)
    }

    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("entry serializes");
        line.push('\n');
        line
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    entries: Vec<EventLogEntry>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[EventLogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn head(&self) -> Digest {
        self.entries
            .last()
            .map_or_else(Digest::genesis, |e| e.record_hash)
    }

    pub fn last_timestamp(&self) -> Option<i64> {
        self.entries.last().map(|e| e.timestamp)
    }

    /// Builds the entry that would follow the current head.
    pub fn next_entry(&self, timestamp: i64, event: &Event) -> EventLogEntry {
        let mut entry = EventLogEntry {
            seq: self.entries.len() as u64,
            timestamp,
            kind: event.kind().to_string(),
            payload: event.payload(),
            prev_hash: self.head(),
            record_hash: Digest([0; 32]),
        };
        entry.record_hash = entry.compute_hash();
        entry
    }

    pub(crate) fn push(&mut self, entry: EventLogEntry) {
        debug_assert_eq!(entry.seq, self.entries.len() as u64);
        self.entries.push(entry);
    }

    pub fn from_entries(entries: Vec<EventLogEntry>) -> Self {
        Self { entries }
    }

    /// Index of the first entry whose link or hash fails, if any.
    pub fn first_broken(&self) -> Option<usize> {
        let mut prev = Digest::genesis();
        for (i, e) in self.entries.iter().enumerate() {
            if e.seq != i as u64 || e.prev_hash != prev || e.compute_hash() != e.record_hash {
                return Some(i);
            }
            prev = e.record_hash;
        }
        None
    }

    pub fn verify_chain(&self) -> bool {
        self.first_broken().is_none()
    }

    pub fn to_jsonl(&self) -> String {
        self.entries.iter().map(EventLogEntry::to_line).collect()
    }

    /// Strict parse: every line must be the canonical rendering of its entry.
    pub fn from_jsonl(text: &str) -> Result<Self, ComplianceError> {
        let entries = crate::compliance::parse_canonical_lines(text, |line| {
            let entry: EventLogEntry = serde_json::from_str(line).map_err(|e| e.to_string())?;
            let canonical = serde_json::to_string(&entry).expect("entry serializes");
            Ok((entry, canonical))
        })?;
        Ok(Self { entries })
    }
}
