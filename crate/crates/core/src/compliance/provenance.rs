use serde::{Deserialize, Serialize};

use super::ComplianceError;
use crate::canonical::{Digest, Encoder};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProvenanceRecord {
    pub seq: u64,
    pub adapter_id: String,
    pub base_model_id: String,
    pub manifest_hash: Digest,
    /// UTC seconds.
    pub timestamp: i64,
    pub prev_hash: Digest,
    pub record_hash: Digest,
}

impl ProvenanceRecord {
    /// SHA-256 over every field except `record_hash`, in declaration order.
    pub fn compute_hash(&self) -> Digest {
        Encoder::new()
            .u64(self.seq)
            .str(&self.adapter_id)
            .str(&self.base_model_id)
            .digest(&self.manifest_hash)
            .i64(self.timestamp)
            .digest(&self.prev_hash)
            .hash()
    }
}

/// Append-only chain of publication records. Persisted as one canonical
/// JSON object per line, each line terminated by `\n`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProvenanceLog {
    records: Vec<ProvenanceRecord>,
    /// Prefix length already checked; records are immutable once held.
    verified: usize,
}

impl ProvenanceLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Wraps records without checking them; call [`verify_chain`](Self::verify_chain).
    pub fn from_records(records: Vec<ProvenanceRecord>) -> Self {
        Self { records, verified: 0 }
    }

    pub fn records(&self) -> &[ProvenanceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn head(&self) -> Digest {
        self.records
            .last()
            .map_or_else(Digest::genesis, |r| r.record_hash)
    }

    pub fn find(&self, adapter_id: &str) -> Option<&ProvenanceRecord> {
        self.records.iter().rev().find(|r| r.adapter_id == adapter_id)
    }

    fn check_from(&self, start: usize) -> bool {
        let mut prev = if start == 0 {
            Digest::genesis()
        } else {
            self.records[start - 1].record_hash
        };
        for (i, r) in self.records.iter().enumerate().skip(start) {
            if r.seq != i as u64 || r.prev_hash != prev || r.compute_hash() != r.record_hash {
                return false;
            }
            prev = r.record_hash;
        }
        true
    }

    /// Recomputes every link and record hash.
    pub fn verify_chain(&self) -> bool {
        self.check_from(0)
    }

    fn verify_incremental(&mut self) -> bool {
        if self.check_from(self.verified) {
            self.verified = self.records.len();
            true
        } else {
            false
        }
    }

    pub fn append(
        &mut self,
        adapter_id: &str,
        base_model_id: &str,
        manifest_hash: Digest,
        timestamp: i64,
    ) -> Result<&ProvenanceRecord, ComplianceError> {
        if !self.verify_incremental() {
            return Err(ComplianceError::RefuseAppend);
        }
        let mut record = ProvenanceRecord {
            seq: self.records.len() as u64,
            adapter_id: adapter_id.to_string(),
            base_model_id: base_model_id.to_string(),
            manifest_hash,
            timestamp,
            prev_hash: self.head(),
            record_hash: Digest([0; 32]),
        };
        record.record_hash = record.compute_hash();
        self.records.push(record);
        self.verified = self.records.len();
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn to_jsonl(&self) -> String {
        self.records.iter().map(record_line).collect()
    }

    /// Parses the line format strictly: every line must be byte-identical to
    /// the canonical rendering of the record it decodes to.
    pub fn from_jsonl(text: &str) -> Result<Self, ComplianceError> {
        let records = parse_canonical_lines(text, |line| {
            let record: ProvenanceRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
            let canonical = serde_json::to_string(&record).expect("record serializes");
            Ok((record, canonical))
        })?;
        Ok(Self::from_records(records))
    }
}

fn record_line(r: &ProvenanceRecord) -> String {
    let mut line = serde_json::to_string(r).expect("record serializes");
    line.push('\n');
    line
}

/// Splits `text` into `\n`-terminated lines and decodes each one, rejecting
/// any line that does not re-render to exactly the same bytes.
pub(crate) fn parse_canonical_lines<T>(
    text: &str,
    decode: impl Fn(&str) -> Result<(T, String), String>,
) -> Result<Vec<T>, ComplianceError> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let Some(body) = text.strip_suffix('\n') else {
        return Err(ComplianceError::MalformedLog {
            line: text.matches('\n').count() + 1,
            reason: "missing trailing newline".into(),
        });
    };
    body.split('\n')
        .enumerate()
        .map(|(i, line)| {
            let (value, canonical) =
                decode(line).map_err(|reason| ComplianceError::MalformedLog { line: i + 1, reason })?;
            if canonical != line {
                return Err(ComplianceError::MalformedLog {
                    line: i + 1,
                    reason: "line is not in canonical form".into(),
                });
            }
            Ok(value)
        })
        .collect()
}
