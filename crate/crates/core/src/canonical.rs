//! Canonical byte encoding for hashing: fixed field order, integers as
//! 64-bit big-endian, strings as a u64 big-endian byte length followed by
//! UTF-8, digests as their 32 raw bytes.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

/// Tag whose SHA-256 is the `prev_hash` of the first record in every chain.
pub const GENESIS_TAG: &[u8; 12] = b"viz-genesis0";

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn of(bytes: &[u8]) -> Self {
        Self(Sha256::digest(bytes).into())
    }

    pub fn genesis() -> Self {
        Self::of(GENESIS_TAG)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Parses exactly 64 lowercase hex digits.
    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 64 || !s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
            return None;
        }
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).ok()?;
        Some(Self(out))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("not a lowercase sha-256 hex digest: {s:?}")))
    }
}

#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u64(mut self, v: u64) -> Self {
        self.buf.extend(v.to_be_bytes());
        self
    }

    pub fn i64(mut self, v: i64) -> Self {
        self.buf.extend(v.to_be_bytes());
        self
    }

    pub fn str(mut self, s: &str) -> Self {
        self.buf.extend((s.len() as u64).to_be_bytes());
        self.buf.extend_from_slice(s.as_bytes());
        self
    }

    pub fn digest(mut self, d: &Digest) -> Self {
        self.buf.extend_from_slice(&d.0);
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }

    pub fn hash(self) -> Digest {
        Digest::of(&self.buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn genesis_vector() {
        assert_eq!(
            Digest::genesis().to_hex(),
            "30177669d9f8f0b3eac3989be3c5cfea457aac3b796c61910fee118a09bddc1b"
        );
    }

    #[test]
    fn strict_hex() {
        let h = Digest::genesis().to_hex();
        assert_eq!(Digest::from_hex(&h), Some(Digest::genesis()));
        assert_eq!(Digest::from_hex(&h.to_uppercase()), None);
        assert_eq!(Digest::from_hex(&h[1..]), None);
    }

    #[test]
    fn encoding_layout() {
        let bytes = Encoder::new().u64(1).str("ab").i64(-1).finish();
        assert_eq!(
            bytes,
            [0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 2, b'a', b'b', 255, 255, 255, 255, 255, 255, 255, 255]
        );
    }
}
