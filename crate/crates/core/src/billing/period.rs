use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDate, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A UTC calendar month, written `YYYY-MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Period {
    year: i32,
    month: u32,
}

impl Period {
    pub fn new(year: i32, month: u32) -> Option<Self> {
        NaiveDate::from_ymd_opt(year, month, 1).map(|_| Self { year, month })
    }

    pub fn containing(timestamp: i64) -> Self {
        let dt = DateTime::<Utc>::from_timestamp(timestamp, 0).expect("timestamp in range");
        Self {
            year: dt.year(),
            month: dt.month(),
        }
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn month(&self) -> u32 {
        self.month
    }

    pub fn next(&self) -> Self {
        if self.month == 12 {
            Self { year: self.year + 1, month: 1 }
        } else {
            Self { year: self.year, month: self.month + 1 }
        }
    }

    /// First second of the month.
    pub fn start(&self) -> i64 {
        Utc.with_ymd_and_hms(self.year, self.month, 1, 0, 0, 0)
            .single()
            .expect("valid month")
            .timestamp()
    }

    /// First second after the month.
    pub fn end(&self) -> i64 {
        self.next().start()
    }

    pub fn contains(&self, timestamp: i64) -> bool {
        (self.start()..self.end()).contains(&timestamp)
    }

    /// Whether `[start, end)` shares at least one second with this month.
    pub fn overlaps(&self, start: i64, end: i64) -> bool {
        start < self.end() && end > self.start()
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("invalid period {0:?}: expected YYYY-MM")]
pub struct ParsePeriodError(String);

impl FromStr for Period {
    type Err = ParsePeriodError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParsePeriodError(s.to_string());
        let (y, m) = s.split_once('-').ok_or_else(err)?;
        if y.len() != 4 || m.len() != 2 {
            return Err(err());
        }
        let year = y.parse().map_err(|_| err())?;
        let month = m.parse().map_err(|_| err())?;
        Period::new(year, month).ok_or_else(err)
    }
}

impl Serialize for Period {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Period {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds() {
        let p: Period = "2026-02".parse().unwrap();
        assert_eq!(p.start(), 1_769_904_000);
        assert_eq!(p.end() - p.start(), 28 * 86_400);
        assert!(p.contains(p.start()));
        assert!(!p.contains(p.end()));
        assert_eq!(Period::containing(p.end() - 1), p);
        assert_eq!("2026-12".parse::<Period>().unwrap().next().to_string(), "2027-01");
    }

    #[test]
    fn parse_errors() {
        for bad in ["2026-13", "2026-1", "26-01", "2026/01", ""] {
            assert!(bad.parse::<Period>().is_err(), "{bad}");
        }
    }

    #[test]
    fn overlap() {
        let p: Period = "2026-03".parse().unwrap();
        assert!(p.overlaps(p.start() - 10, p.start() + 1));
        assert!(!p.overlaps(p.start() - 10, p.start()));
        assert!(!p.overlaps(p.end(), p.end() + 100));
    }
}
