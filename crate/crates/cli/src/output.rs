use std::fmt;

use serde::Serialize;
use viz_core::marketplace::MarketError;
use viz_gateway::{ApiError, ErrorBody};

use crate::Format;

/// A refusal from the marketplace, carrying the same code the HTTP API uses.
#[derive(Debug)]
pub struct Refused(pub ErrorBody);

impl fmt::Display for Refused {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.0.error, self.0.message)?;
        for v in &self.0.violations {
            write!(f, "\n  source {}: license {:?} is not allowed", v.index, v.license_id)?;
        }
        Ok(())
    }
}

impl std::error::Error for Refused {}

impl From<MarketError> for Refused {
    fn from(e: MarketError) -> Self {
        Refused(ApiError::from(e).body)
    }
}

/// Prints `value` as JSON in machine mode, otherwise the text rendering.
pub fn emit<T: Serialize>(format: Format, value: &T, text: impl FnOnce(&T) -> String) {
    match format {
        Format::Machine => println!("{}", serde_json::to_string(value).expect("output serializes")),
        Format::Text => println!("{}", text(value).trim_end()),
    }
}
