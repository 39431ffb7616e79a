//! NormalFloat codebooks.
//!
//! A k-bit NormalFloat codebook has 2^k levels in [-1, 1]. Levels are
//! midpoints between adjacent standard-normal quantiles taken at evenly
//! spaced probabilities in `[δ, 1 - δ]`, `δ = 1 / 2^(k+1)`:
//!
//! * the negative half splits `[δ, 1/2]` into 2^(k-1) intervals,
//! * the positive half splits `[1/2, 1 - δ]` into 2^(k-1) - 1 intervals,
//! * an exact zero sits between them.
//!
//! Each half is divided by its own largest magnitude, which pins the
//! endpoints to exactly -1 and +1. The 4-bit table is frozen below so that
//! quantization never depends on the platform's inverse-CDF implementation.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::MathError;

/// Frozen 4-bit NormalFloat levels (computed once at 40-digit precision).
pub const NF4_TABLE: [f64; 16] = [
    -1.0,
    -0.7442388932087962,
    -0.5804190571937755,
    -0.450269019305676,
    -0.33766575430681833,
    -0.23530914732194094,
    -0.13902768808037194,
    -0.04600004213555508,
    0.0,
    0.053463081717626294,
    0.16196638396763396,
    0.2755554221017745,
    0.3990388483243826,
    0.5405576100537577,
    0.7180758030548844,
    1.0,
];

pub const MIN_BITS: u8 = 2;
/// Codes are stored in at most one byte.
pub const MAX_BITS: u8 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    bits: u8,
    values: Vec<f64>,
}

impl Codebook {
    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the exact zero level.
    pub fn zero_index(&self) -> u8 {
        (self.values.len() / 2) as u8
    }

    /// Largest distance between adjacent levels.
    pub fn max_gap(&self) -> f64 {
        self.values
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// Nearest level to `v`; ties go to the lower index.
    pub fn nearest(&self, v: f64) -> u8 {
        // Levels are sorted, so find the first level >= v and compare with
        // its predecessor.
        let upper = self.values.partition_point(|&c| c < v);
        if upper == 0 {
            return 0;
        }
        if upper == self.values.len() {
            return (self.values.len() - 1) as u8;
        }
        let lower = upper - 1;
        if v - self.values[lower] <= self.values[upper] - v {
            lower as u8
        } else {
            upper as u8
        }
    }
}

/// Builds the k-bit NormalFloat codebook. The 4-bit case returns the frozen
/// table; other widths are computed from the quantile construction.
pub fn build_nf4_codebook(bits: u8) -> Result<Codebook, MathError> {
    if !(MIN_BITS..=MAX_BITS).contains(&bits) {
        return Err(MathError::InvalidBitWidth(bits));
    }
    let values = if bits == 4 {
        NF4_TABLE.to_vec()
    } else {
        normal_float_levels(bits)
    };
    Ok(Codebook { bits, values })
}

/// Evaluates the quantile-midpoint construction directly.
pub fn normal_float_levels(bits: u8) -> Vec<f64> {
    let n = 1usize << bits;
    let half = n / 2;
    let delta = 1.0 / (2.0 * n as f64);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let quantile = |p: f64| {
        if p == 0.5 {
            0.0
        } else {
            std_normal.inverse_cdf(p)
        }
    };

    let neg_q: Vec<f64> = (0..=half)
        .map(|i| quantile(delta + (0.5 - delta) * i as f64 / half as f64))
        .collect();
    let pos_q: Vec<f64> = (0..half)
        .map(|i| quantile(0.5 + (0.5 - delta) * i as f64 / (half - 1) as f64))
        .collect();

    let neg: Vec<f64> = neg_q.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
    let pos: Vec<f64> = pos_q.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
    let neg_scale = neg[0].abs();
    let pos_scale = pos[pos.len() - 1];

    let mut values = Vec::with_capacity(n);
    values.extend(neg.iter().map(|v| v / neg_scale));
    values.push(0.0);
    values.extend(pos.iter().map(|v| v / pos_scale));
    values
}
