//! Rebuilds the NormalFloat codebooks with a bisection quantile on the
//! complementary error function and compares them with the shipped values.

use libm::erfc;
use viz_core::adapter_math::{build_nf4_codebook, normal_float_levels, NF4_TABLE};

fn phi(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn oracle(bits: u32) -> Vec<f64> {
    let n = 1usize << bits;
    let half = n / 2;
    let delta = 1.0 / (2 * n) as f64;
    let neg_p: Vec<f64> = (0..=half).map(|i| delta + (0.5 - delta) * i as f64 / half as f64).collect();
    let pos_p: Vec<f64> = (0..half).map(|i| 0.5 + (0.5 - delta) * i as f64 / (half - 1) as f64).collect();
    let mids = |ps: &[f64]| -> Vec<f64> {
        let q: Vec<f64> = ps.iter().map(|&p| if p == 0.5 { 0.0 } else { quantile(p) }).collect();
        q.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    };
    let neg = mids(&neg_p);
    let pos = mids(&pos_p);
    let ns = neg[0].abs();
    let ps = pos[pos.len() - 1];
    let mut out: Vec<f64> = neg.iter().map(|v| v / ns).collect();
    out.push(0.0);
    out.extend(pos.iter().map(|v| v / ps));
    out
}

#[test]
fn frozen_four_bit_table_matches_oracle() {
    let expected = oracle(4);
    assert_eq!(expected.len(), 16);
    for (i, (a, b)) in NF4_TABLE.iter().zip(&expected).enumerate() {
        assert!((a - b).abs() < 1e-12, "entry {i}: table {a} vs oracle {b}");
    }
}

#[test]
fn computed_widths_match_oracle() {
    for bits in [2u8, 3, 5, 6, 8] {
        let got = normal_float_levels(bits);
        let want = oracle(bits.into());
        assert_eq!(got.len(), want.len());
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-9, "{bits}-bit: {a} vs {b}");
        }
    }
}

#[test]
fn table_shape() {
    let cb = build_nf4_codebook(4).unwrap();
    let v = cb.values();
    assert_eq!((v[0], v[7 + 1], v[15]), (-1.0, 0.0, 1.0));
    assert!(v.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(v.iter().filter(|x| **x == 0.0).count(), 1);
}
