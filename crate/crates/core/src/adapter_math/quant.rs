//! Blockwise absmax quantization against a NormalFloat codebook, with
//! optional 8-bit double quantization of the block scales.
//!
//! First-level scales are stored as 32-bit floats (rounded up so that every
//! normalized element stays inside [-1, 1]); codes are bit-packed LSB-first,
//! which for 4-bit codes means two per byte, low nibble first.

use serde::{Deserialize, Serialize};

use super::codebook::Codebook;
use super::{Matrix, MathError};

pub const DEFAULT_BLOCK_SIZE: usize = 64;
pub const DEFAULT_CHUNK_SIZE: usize = 256;

/// Second-level quantization of block scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DQScales {
    pub chunk_size: usize,
    pub codes: Vec<i8>,
    pub chunk_absmax: Vec<f32>,
    pub global_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Scales {
    Plain(Vec<f32>),
    Double(DQScales),
}

impl Scales {
    pub fn len(&self) -> usize {
        match self {
            Scales::Plain(s) => s.len(),
            Scales::Double(dq) => dq.codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Block scales as 64-bit reals.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            Scales::Plain(s) => s.iter().map(|&v| f64::from(v)).collect(),
            Scales::Double(dq) => dequantize_scales(dq),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedTensor {
    pub rows: usize,
    pub cols: usize,
    pub block_size: usize,
    pub codebook_bits: u8,
    /// Bit-packed codes, LSB first.
    pub codes: Vec<u8>,
    pub scales: Scales,
}

impl QuantizedTensor {
    pub fn numel(&self) -> usize {
        self.rows * self.cols
    }

    pub fn block_count(&self) -> usize {
        self.numel().div_ceil(self.block_size)
    }

    pub fn code(&self, index: usize) -> u8 {
        read_code(&self.codes, self.codebook_bits, index)
    }

    pub fn unpacked_codes(&self) -> Vec<u8> {
        (0..self.numel()).map(|i| self.code(i)).collect()
    }

    pub fn uses_double_quant(&self) -> bool {
        matches!(self.scales, Scales::Double(_))
    }

    /// Checks the structural invariants (counts, non-negative scales).
    pub fn validate(&self) -> Result<(), MathError> {
        let corrupt = |msg: String| Err(MathError::CorruptTensor(msg));
        if self.block_size == 0 {
            return corrupt("block size 0".into());
        }
        if self.numel() == 0 {
            return corrupt("empty tensor".into());
        }
        if self.codes.len() != packed_len(self.numel(), self.codebook_bits) {
            return corrupt(format!(
                "expected {} code bytes, found {}",
                packed_len(self.numel(), self.codebook_bits),
                self.codes.len()
            ));
        }
        if self.scales.len() != self.block_count() {
            return corrupt(format!(
                "expected {} scales, found {}",
                self.block_count(),
                self.scales.len()
            ));
        }
        match &self.scales {
            Scales::Plain(s) => {
                if s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return corrupt("negative or non-finite scale".into());
                }
            }
            Scales::Double(dq) => {
                if dq.chunk_size == 0 {
                    return corrupt("chunk size 0".into());
                }
                if dq.chunk_absmax.len() != dq.codes.len().div_ceil(dq.chunk_size) {
                    return corrupt("chunk count does not match scale count".into());
                }
                if dq.codes.contains(&i8::MIN) {
                    return corrupt("double-quant code -128".into());
                }
                if dq.chunk_absmax.iter().any(|v| !(v.is_finite() && *v >= 0.0))
                    || !dq.global_mean.is_finite()
                {
                    return corrupt("bad chunk absmax or mean".into());
                }
            }
        }
        Ok(())
    }

    /// Little-endian payload: packed codes, then either f32 scales or the
    /// double-quant triple (i8 codes, f32 chunk absmax, f64 global mean).
    pub fn payload_bytes(&self) -> Vec<u8> {
        let mut out = self.codes.clone();
        match &self.scales {
            Scales::Plain(s) => s.iter().for_each(|v| out.extend(v.to_le_bytes())),
            Scales::Double(dq) => {
                out.extend(dq.codes.iter().map(|c| *c as u8));
                dq.chunk_absmax
                    .iter()
                    .for_each(|v| out.extend(v.to_le_bytes()));
                out.extend(dq.global_mean.to_le_bytes());
            }
        }
        out
    }

    /// Payload size in bits, not counting the double-quant global mean.
    pub fn payload_bits_without_mean(&self) -> usize {
        let total = self.payload_bytes().len() * 8;
        if self.uses_double_quant() {
            total - 64
        } else {
            total
        }
    }

    /// Inverse of [`payload_bytes`](Self::payload_bytes) given the header
    /// fields that the bundle manifest carries.
    pub fn from_payload(
        header: &TensorHeader,
        payload: &[u8],
    ) -> Result<(Self, usize), MathError> {
        let numel = header.rows * header.cols;
        if header.block_size == 0 || numel == 0 {
            return Err(MathError::CorruptTensor("bad tensor header".into()));
        }
        let blocks = numel.div_ceil(header.block_size);
        let mut cursor = Cursor { buf: payload, pos: 0 };
        let codes = cursor.take(packed_len(numel, header.codebook_bits))?.to_vec();
        let scales = match header.chunk_size {
            None => Scales::Plain(
                (0..blocks)
                    .map(|_| cursor.f32())
                    .collect::<Result<_, _>>()?,
            ),
            Some(chunk_size) => {
                if chunk_size == 0 {
                    return Err(MathError::CorruptTensor("chunk size 0".into()));
                }
                let codes = cursor.take(blocks)?.iter().map(|b| *b as i8).collect();
                let chunk_absmax = (0..blocks.div_ceil(chunk_size))
                    .map(|_| cursor.f32())
                    .collect::<Result<_, _>>()?;
                let global_mean = cursor.f64()?;
                Scales::Double(DQScales {
                    chunk_size,
                    codes,
                    chunk_absmax,
                    global_mean,
                })
            }
        };
        let tensor = QuantizedTensor {
            rows: header.rows,
            cols: header.cols,
            block_size: header.block_size,
            codebook_bits: header.codebook_bits,
            codes,
            scales,
        };
        tensor.validate()?;
        Ok((tensor, cursor.pos))
    }

    pub fn header(&self) -> TensorHeader {
        TensorHeader {
            rows: self.rows,
            cols: self.cols,
            block_size: self.block_size,
            codebook_bits: self.codebook_bits,
            chunk_size: match &self.scales {
                Scales::Plain(_) => None,
                Scales::Double(dq) => Some(dq.chunk_size),
            },
        }
    }
}

/// Shape and layout parameters needed to decode a tensor payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub rows: usize,
    pub cols: usize,
    pub block_size: usize,
    pub codebook_bits: u8,
    pub chunk_size: Option<usize>,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], MathError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| MathError::CorruptTensor("payload truncated".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn f32(&mut self) -> Result<f32, MathError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, MathError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn packed_len(count: usize, bits: u8) -> usize {
    (count * bits as usize).div_ceil(8)
}

fn pack_codes(codes: &[u8], bits: u8) -> Vec<u8> {
    let mut out = vec![0u8; packed_len(codes.len(), bits)];
    for (i, &code) in codes.iter().enumerate() {
        for b in 0..bits as usize {
            if code >> b & 1 == 1 {
                let bit = i * bits as usize + b;
                out[bit / 8] |= 1 << (bit % 8);
            }
        }
    }
    out
}

fn read_code(packed: &[u8], bits: u8, index: usize) -> u8 {
    let mut code = 0u8;
    for b in 0..bits as usize {
        let bit = index * bits as usize + b;
        code |= (packed[bit / 8] >> (bit % 8) & 1) << b;
    }
    code
}

/// Smallest f32 that is >= `v` (for finite, non-negative `v`).
fn f32_at_least(v: f64) -> f32 {
    let f = v as f32;
    if f64::from(f) >= v {
        f
    } else {
        f.next_up()
    }
}

pub fn quantize_blockwise(
    m: &Matrix,
    block_size: usize,
    codebook: &Codebook,
    double_quant: Option<usize>,
) -> Result<QuantizedTensor, MathError> {
    if m.is_empty() {
        return Err(MathError::InvalidShape("cannot quantize an empty matrix".into()));
    }
    if block_size == 0 {
        return Err(MathError::InvalidShape("block size must be at least 1".into()));
    }
    let zero = codebook.zero_index();
    let mut codes = Vec::with_capacity(m.len());
    let mut scales = Vec::with_capacity(m.len().div_ceil(block_size));
    for block in m.as_slice().chunks(block_size) {
        let absmax = block.iter().fold(0.0, |a: f64, v| a.max(v.abs()));
        if absmax > f64::from(f32::MAX) {
            return Err(MathError::OutOfRange(absmax));
        }
        let scale = f32_at_least(absmax);
        scales.push(scale);
        if scale == 0.0 {
            codes.extend(std::iter::repeat_n(zero, block.len()));
        } else {
            let s = f64::from(scale);
            codes.extend(block.iter().map(|v| codebook.nearest(v / s)));
        }
    }
    let scales = match double_quant {
        None => Scales::Plain(scales),
        Some(chunk_size) => {
            let plain: Vec<f64> = scales.iter().map(|&s| f64::from(s)).collect();
            Scales::Double(double_quantize_scales(&plain, chunk_size)?)
        }
    };
    Ok(QuantizedTensor {
        rows: m.rows(),
        cols: m.cols(),
        block_size,
        codebook_bits: codebook.bits(),
        codes: pack_codes(&codes, codebook.bits()),
        scales,
    })
}

pub fn dequantize(q: &QuantizedTensor, codebook: &Codebook) -> Result<Matrix, MathError> {
    q.validate()?;
    if q.codebook_bits != codebook.bits() {
        return Err(MathError::CorruptTensor(format!(
            "tensor uses {}-bit codes, codebook has {} bits",
            q.codebook_bits,
            codebook.bits()
        )));
    }
    let scales = q.scales.to_f64();
    let levels = codebook.values();
    let mut data = Vec::with_capacity(q.numel());
    for i in 0..q.numel() {
        let code = q.code(i) as usize;
        let level = levels.get(code).ok_or_else(|| {
            MathError::CorruptTensor(format!("code {code} out of range at element {i}"))
        })?;
        data.push(scales[i / q.block_size] * level);
    }
    Matrix::new(q.rows, q.cols, data)
}

/// Quantizes non-negative block scales to signed 8-bit codes around their
/// global mean, with one absmax per chunk of `chunk_size` scales.
pub fn double_quantize_scales(scales: &[f64], chunk_size: usize) -> Result<DQScales, MathError> {
    if chunk_size == 0 {
        return Err(MathError::InvalidShape("chunk size must be at least 1".into()));
    }
    if let Some(bad) = scales.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(MathError::InvalidShape(format!("scale {bad} is not >= 0")));
    }
    let global_mean = if scales.is_empty() {
        0.0
    } else {
        scales.iter().sum::<f64>() / scales.len() as f64
    };
    let mut codes = Vec::with_capacity(scales.len());
    let mut chunk_absmax = Vec::with_capacity(scales.len().div_ceil(chunk_size));
    for chunk in scales.chunks(chunk_size) {
        let dev = chunk
            .iter()
            .fold(0.0, |a: f64, s| a.max((s - global_mean).abs()));
        let absmax = f32_at_least(dev);
        chunk_absmax.push(absmax);
        if absmax == 0.0 {
            codes.extend(std::iter::repeat_n(0i8, chunk.len()));
        } else {
            let a = f64::from(absmax);
            codes.extend(chunk.iter().map(|s| {
                let c = (127.0 * (s - global_mean) / a).round_ties_even();
                c.clamp(-127.0, 127.0) as i8
            }));
        }
    }
    Ok(DQScales {
        chunk_size,
        codes,
        chunk_absmax,
        global_mean,
    })
}

/// Reconstructs block scales; results are floored at zero since every
/// original scale was non-negative.
pub fn dequantize_scales(dq: &DQScales) -> Vec<f64> {
    dq.codes
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let a = f64::from(dq.chunk_absmax[i / dq.chunk_size]);
            (dq.global_mean + a * f64::from(c) / 127.0).max(0.0)
        })
        .collect()
}

/// Storage cost per parameter: code bits plus amortized scale bits. The
/// double-quant global mean is amortized to zero.
pub fn memory_footprint_bits_per_param(
    bits: u8,
    block_size: usize,
    double_quant: Option<usize>,
) -> f64 {
    let block = block_size as f64;
    f64::from(bits)
        + match double_quant {
            Some(chunk) => 8.0 / block + 32.0 / (block * chunk as f64),
            None => 32.0 / block,
        }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter_math::build_nf4_codebook;

    fn nf4() -> Codebook {
        build_nf4_codebook(4).unwrap()
    }

    #[test]
    fn all_zero_block_is_exact() {
        let m = Matrix::zeros(3, 5);
        let q = quantize_blockwise(&m, 4, &nf4(), None).unwrap();
        assert!(q.scales.to_f64().iter().all(|s| *s == 0.0));
        assert_eq!(dequantize(&q, &nf4()).unwrap(), m);
    }

    #[test]
    fn single_element_hits_endpoint() {
        let m = Matrix::new(1, 1, vec![0.5]).unwrap();
        let q = quantize_blockwise(&m, 64, &nf4(), None).unwrap();
        assert_eq!(q.code(0), 15);
        assert_eq!(dequantize(&q, &nf4()).unwrap().as_slice(), &[0.5]);
        let neg = Matrix::new(1, 1, vec![-0.5]).unwrap();
        let q = quantize_blockwise(&neg, 64, &nf4(), None).unwrap();
        assert_eq!(dequantize(&q, &nf4()).unwrap().as_slice(), &[-0.5]);
    }

    #[test]
    fn empty_matrix_rejected() {
        let m = Matrix::zeros(0, 4);
        assert!(matches!(
            quantize_blockwise(&m, 64, &nf4(), None),
            Err(MathError::InvalidShape(_))
        ));
        let m = Matrix::zeros(2, 2);
        assert!(quantize_blockwise(&m, 0, &nf4(), None).is_err());
    }

    #[test]
    fn four_bit_codes_pack_low_nibble_first() {
        let m = Matrix::new(1, 3, vec![-1.0, 1.0, 0.0]).unwrap();
        let q = quantize_blockwise(&m, 64, &nf4(), None).unwrap();
        assert_eq!(q.codes, vec![0xF0, 0x08]);
        assert_eq!(q.unpacked_codes(), vec![0, 15, 8]);
    }

    #[test]
    fn out_of_range_code_is_corrupt() {
        let cb3 = build_nf4_codebook(3).unwrap();
        let m = Matrix::new(1, 2, vec![1.0, -1.0]).unwrap();
        let q = quantize_blockwise(&m, 2, &nf4(), None).unwrap();
        // A 4-bit tensor decoded against a 3-bit codebook.
        assert!(matches!(dequantize(&q, &cb3), Err(MathError::CorruptTensor(_))));
        let mut bad = q.clone();
        bad.codes.pop();
        assert!(matches!(dequantize(&bad, &nf4()), Err(MathError::CorruptTensor(_))));
    }

    #[test]
    fn dq_equal_scales_are_exact() {
        let scales = vec![0.75; 10];
        let dq = double_quantize_scales(&scales, 4).unwrap();
        assert!(dq.codes.iter().all(|&c| c == 0));
        assert_eq!(dequantize_scales(&dq), scales);
    }

    #[test]
    fn dq_two_scale_example() {
        let dq = double_quantize_scales(&[0.0, 2.0], 256).unwrap();
        assert_eq!(dq.global_mean, 1.0);
        assert_eq!(dq.chunk_absmax, vec![1.0]);
        assert_eq!(dq.codes, vec![-127, 127]);
        assert_eq!(dequantize_scales(&dq), vec![0.0, 2.0]);
    }

    #[test]
    fn dq_rounds_half_to_even() {
        // deviations -1, 0, +1 and a value giving 127 * 0.5/1 = 63.5 -> 64
        let scales = [0.0, 1.5, 2.0, 1.0];
        let dq = double_quantize_scales(&scales, 8).unwrap();
        assert_eq!(dq.global_mean, 1.125);
        let a = f64::from(dq.chunk_absmax[0]);
        assert_eq!(a, 1.125);
        let expect: Vec<i8> = scales
            .iter()
            .map(|s| (127.0 * (s - 1.125) / a).round_ties_even() as i8)
            .collect();
        assert_eq!(dq.codes, expect);
        let tie = double_quantize_scales(&[0.0, 2.0, 1.5, 0.5], 8).unwrap();
        // mean 1, a = 1: 127 * 0.5 = 63.5 -> 64, 127 * -0.5 = -63.5 -> -64
        assert_eq!(tie.codes, vec![-127, 127, 64, -64]);
    }

    #[test]
    fn dq_rejects_negative_scales() {
        assert!(double_quantize_scales(&[1.0, -0.1], 4).is_err());
        assert!(double_quantize_scales(&[1.0], 0).is_err());
    }

    #[test]
    fn footprint_examples() {
        assert_eq!(memory_footprint_bits_per_param(4, 64, None), 4.5);
        let dq = memory_footprint_bits_per_param(4, 64, Some(256));
        assert!((dq - 4.127).abs() <= 0.001);
        assert_eq!(memory_footprint_bits_per_param(4, 1, None), 36.0);
    }

    #[test]
    fn payload_round_trip() {
        let m = Matrix::from_fn(7, 9, |i, j| ((i * 9 + j) as f64 * 0.37).sin());
        for dq in [None, Some(3)] {
            let q = quantize_blockwise(&m, 5, &nf4(), dq).unwrap();
            let bytes = q.payload_bytes();
            let (back, used) = QuantizedTensor::from_payload(&q.header(), &bytes).unwrap();
            assert_eq!(used, bytes.len());
            assert_eq!(back, q);
        }
        let q = quantize_blockwise(&m, 5, &nf4(), None).unwrap();
        let bytes = q.payload_bytes();
        assert!(QuantizedTensor::from_payload(&q.header(), &bytes[..bytes.len() - 1]).is_err());
    }
}
