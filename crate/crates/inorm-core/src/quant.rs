//! Weight binarization and symmetric k-bit fake quantization, with
//! two's-complement bit-level access used by the bit-flip fault model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Symmetric per-tensor quantizer description.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub bits: u8,
    pub scale: f64,
}

/// Integer codes for a quantized tensor. Codes normally lie in the symmetric
/// range `[-(2^(bits-1)-1), 2^(bits-1)-1]`; the extra two's-complement value
/// `-2^(bits-1)` can appear as a bit-flip outcome and dequantizes normally.
#[derive(Clone, Debug, PartialEq)]
pub struct BitTensor {
    pub codes: Vec<i32>,
    pub bits: u8,
    pub scale: f64,
    pub shape: Vec<usize>,
}

impl BitTensor {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

/// Sign of each element, with `sign(0) = +1`.
pub fn binarize_forward(w: &Tensor) -> Tensor {
    w.map(|v| if v < 0.0 { -1.0 } else { 1.0 })
}

/// Clipped straight-through estimator: gradients pass where `|w| <= 1`.
pub fn binarize_backward(dy: &Tensor, w: &Tensor) -> Tensor {
    assert_eq!(dy.shape(), w.shape(), "binarize_backward shape mismatch");
    let mut out = dy.clone();
    for (g, &v) in out.data_mut().iter_mut().zip(w.data()) {
        if v.abs() > 1.0 {
            *g = 0.0;
        }
    }
    out
}

fn max_code(bits: u8) -> i32 {
    (1i32 << (bits - 1)) - 1
}

/// Quantize to symmetric `bits`-bit codes, rounding half away from zero.
/// An all-zero tensor has no natural scale; it quantizes with scale 1.
pub fn quantize(w: &Tensor, bits: u8) -> Result<BitTensor> {
    if !(bits == 4 || bits == 8) {
        return Err(Error::Config(format!(
            "quantize supports 4 or 8 bits, got {bits}"
        )));
    }
    let max_abs = w.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if max_abs == 0.0 {
        log::warn!("quantize: all-zero tensor, using scale = 1");
        1.0
    } else {
        max_abs / max_code(bits) as f64
    };
    let hi = max_code(bits);
    let codes = w
        .data()
        .iter()
        .map(|&v| ((v / scale).round() as i32).clamp(-hi, hi))
        .collect();
    Ok(BitTensor {
        codes,
        bits,
        scale,
        shape: w.shape().to_vec(),
    })
}

pub fn dequantize(t: &BitTensor) -> Tensor {
    let data = t.codes.iter().map(|&c| c as f64 * t.scale).collect();
    Tensor::new(t.shape.clone(), data).expect("dequantized codes are finite")
}

/// Quantize-then-dequantize in one step (the simulated low-precision weight).
pub fn fake_quant(w: &Tensor, bits: u8) -> Result<Tensor> {
    Ok(dequantize(&quantize(w, bits)?))
}

fn bit_mask(bits: u8) -> u32 {
    if bits >= 32 {
        u32::MAX
    } else {
        (1u32 << bits) - 1
    }
}

/// Two's-complement bit pattern of `code` on `bits` bits.
pub fn code_bits(code: i32, bits: u8) -> u32 {
    (code as u32) & bit_mask(bits)
}

/// Decode a `bits`-wide two's-complement pattern. Every pattern decodes,
/// including the out-of-range minimum produced only by faults.
pub fn bits_to_code(pattern: u32, bits: u8) -> i32 {
    let mask = bit_mask(bits);
    let p = pattern & mask;
    let sign = 1u32 << (bits - 1);
    if p & sign != 0 {
        (p | !mask) as i32
    } else {
        p as i32
    }
}
