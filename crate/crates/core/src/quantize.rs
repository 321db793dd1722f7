//! Post-training weight quantization and reduced-precision inference.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::numeric::{Precision, Tensor};
use crate::train::eval_forward;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WeightBits {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "int8")]
    Int8,
    #[serde(rename = "int4")]
    Int4,
}

impl WeightBits {
    pub fn bits(self) -> Option<u32> {
        match self {
            WeightBits::None => None,
            WeightBits::Int8 => Some(8),
            WeightBits::Int4 => Some(4),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WeightBits::None => "none",
            WeightBits::Int8 => "int8",
            WeightBits::Int4 => "int4",
        }
    }
}

impl FromStr for WeightBits {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(WeightBits::None),
            "8" | "int8" => Ok(WeightBits::Int8),
            "4" | "int4" => Ok(WeightBits::Int4),
            _ => Err(format!(
                "unknown weight precision `{s}` (expected none, int8 or int4)"
            )),
        }
    }
}

/// Weight precision plus the precision every feature primitive is rounded to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantPolicy {
    pub weight_bits: WeightBits,
    pub feature_mode: Precision,
}

impl QuantPolicy {
    pub const IDENTITY: QuantPolicy = QuantPolicy {
        weight_bits: WeightBits::None,
        feature_mode: Precision::F32,
    };

    pub fn new(weight_bits: WeightBits, feature_mode: Precision) -> Result<Self> {
        if feature_mode == Precision::F64 {
            return Err(Error::Config {
                key: "feature_mode".into(),
                reason: "must be f32 or f16".into(),
            });
        }
        Ok(QuantPolicy {
            weight_bits,
            feature_mode,
        })
    }
}

impl fmt::Display for QuantPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "W:{}/F:{}",
            self.weight_bits.name(),
            self.feature_mode.name()
        )
    }
}

/// Largest quantization level `2^(bits−1) − 1`.
pub fn qmax(bits: u32) -> f64 {
    ((1u64 << (bits - 1)) - 1) as f64
}

/// Symmetric per-tensor quantization `s · round(w / s)` with
/// `s = max|w| / qmax`, rounding ties to even. Returns the dequantized tensor
/// and `s` (zero for an all-zero tensor, which is returned unchanged).
pub fn quantize_tensor(w: &Tensor, bits: u32) -> (Tensor, f64) {
    assert!((2..=16).contains(&bits), "unsupported bit width {bits}");
    let max = w.max_abs();
    if max == 0.0 {
        return (w.clone(), 0.0);
    }
    let s = max / qmax(bits);
    (w.map(|v| s * (v / s).round_ties_even()), s)
}

/// Quantizes every learnable tensor of `model` in place. Returns the scale
/// used per tensor name.
pub fn quantize_weights(model: &mut Model, bits: u32) -> Vec<(String, f64)> {
    model
        .named_params_mut()
        .into_iter()
        .map(|(name, t)| {
            let (q, s) = quantize_tensor(t, bits);
            *t = q;
            (name, s)
        })
        .collect()
}

/// Applies `policy` to a copy of `model` and restores `lq`. Returns the
/// output and the number of non-finite values produced anywhere in the
/// forward pass.
pub fn infer_quantized(model: &Model, policy: QuantPolicy, lq: &Tensor) -> Result<(Tensor, usize)> {
    let mut m = model.clone();
    if let Some(bits) = policy.weight_bits.bits() {
        quantize_weights(&mut m, bits);
    }
    let out = eval_forward(&mut m, lq, policy.feature_mode, false)?;
    Ok((out.output, out.nonfinite))
}
