//! Software emulation of reduced floating-point formats.
//!
//! Values are carried as `f64` everywhere; a [`Precision`] decides how each
//! primitive result is rounded before it is stored. Binary16 rounding is done
//! bit-by-bit from the `f64` encoding (round-to-nearest, ties-to-even), so the
//! emulation is identical on every platform.

use serde::{Deserialize, Serialize};

/// Storage format of a tensor's values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Precision {
    #[default]
    F64,
    F32,
    /// IEEE binary16, emulated.
    F16,
}

impl Precision {
    #[inline]
    pub fn round(self, v: f64) -> f64 {
        match self {
            Precision::F64 => v,
            Precision::F32 => v as f32 as f64,
            Precision::F16 => round_f16(v),
        }
    }

    /// Rounds every value in place and returns how many are non-finite afterwards.
    pub fn round_slice(self, values: &mut [f64]) -> usize {
        let mut nonfinite = 0;
        match self {
            Precision::F64 => {}
            Precision::F32 => values.iter_mut().for_each(|v| *v = *v as f32 as f64),
            Precision::F16 => values.iter_mut().for_each(|v| *v = round_f16(*v)),
        }
        for v in values.iter() {
            if !v.is_finite() {
                nonfinite += 1;
            }
        }
        nonfinite
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::F64 => "f64",
            Precision::F32 => "f32",
            Precision::F16 => "f16",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f64" => Some(Precision::F64),
            "f32" => Some(Precision::F32),
            "f16" | "fp16" | "f16-emulated" => Some(Precision::F16),
            _ => None,
        }
    }
}

/// Largest finite binary16 value.
pub const F16_MAX: f64 = 65504.0;

/// Converts an `f64` to the nearest binary16 encoding (ties to even).
pub fn f64_to_f16_bits(x: f64) -> u16 {
    let bits = x.to_bits();
    let sign = ((bits >> 48) & 0x8000) as u16;
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let mant = bits & ((1u64 << 52) - 1);

    if exp == 0x7ff {
        return if mant == 0 {
            sign | 0x7c00
        } else {
            sign | 0x7e00
        };
    }
    if exp == 0 {
        // f64 subnormals are far below the binary16 range.
        return sign;
    }
    let e = exp - 1023;
    if e > 15 {
        return sign | 0x7c00;
    }
    if e >= -14 {
        let half_exp = (e + 15) as u64;
        let m = mant >> 42;
        let rem = mant & ((1u64 << 42) - 1);
        let halfway = 1u64 << 41;
        let mut out = (half_exp << 10) | m;
        if rem > halfway || (rem == halfway && (m & 1) == 1) {
            // a mantissa carry rolls into the exponent, reaching 0x7c00 on overflow
            out += 1;
        }
        return sign | out as u16;
    }
    // binary16 subnormal range: units of 2^-24
    let sig = mant | (1u64 << 52);
    let shift = (28 - e) as u32;
    if shift >= 64 {
        return sign;
    }
    let m = sig >> shift;
    let rem = sig & ((1u64 << shift) - 1);
    let halfway = 1u64 << (shift - 1);
    let mut out = m;
    if rem > halfway || (rem == halfway && (m & 1) == 1) {
        out += 1;
    }
    sign | out as u16
}

/// Exact value of a binary16 encoding.
pub fn f16_bits_to_f64(h: u16) -> f64 {
    let sign = if h & 0x8000 != 0 { -1.0 } else { 1.0 };
    let exp = ((h >> 10) & 0x1f) as i32;
    let mant = (h & 0x3ff) as f64;
    match exp {
        0 => sign * mant * 2f64.powi(-24),
        31 => {
            if mant == 0.0 {
                sign * f64::INFINITY
            } else {
                f64::NAN
            }
        }
        _ => sign * (1024.0 + mant) * 2f64.powi(exp - 25),
    }
}

#[inline]
pub fn round_f16(x: f64) -> f64 {
    f16_bits_to_f64(f64_to_f16_bits(x))
}
