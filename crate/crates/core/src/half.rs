//! Software IEEE 754 binary16 scalars and the fp16-input / fp32-accumulate
//! product primitive.
//!
//! `Half` carries the raw 16-bit pattern (1 sign, 5 exponent, 10 mantissa
//! bits). Conversion from f32 rounds to nearest, ties to even; conversion to
//! f32 is always exact because binary16 is a subset of binary32. The product
//! of two finite `Half` values is likewise exact in f32: the significands
//! contribute at most 22 bits and the exponent range fits comfortably.

use thiserror::Error;

/// Canonical quiet-NaN pattern every NaN input collapses to.
const QNAN: u16 = 0x7E00;

/// A 16-bit IEEE 754 binary16 value stored as its raw bit pattern.
#[derive(Copy, Clone, PartialEq, Eq, Default)]
pub struct Half(u16);

impl Half {
    pub const ZERO: Half = Half(0x0000);
    pub const ONE: Half = Half(0x3C00);
    pub const INFINITY: Half = Half(0x7C00);
    pub const NEG_INFINITY: Half = Half(0xFC00);
    /// Largest finite binary16 magnitude.
    pub const MAX: f32 = 65504.0;
    /// Smallest positive normal, 2^-14.
    pub const MIN_POSITIVE: f32 = 6.103_515_6e-5;
    /// Smallest positive subnormal, 2^-24.
    pub const MIN_SUBNORMAL: f32 = 5.960_464_5e-8;

    pub fn from_bits(bits: u16) -> Half {
        Half(bits)
    }

    pub fn to_bits(self) -> u16 {
        self.0
    }

    pub fn is_nan(self) -> bool {
        (self.0 & 0x7C00) == 0x7C00 && (self.0 & 0x03FF) != 0
    }

    pub fn is_finite(self) -> bool {
        (self.0 & 0x7C00) != 0x7C00
    }

    /// Round an f32 to the nearest binary16, ties to even.
    ///
    /// Overflow maps to signed infinity, magnitudes at or below the
    /// subnormal tie point 2^-25 map to signed zero, and every NaN input
    /// maps to one canonical quiet-NaN pattern. Total on all inputs.
    pub fn encode(x: f32) -> Half {
        let bits = x.to_bits();
        let sign = ((bits >> 16) & 0x8000) as u16;
        let exp = (bits >> 23) & 0xFF;
        let man = bits & 0x007F_FFFF;

        if exp == 0xFF {
            return if man == 0 {
                Half(sign | 0x7C00)
            } else {
                Half(QNAN)
            };
        }

        // Rebias: f32 bias 127, f16 bias 15.
        let half_exp = exp as i32 - 112;

        if half_exp >= 0x1F {
            return Half(sign | 0x7C00);
        }

        if half_exp <= 0 {
            // Result is subnormal or zero. Shifting the 24-bit significand
            // (hidden bit restored) right by 14 - half_exp aligns it to the
            // 10-bit subnormal field; shifts past 24 bits leave nothing to
            // round up from.
            if 14 - half_exp > 24 {
                return Half(sign);
            }
            let man = man | 0x0080_0000;
            let shift = (14 - half_exp) as u32;
            let half_man = (man >> shift) as u16;
            let round_bit = 1u32 << (shift - 1);
            // Round up when the round bit is set and either a sticky bit or
            // the kept LSB is set (ties to even).
            if (man & round_bit) != 0 && (man & ((round_bit << 1) | (round_bit - 1))) != 0 {
                return Half(sign | (half_man + 1));
            }
            return Half(sign | half_man);
        }

        let half = (sign as u32) | ((half_exp as u32) << 10) | (man >> 13);
        let round_bit = 0x0000_1000u32;
        if (bits & round_bit) != 0 && (bits & ((round_bit << 1) | (round_bit - 1))) != 0 {
            // Mantissa carry may overflow into the exponent; that is exactly
            // the rounding-to-infinity case at the top of the range.
            Half((half + 1) as u16)
        } else {
            Half(half as u16)
        }
    }

    /// Exact widening to f32.
    pub fn decode(self) -> f32 {
        let bits = self.0;
        let sign = ((bits & 0x8000) as u32) << 16;
        let exp = (bits >> 10) & 0x1F;
        let man = (bits & 0x03FF) as u32;
        match exp {
            0 => {
                if man == 0 {
                    return f32::from_bits(sign);
                }
                // Subnormal: value is man * 2^-24. Normalize into f32.
                let top = 31 - man.leading_zeros();
                let exp32 = 103 + top;
                let man32 = (man << (23 - top)) & 0x007F_FFFF;
                f32::from_bits(sign | (exp32 << 23) | man32)
            }
            0x1F => f32::from_bits(sign | 0x7F80_0000 | (man << 13)),
            _ => f32::from_bits(sign | ((exp as u32 + 112) << 23) | (man << 13)),
        }
    }
}

impl std::fmt::Debug for Half {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Half({:#06x} = {})", self.0, self.decode())
    }
}

/// Exact fp32 product of two `Half` values.
///
/// For finite inputs no rounding occurs: 11-bit times 11-bit significands
/// need at most 22 of f32's 24 significand bits, and the exponent of the
/// product stays inside f32's range.
pub fn product(x: Half, y: Half) -> f32 {
    x.decode() * y.decode()
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("length mismatch: {left} vs {right}")]
pub struct LengthMismatch {
    pub left: usize,
    pub right: usize,
}

/// Dot product of two `Half` slices with fp32 accumulation.
///
/// Partial products are exact; the accumulation is a strict left-to-right
/// fp32 sum starting from +0.0, so results are bit-reproducible.
pub fn dot_acc32(xs: &[Half], ys: &[Half]) -> Result<f32, LengthMismatch> {
    if xs.len() != ys.len() {
        return Err(LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    let mut acc = 0.0f32;
    for (&x, &y) in xs.iter().zip(ys.iter()) {
        acc += product(x, y);
    }
    Ok(acc)
}
