//! Signed two's-complement fixed-point arithmetic.
//!
//! Every number on the datapath is an integer code paired with a [`QFormat`]
//! that says how many of its bits are fractional. Operations never wrap: a
//! result that does not fit the target format is clamped to the nearest
//! boundary code and the caller is told about it through a saturation flag.
//!
//! The raw helpers ([`round_shift`], [`saturate`]) are what the inference
//! kernels use in their inner loops; [`FixedWord`] wraps them with format
//! bookkeeping for everything else.

use std::fmt;

use crate::error::FixedError;

/// Rounding applied whenever fractional bits are discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Rounding {
    /// Round to nearest, ties to the even code.
    #[default]
    NearestEven,
    /// Round to nearest, ties away from zero.
    HalfAway,
    /// Drop the discarded bits (round toward negative infinity), as a plain
    /// arithmetic right shift does.
    Truncate,
}

/// Signed fixed-point format `Qm.n` with `m + n = total_bits`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct QFormat {
    total_bits: u8,
    frac_bits: u8,
}

impl QFormat {
    /// 16-bit activations: 8 integer bits (including sign) and 8 fraction bits.
    pub const Q8_8: QFormat = QFormat { total_bits: 16, frac_bits: 8 };

    pub fn new(total_bits: u32, frac_bits: u32) -> Result<Self, FixedError> {
        if !(1..=32).contains(&total_bits) || frac_bits >= total_bits {
            return Err(FixedError::InvalidFormat { total_bits, frac_bits });
        }
        Ok(QFormat { total_bits: total_bits as u8, frac_bits: frac_bits as u8 })
    }

    pub fn total_bits(self) -> u32 {
        self.total_bits as u32
    }

    pub fn frac_bits(self) -> u32 {
        self.frac_bits as u32
    }

    /// Integer bits, sign bit included.
    pub fn int_bits(self) -> u32 {
        self.total_bits() - self.frac_bits()
    }

    pub fn min_code(self) -> i64 {
        -(1i64 << (self.total_bits - 1))
    }

    pub fn max_code(self) -> i64 {
        (1i64 << (self.total_bits - 1)) - 1
    }

    /// Weight of one least-significant bit.
    pub fn lsb(self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    pub fn contains(self, code: i64) -> bool {
        (self.min_code()..=self.max_code()).contains(&code)
    }

    pub fn to_real(self, code: i64) -> f64 {
        code as f64 * self.lsb()
    }

    /// Accumulator format for products of Q8.8 activations with weights of
    /// `weight` format: 32 bits, fraction bits of the exact product.
    pub fn accumulator_for(weight: QFormat) -> QFormat {
        QFormat { total_bits: 32, frac_bits: 8 + weight.frac_bits }
    }
}

impl fmt::Debug for QFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q{}.{}", self.int_bits(), self.frac_bits)
    }
}

impl fmt::Display for QFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Shift `code` right by `shift` bits (left when negative), rounding the
/// discarded bits according to `mode`. Left shifts are exact.
pub fn round_shift(code: i64, shift: i32, mode: Rounding) -> i128 {
    let code = code as i128;
    if shift <= 0 {
        return code << (-shift) as u32;
    }
    let shift = shift as u32;
    if shift >= 100 {
        return if code < 0 && mode == Rounding::Truncate { -1 } else { 0 };
    }
    let floor = code >> shift;
    let rem = code - (floor << shift);
    let half = 1i128 << (shift - 1);
    match mode {
        Rounding::Truncate => floor,
        Rounding::NearestEven => {
            if rem > half || (rem == half && floor & 1 == 1) {
                floor + 1
            } else {
                floor
            }
        }
        Rounding::HalfAway => {
            if rem > half || (rem == half && code >= 0) {
                floor + 1
            } else {
                floor
            }
        }
    }
}

/// Clamp `code` into `format`. The flag is set iff clamping happened.
pub fn saturate(code: i128, format: QFormat) -> (i64, bool) {
    let (lo, hi) = (format.min_code() as i128, format.max_code() as i128);
    if code < lo {
        (lo as i64, true)
    } else if code > hi {
        (hi as i64, true)
    } else {
        (code as i64, false)
    }
}

/// Re-express `code` (with `from_frac` fraction bits) in `to`, rounding and
/// saturating.
pub fn requantize(code: i64, from_frac: u32, to: QFormat, mode: Rounding) -> (i64, bool) {
    let shift = from_frac as i32 - to.frac_bits() as i32;
    saturate(round_shift(code, shift, mode), to)
}

/// Signed integer code plus the format that gives it meaning.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct FixedWord {
    code: i64,
    format: QFormat,
}

impl FixedWord {
    pub fn new(code: i64, format: QFormat) -> Result<Self, FixedError> {
        if !format.contains(code) {
            return Err(FixedError::CodeOutOfRange { code, format });
        }
        Ok(FixedWord { code, format })
    }

    pub fn zero(format: QFormat) -> Self {
        FixedWord { code: 0, format }
    }

    /// The code representing 1.0, or the largest code below it when 1.0 is
    /// out of range.
    pub fn one(format: QFormat) -> Self {
        let (code, _) = saturate(1i128 << format.frac_bits(), format);
        FixedWord { code, format }
    }

    pub fn code(self) -> i64 {
        self.code
    }

    pub fn format(self) -> QFormat {
        self.format
    }

    pub fn to_real(self) -> f64 {
        self.format.to_real(self.code)
    }
}

impl fmt::Debug for FixedWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{:?}({})", self.code, self.format, self.to_real())
    }
}

/// Quantize a real number, saturating at the format boundaries. NaN maps to
/// zero and is reported as saturated.
pub fn quantize(value: f64, format: QFormat, mode: Rounding) -> (FixedWord, bool) {
    if value.is_nan() {
        return (FixedWord::zero(format), true);
    }
    let scaled = value * (format.frac_bits() as f64).exp2();
    let rounded = match mode {
        Rounding::NearestEven => scaled.round_ties_even(),
        Rounding::HalfAway => scaled.round(),
        Rounding::Truncate => scaled.floor(),
    };
    let (code, saturated) = if rounded < format.min_code() as f64 {
        (format.min_code(), true)
    } else if rounded > format.max_code() as f64 {
        (format.max_code(), true)
    } else {
        (rounded as i64, false)
    };
    (FixedWord { code, format }, saturated)
}

/// Exact product. The result format is the sum of the operand widths and
/// fraction widths, so nothing is rounded.
pub fn mul_exact(a: FixedWord, b: FixedWord) -> Result<FixedWord, FixedError> {
    let total = a.format.total_bits() + b.format.total_bits();
    if total > 32 {
        return Err(FixedError::ProductTooWide { total_bits: total });
    }
    let format = QFormat::new(total, a.format.frac_bits() + b.format.frac_bits())?;
    Ok(FixedWord { code: a.code * b.code, format })
}

/// Saturating sum of two words that share a fraction width with `out`.
pub fn add_sat(a: FixedWord, b: FixedWord, out: QFormat) -> Result<(FixedWord, bool), FixedError> {
    for w in [a, b] {
        if w.format.frac_bits() != out.frac_bits() {
            return Err(FixedError::Misaligned { left: w.format, right: out });
        }
    }
    let (code, saturated) = saturate(a.code as i128 + b.code as i128, out);
    Ok((FixedWord { code, format: out }, saturated))
}

/// Move a word into another format, rounding discarded bits and saturating.
pub fn rescale(a: FixedWord, out: QFormat, mode: Rounding) -> (FixedWord, bool) {
    let (code, saturated) = requantize(a.code, a.format.frac_bits(), out, mode);
    (FixedWord { code, format: out }, saturated)
}

/// Product of two words rounded straight into `out`. The intermediate is
/// exact, so this rounds once; used where the exact product would exceed
/// 32 bits.
pub fn mul_rescale(a: FixedWord, b: FixedWord, out: QFormat, mode: Rounding) -> (FixedWord, bool) {
    let product = a.code as i128 * b.code as i128;
    let shift = (a.format.frac_bits() + b.format.frac_bits()) as i32 - out.frac_bits() as i32;
    let (code, saturated) = if shift <= 0 {
        saturate(product << (-shift) as u32, out)
    } else {
        // product fits in i64 for operands of at most 32 bits each
        saturate(round_shift(product as i64, shift, mode), out)
    };
    (FixedWord { code, format: out }, saturated)
}
