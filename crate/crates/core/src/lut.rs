//! Table-driven sigmoid and tanh.
//!
//! Inputs are 16-bit Q8.8 codes; outputs are `Q1.(n-1)` codes with
//! `n` in 5..=9. Each table holds all 65536 entries, filled from the real
//! function with round-to-nearest-even.

use crate::error::LutError;
use crate::fixedpoint::{quantize, FixedWord, QFormat, Rounding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn eval_real(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }
}

pub const MIN_OUT_BITS: u32 = 5;
pub const MAX_OUT_BITS: u32 = 9;

#[derive(Clone)]
pub struct ActLut {
    kind: Activation,
    out_format: QFormat,
    table: Box<[i16]>,
}

impl std::fmt::Debug for ActLut {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ActLut").field("kind", &self.kind).field("out_format", &self.out_format).finish()
    }
}

impl ActLut {
    pub fn build(kind: Activation, out_bits: u32) -> Result<Self, LutError> {
        if !(MIN_OUT_BITS..=MAX_OUT_BITS).contains(&out_bits) {
            return Err(LutError::InvalidOutputBits(out_bits));
        }
        let out_format = QFormat::new(out_bits, out_bits - 1).expect("valid LUT format");
        let table = (i16::MIN..=i16::MAX)
            .map(|code| {
                let x = QFormat::Q8_8.to_real(code as i64);
                quantize(kind.eval_real(x), out_format, Rounding::NearestEven).0.code() as i16
            })
            .collect();
        Ok(ActLut { kind, out_format, table })
    }

    pub fn kind(&self) -> Activation {
        self.kind
    }

    pub fn out_format(&self) -> QFormat {
        self.out_format
    }

    pub fn out_bits(&self) -> u32 {
        self.out_format.total_bits()
    }

    /// Table lookup on a raw Q8.8 code.
    #[inline]
    pub fn lookup(&self, code: i16) -> i16 {
        self.table[(code as i32 - i16::MIN as i32) as usize]
    }

    /// Table lookup re-expressed in Q8.8. The shift is lossless because the
    /// output has at most 8 fraction bits.
    #[inline]
    pub fn lookup_q8_8(&self, code: i16) -> i16 {
        self.lookup(code) << (8 - self.out_format.frac_bits())
    }

    pub fn eval(&self, x: FixedWord) -> Result<FixedWord, LutError> {
        if x.format() != QFormat::Q8_8 {
            return Err(LutError::FormatMismatch(x.format()));
        }
        let out = self.lookup(x.code() as i16) as i64;
        Ok(FixedWord::new(out, self.out_format).expect("table entries fit the output format"))
    }
}

/// The sigmoid/tanh pair used by one network run.
#[derive(Debug, Clone)]
pub struct LutPair {
    pub sigmoid: ActLut,
    pub tanh: ActLut,
}

impl LutPair {
    pub fn new(out_bits: u32) -> Result<Self, LutError> {
        Ok(LutPair {
            sigmoid: ActLut::build(Activation::Sigmoid, out_bits)?,
            tanh: ActLut::build(Activation::Tanh, out_bits)?,
        })
    }

    pub fn out_bits(&self) -> u32 {
        self.sigmoid.out_bits()
    }
}
