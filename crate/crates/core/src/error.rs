use thiserror::Error;

use crate::fixedpoint::QFormat;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FixedError {
    #[error("invalid fixed-point format: {total_bits} total bits, {frac_bits} fraction bits")]
    InvalidFormat { total_bits: u32, frac_bits: u32 },
    #[error("code {code} does not fit {format}")]
    CodeOutOfRange { code: i64, format: QFormat },
    #[error("exact product would need {total_bits} bits (limit 32)")]
    ProductTooWide { total_bits: u32 },
    #[error("operands not aligned: {left} vs {right}")]
    Misaligned { left: QFormat, right: QFormat },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LutError {
    #[error("LUT output width must be 5..=9 bits, got {0}")]
    InvalidOutputBits(u32),
    #[error("LUT input must be Q8.8, got {0}")]
    FormatMismatch(QFormat),
}

/// Shape and configuration errors for networks and simulator runs.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),
    #[error("delta threshold must be non-negative, got {0}")]
    NegativeThreshold(i32),
    #[error("unsupported weight width {0} (expected 1, 2, 4, 8 or 16)")]
    UnsupportedWeightWidth(u32),
    #[error("weight magnitude {max_abs} does not fit any {total_bits}-bit split")]
    WeightRange { max_abs: f64, total_bits: u32 },
    #[error("invalid accelerator configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Fixed(#[from] FixedError),
    #[error(transparent)]
    Lut(#[from] LutError),
}

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("unsupported container version or bad magic: {found:?}")]
    UnsupportedVersion { found: [u8; 8] },
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    Length { expected: usize, found: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PerfError {
    #[error("DRAM width {dram} is not a multiple of weight width {weight}")]
    NonDivisibleWidths { dram: u32, weight: u32 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no elements were tallied")]
    ZeroTotals,
}
