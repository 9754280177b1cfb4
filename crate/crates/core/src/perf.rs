//! Closed-form performance model: temporal sparsity, Delta Unit latency,
//! PE sizing, batch-1 effective throughput and bandwidth-normalized
//! comparison across accelerators.

use crate::deltagru::{GruDims, SparsityTally};
use crate::error::PerfError;

/// Pooled temporal sparsity of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityReport {
    pub gamma_dx: f64,
    pub gamma_dh: f64,
    pub gamma_eff: f64,
    pub per_layer: Vec<SparsityTally>,
}

/// Parameter-weighted blend of input and hidden sparsity. The input side
/// covers `I + H(L-1)` columns per gate row, the hidden side `HL`.
pub fn gamma_eff(dims: GruDims, gamma_dx: f64, gamma_dh: f64) -> f64 {
    let (i, h, l) = (dims.input as f64, dims.hidden as f64, dims.layers as f64);
    let wx = i + h * (l - 1.0);
    let wh = h * l;
    (wx * gamma_dx + wh * gamma_dh) / (wx + wh)
}

/// Count-based sparsity: total zeros over total elements per vector kind,
/// pooled across layers and timesteps.
pub fn sparsity_from_counts(dims: GruDims, counts: &[SparsityTally]) -> Result<SparsityReport, PerfError> {
    let mut pooled = SparsityTally::default();
    for c in counts {
        pooled.add(c);
    }
    if pooled.x_total == 0 || pooled.h_total == 0 {
        return Err(PerfError::ZeroTotals);
    }
    let gamma_dx = pooled.x_zeros as f64 / pooled.x_total as f64;
    let gamma_dh = pooled.h_zeros as f64 / pooled.h_total as f64;
    Ok(SparsityReport { gamma_dx, gamma_dh, gamma_eff: gamma_eff(dims, gamma_dx, gamma_dh), per_layer: counts.to_vec() })
}

/// Input sparsity normalized term by term as originally written: the first
/// layer's zero count over `L*T*I` plus the deeper layers' over
/// `(L-1)*T*H`. Kept for comparison with [`sparsity_from_counts`]; for
/// `L > 1` it is not a pooled fraction.
pub fn gamma_dx_literal(dims: GruDims, counts: &[SparsityTally], steps: u64) -> f64 {
    let (l, t) = (dims.layers as f64, steps as f64);
    let first = counts.first().map_or(0, |c| c.x_zeros) as f64 / (l * t * dims.input as f64);
    if dims.layers < 2 {
        return first;
    }
    let deeper: u64 = counts.iter().skip(1).map(|c| c.x_zeros).sum();
    first + deeper as f64 / ((l - 1.0) * t * dims.hidden as f64)
}

/// Cycles for `units` Delta Units, each scanning `window` elements ahead, to
/// encode a vector of `len` elements with sparsity `gamma`.
pub fn delta_unit_latency(len: u64, units: u64, window: u64, gamma: f64) -> Result<u64, PerfError> {
    if len == 0 || units == 0 || window == 0 {
        return Err(PerfError::InvalidArgument("vector length, unit count and window must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(PerfError::InvalidArgument(format!("sparsity {gamma} outside [0, 1]")));
    }
    let scan = len.div_ceil(units * window);
    // guard against 100 * (1 - 0.9) = 10.000000000000002
    let busy = (len as f64 * (1.0 - gamma) - 1e-9).ceil().max(0.0) as u64;
    Ok(scan.max(busy))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeSizing {
    pub pes: u32,
    /// Op/s, two ops per MAC per cycle.
    pub peak_throughput: f64,
}

/// Number of PEs a DRAM port can keep busy, and the resulting peak.
pub fn pe_sizing(dram_bits: u32, weight_bits: u32, clock_hz: f64) -> Result<PeSizing, PerfError> {
    if weight_bits == 0 || dram_bits == 0 || !dram_bits.is_multiple_of(weight_bits) {
        return Err(PerfError::NonDivisibleWidths { dram: dram_bits, weight: weight_bits });
    }
    let pes = dram_bits / weight_bits;
    Ok(PeSizing { pes, peak_throughput: 2.0 * clock_hz * pes as f64 })
}

/// Dense-equivalent operations per timestep (biases excluded).
pub fn op_count(dims: GruDims) -> u64 {
    let (i, h, l) = (dims.input as u64, dims.hidden as u64, dims.layers as u64);
    2 * (3 * h * i + 3 * h * h * (l - 1) + 3 * h * h * l)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerfEstimate {
    pub op_per_timestep: u64,
    /// MxV time, seconds.
    pub tau_m: f64,
    /// Activation time, seconds.
    pub tau_a: f64,
    pub latency: f64,
    /// Op/s.
    pub throughput_eff: f64,
}

/// Mean batch-1 latency and effective throughput of a network whose delta
/// vectors have the given sparsities, on `pes` PEs at `clock_hz`.
pub fn effective_throughput(dims: GruDims, gamma_dx: f64, gamma_dh: f64, pes: u32, clock_hz: f64) -> Result<PerfEstimate, PerfError> {
    for g in [gamma_dx, gamma_dh] {
        if !(0.0..=1.0).contains(&g) {
            return Err(PerfError::InvalidArgument(format!("sparsity {g} outside [0, 1]")));
        }
    }
    if pes == 0 || clock_hz.is_nan() || clock_hz <= 0.0 {
        return Err(PerfError::InvalidArgument("PE count and clock must be positive".into()));
    }
    let (i, h, l) = (dims.input as f64, dims.hidden as f64, dims.layers as f64);
    let rate = pes as f64 * clock_hz;
    let x_macs = 3.0 * h * i + 3.0 * h * h * (l - 1.0);
    let h_macs = 3.0 * h * h * l;
    let tau_m = (x_macs * (1.0 - gamma_dx) + h_macs * (1.0 - gamma_dh)) / rate;
    let tau_a = 3.0 * h / rate;
    let latency = tau_m + tau_a;
    let op = op_count(dims);
    Ok(PerfEstimate { op_per_timestep: op, tau_m, tau_a, latency, throughput_eff: op as f64 / latency })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedThroughput {
    /// Op/s when weight (and index) fetch bandwidth is the only limit.
    pub peak_mem: f64,
    /// Upper bound with all sparsity exploited; infinite when `gamma_eff == 1`.
    pub eff_norm: f64,
}

/// Bandwidth-bound peak for a platform streaming `weight_bits + index_bits`
/// per weight over a `dram_bits` port, and its sparsity-scaled bound.
pub fn normalized_throughput(dram_bits: u32, weight_bits: u32, index_bits: u32, clock_hz: f64, gamma_eff: f64) -> Result<NormalizedThroughput, PerfError> {
    if dram_bits == 0 || weight_bits + index_bits == 0 || clock_hz.is_nan() || clock_hz <= 0.0 {
        return Err(PerfError::InvalidArgument("widths and clock must be positive".into()));
    }
    if !(0.0..=1.0).contains(&gamma_eff) {
        return Err(PerfError::InvalidArgument(format!("sparsity {gamma_eff} outside [0, 1]")));
    }
    let peak_mem = 2.0 * clock_hz * dram_bits as f64 / (weight_bits + index_bits) as f64;
    let eff_norm = if gamma_eff >= 1.0 { f64::INFINITY } else { peak_mem / (1.0 - gamma_eff) };
    Ok(NormalizedThroughput { peak_mem, eff_norm })
}

/// Factor by which skipping zero-delta columns cuts weight traffic.
pub fn memory_traffic_reduction(gamma_eff: f64) -> Result<f64, PerfError> {
    if !(0.0..1.0).contains(&gamma_eff) {
        return Err(PerfError::InvalidArgument(format!("sparsity {gamma_eff} must lie in [0, 1)")));
    }
    Ok(1.0 / (1.0 - gamma_eff))
}

/// Published reference operating points used by the CLI's reproduction
/// modes and the acceptance tests.
pub mod reference {
    /// Network shape, measured sparsities and estimated latency (µs) and
    /// throughput (GOp/s) for the six benchmarked networks (I = 40).
    #[derive(Debug, Clone, Copy)]
    pub struct NetworkRow {
        pub layers: usize,
        pub hidden: usize,
        pub gamma_dx: f64,
        pub gamma_dh: f64,
        pub est_latency_us: f64,
        pub est_throughput_gops: f64,
    }

    pub const INPUT_DIM: usize = 40;

    pub const NETWORKS: [NetworkRow; 6] = [
        NetworkRow { layers: 1, hidden: 256, gamma_dx: 0.256, gamma_dh: 0.900, est_latency_us: 43.3, est_throughput_gops: 10.5 },
        NetworkRow { layers: 2, hidden: 256, gamma_dx: 0.789, gamma_dh: 0.891, est_latency_us: 91.6, est_throughput_gops: 13.6 },
        NetworkRow { layers: 1, hidden: 512, gamma_dx: 0.256, gamma_dh: 0.895, est_latency_us: 129.8, est_throughput_gops: 13.1 },
        NetworkRow { layers: 2, hidden: 512, gamma_dx: 0.855, gamma_dh: 0.912, est_latency_us: 262.9, est_throughput_gops: 18.4 },
        NetworkRow { layers: 1, hidden: 768, gamma_dx: 0.256, gamma_dh: 0.913, est_latency_us: 224.8, est_throughput_gops: 16.6 },
        NetworkRow { layers: 2, hidden: 768, gamma_dx: 0.870, gamma_dh: 0.916, est_latency_us: 541.6, est_throughput_gops: 19.9 },
    ];

    /// An accelerator normalized to a 64-bit port, 8-bit weights and
    /// 125 MHz; only the index overhead and sparsity differ.
    #[derive(Debug, Clone, Copy)]
    pub struct Platform {
        pub name: &'static str,
        pub index_bits: u32,
        /// `None` when the platform exploits no sparsity.
        pub gamma_eff: Option<f64>,
        pub peak_mem_gops: f64,
        pub eff_norm_gops: Option<f64>,
    }

    pub const DRAM_BITS: u32 = 64;
    pub const WEIGHT_BITS: u32 = 8;
    pub const CLOCK_HZ: f64 = 125e6;

    pub const PLATFORMS: [Platform; 5] = [
        Platform { name: "EdgeDRNN", index_bits: 0, gamma_eff: Some(0.900), peak_mem_gops: 2.0, eff_norm_gops: Some(20.0) },
        Platform { name: "BBS", index_bits: 4, gamma_eff: Some(0.875), peak_mem_gops: 1.3, eff_norm_gops: Some(10.7) },
        Platform { name: "DeltaRNN", index_bits: 0, gamma_eff: Some(0.882), peak_mem_gops: 2.0, eff_norm_gops: Some(17.0) },
        Platform { name: "ESE", index_bits: 4, gamma_eff: Some(0.887), peak_mem_gops: 1.3, eff_norm_gops: Some(11.5) },
        Platform { name: "DeepRnn", index_bits: 0, gamma_eff: None, peak_mem_gops: 2.0, eff_norm_gops: None },
    ];
}
