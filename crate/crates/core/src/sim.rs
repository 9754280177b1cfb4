//! Cycle-level functional model of the delta-RNN accelerator.
//!
//! Per layer and timestep the model runs three phases:
//!
//! 1. **Delta Unit** scans the x-part (bias slot first) and then the h-part,
//!    one element per cycle per unit, writing suprathreshold deltas and their
//!    column pointers into the D-FIFO and updating its state memory.
//! 2. **PE array** pops one valid column at a time, fetches its `3H`
//!    weights from DRAM and multiplies them by the delta. Row `r` belongs to
//!    PE `r mod K`, whose ACC memory slice holds that row's partial sums, so
//!    a column costs `ceil(3H/K)` cycles.
//! 3. **Activation** reads the delta memories back out of the ACC slices
//!    and produces `h_t`, costing `ceil(3H/K)` cycles.
//!
//! The Delta Unit scan overlaps the MxV, so a layer step costs
//! `max(delta, mxv) + act` cycles. Numerics are bit-identical to
//! [`crate::deltagru`]; the cycle model never touches them.

use std::collections::VecDeque;

use rand::Rng;

use crate::deltagru::{
    gru_cell_output, mac_into, DeltaVector, LayerState, Network, SparsityTally, GruLayerParams, ONE_Q8_8,
};
use crate::error::ModelError;
use crate::lut::LutPair;
use crate::synth;

/// Accelerator parameters. Defaults: 8 PEs, 125 MHz, 64-bit DRAM port,
/// 8-bit weights, one Delta Unit, 5-bit LUTs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccelConfig {
    pub pes: usize,
    pub clock_hz: f64,
    pub dram_bits: u32,
    pub weight_bits: u32,
    pub index_bits: u32,
    pub delta_units: usize,
    /// Subsection length scanned by each Delta Unit when `delta_units > 1`.
    pub lookahead: usize,
    pub lut_out_bits: u32,
}

impl Default for AccelConfig {
    fn default() -> Self {
        AccelConfig {
            pes: 8,
            clock_hz: 125e6,
            dram_bits: 64,
            weight_bits: 8,
            index_bits: 0,
            delta_units: 1,
            lookahead: 1,
            lut_out_bits: 5,
        }
    }
}

impl AccelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.pes == 0 {
            return bad("PE count must be at least 1".into());
        }
        if self.clock_hz.is_nan() || self.clock_hz <= 0.0 {
            return bad(format!("clock must be positive, got {}", self.clock_hz));
        }
        if self.dram_bits == 0 {
            return bad("DRAM width must be positive".into());
        }
        if !matches!(self.weight_bits, 1 | 2 | 4 | 8 | 16) {
            return Err(ModelError::UnsupportedWeightWidth(self.weight_bits));
        }
        if self.delta_units == 0 || self.lookahead == 0 {
            return bad("delta units and lookahead must be at least 1".into());
        }
        if !(5..=9).contains(&self.lut_out_bits) {
            return bad(format!("LUT output width {} outside 5..=9", self.lut_out_bits));
        }
        Ok(())
    }

    fn check_layer(&self, params: &GruLayerParams) -> Result<(), ModelError> {
        self.validate()?;
        let bits = params.weight_format().total_bits();
        if bits != self.weight_bits {
            return Err(ModelError::InvalidConfig(format!(
                "layer uses {bits}-bit weights, accelerator configured for {}",
                self.weight_bits
            )));
        }
        Ok(())
    }

    /// Cycles the Delta Unit(s) spend on a vector of `len` elements with
    /// `nnz` suprathreshold entries.
    pub fn delta_scan_cycles(&self, len: usize, nnz: usize) -> u64 {
        if self.delta_units == 1 {
            return len as u64;
        }
        let window = (self.delta_units * self.lookahead) as u64;
        (len as u64).div_ceil(window).max(nnz as u64)
    }

    /// MAC cycles per valid column.
    pub fn column_mac_cycles(&self, rows: usize) -> u64 {
        (rows as u64).div_ceil(self.pes as u64)
    }

    /// DRAM cycles to stream one column of `rows` weights.
    pub fn column_fetch_cycles(&self, rows: usize) -> u64 {
        (rows as u64 * self.weight_bits as u64).div_ceil(self.dram_bits as u64)
    }
}

/// PE that owns `row` under interleaved row assignment.
pub fn interleaved_row_assignment(row: usize, pes: usize) -> usize {
    row % pes
}

/// Counters for one or more layer steps. Per-layer vectors are indexed by
/// layer.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExecutionStats {
    pub cycles_delta: u64,
    pub cycles_mxv: u64,
    pub cycles_act: u64,
    /// DRAM transfer cycles for the fetched columns.
    pub cycles_fetch: u64,
    /// Sum over layer steps of `max(delta, mxv) + act`.
    pub cycles_total: u64,
    pub valid_columns_x: Vec<u64>,
    pub valid_columns_h: Vec<u64>,
    pub weight_bits_fetched: u64,
    /// Two ops per MAC of the dense equivalent, biases excluded.
    pub ops_effective: u64,
    pub saturation_events: u64,
    /// MACs executed by each PE.
    pub pe_macs: Vec<u64>,
    pub tally: Vec<SparsityTally>,
}

impl ExecutionStats {
    fn for_layers(layers: usize, pes: usize) -> Self {
        ExecutionStats {
            valid_columns_x: vec![0; layers],
            valid_columns_h: vec![0; layers],
            pe_macs: vec![0; pes],
            tally: vec![SparsityTally::default(); layers],
            ..Default::default()
        }
    }

    /// Fold `other` (covering the same layers) into `self`.
    pub fn merge(&mut self, other: &ExecutionStats) {
        self.cycles_delta += other.cycles_delta;
        self.cycles_mxv += other.cycles_mxv;
        self.cycles_act += other.cycles_act;
        self.cycles_fetch += other.cycles_fetch;
        self.cycles_total += other.cycles_total;
        self.weight_bits_fetched += other.weight_bits_fetched;
        self.ops_effective += other.ops_effective;
        self.saturation_events += other.saturation_events;
        let grow = |v: &mut Vec<u64>, n: usize| {
            if v.len() < n {
                v.resize(n, 0)
            }
        };
        grow(&mut self.valid_columns_x, other.valid_columns_x.len());
        grow(&mut self.valid_columns_h, other.valid_columns_h.len());
        grow(&mut self.pe_macs, other.pe_macs.len());
        if self.tally.len() < other.tally.len() {
            self.tally.resize(other.tally.len(), SparsityTally::default());
        }
        for (a, b) in self.valid_columns_x.iter_mut().zip(&other.valid_columns_x) {
            *a += b;
        }
        for (a, b) in self.valid_columns_h.iter_mut().zip(&other.valid_columns_h) {
            *a += b;
        }
        for (a, b) in self.pe_macs.iter_mut().zip(&other.pe_macs) {
            *a += b;
        }
        for (a, b) in self.tally.iter_mut().zip(&other.tally) {
            a.add(b);
        }
    }

    pub fn valid_columns(&self) -> u64 {
        self.valid_columns_x.iter().sum::<u64>() + self.valid_columns_h.iter().sum::<u64>()
    }

    pub fn latency_seconds(&self, cfg: &AccelConfig) -> f64 {
        self.cycles_total as f64 / cfg.clock_hz
    }

    /// Effective throughput in Op/s over the counted work.
    pub fn effective_throughput(&self, cfg: &AccelConfig) -> f64 {
        self.ops_effective as f64 / self.latency_seconds(cfg)
    }

    pub fn gamma_dx(&self) -> f64 {
        let (z, t) = self.tally.iter().fold((0, 0), |(z, t), l| (z + l.x_zeros, t + l.x_total));
        z as f64 / t as f64
    }

    pub fn gamma_dh(&self) -> f64 {
        let (z, t) = self.tally.iter().fold((0, 0), |(z, t), l| (z + l.h_zeros, t + l.h_total));
        z as f64 / t as f64
    }
}

/// Which delta vector a D-FIFO entry came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Part {
    X,
    H,
}

#[derive(Debug, Clone, Copy)]
struct FifoEntry {
    /// Column pointer into the concatenated matrix.
    pcol: usize,
    value: i32,
    part: Part,
}

/// ACC memory slice of one PE. Local slot `i` holds global row `pe + i*K`;
/// candidate-gate rows keep the input and hidden partial sums apart.
#[derive(Debug, Clone, PartialEq, Eq)]
struct PeSlice {
    acc: Vec<i32>,
    acc_hc: Vec<i32>,
}

/// Hardware-side state of one layer: Delta Unit BRAM, ACC memories and the
/// previous output held in the output buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimLayerState {
    x_mem: Vec<i16>,
    h_mem: Vec<i16>,
    h_prev: Vec<i16>,
    slices: Vec<PeSlice>,
    hidden: usize,
    t: u64,
}

impl SimLayerState {
    pub fn new(params: &GruLayerParams, cfg: &AccelConfig) -> Self {
        let rows = params.rows();
        let k = cfg.pes.max(1);
        let slices = (0..k)
            .map(|pe| {
                let n = (pe..rows).step_by(k).count();
                PeSlice { acc: vec![0; n], acc_hc: vec![0; n] }
            })
            .collect();
        SimLayerState {
            x_mem: vec![0; 1 + params.input_dim()],
            h_mem: vec![0; params.hidden()],
            h_prev: vec![0; params.hidden()],
            slices,
            hidden: params.hidden(),
            t: 0,
        }
    }

    fn acc_row(&self, row: usize, hc: bool) -> i32 {
        let k = self.slices.len();
        let slice = &self.slices[interleaved_row_assignment(row, k)];
        if hc {
            slice.acc_hc[row / k]
        } else {
            slice.acc[row / k]
        }
    }

    /// The same state in the functional model's layout.
    pub fn to_layer_state(&self) -> LayerState {
        let h = self.hidden;
        LayerState {
            x_mem: self.x_mem.clone(),
            h_mem: self.h_mem.clone(),
            h_prev: self.h_prev.clone(),
            m_r: (0..h).map(|j| self.acc_row(j, false)).collect(),
            m_u: (0..h).map(|j| self.acc_row(h + j, false)).collect(),
            m_xc: (0..h).map(|j| self.acc_row(2 * h + j, false)).collect(),
            m_hc: (0..h).map(|j| self.acc_row(2 * h + j, true)).collect(),
            t: self.t,
        }
    }

    pub fn h_prev(&self) -> &[i16] {
        &self.h_prev
    }
}

/// Delta Unit scan of one state vector: compares element by element against
/// state memory and pushes suprathreshold entries into the D-FIFO. Element
/// 0 of the x-part is the bias slot, which fires on any change.
fn delta_unit_scan(s: &[i16], mem: &mut [i16], theta: i16, part: Part, col_base: usize, bias_slot: bool, fifo: &mut VecDeque<FifoEntry>) -> usize {
    let mut pushed = 0;
    for (i, (&v, m)) in s.iter().zip(mem.iter_mut()).enumerate() {
        let d = v as i32 - *m as i32;
        let fires = if bias_slot && i == 0 { d != 0 } else { d.abs() >= theta as i32 };
        if fires {
            *m = v;
            if d != 0 {
                fifo.push_back(FifoEntry { pcol: col_base + i, value: d, part });
                pushed += 1;
            }
        }
    }
    pushed
}

/// Drain the D-FIFO through the PE array.
fn pe_array_mxv(cfg: &AccelConfig, params: &GruLayerParams, state: &mut SimLayerState, fifo: &mut VecDeque<FifoEntry>, stats: &mut ExecutionStats, layer: usize) {
    let rows = params.rows();
    let h = params.hidden();
    let k = state.slices.len();
    let acc = params.acc_format();
    let col_cycles = cfg.column_mac_cycles(rows);
    let fetch_cycles = cfg.column_fetch_cycles(rows);
    while let Some(entry) = fifo.pop_front() {
        let column = params.column(entry.pcol);
        stats.weight_bits_fetched += rows as u64 * cfg.weight_bits as u64;
        stats.cycles_fetch += fetch_cycles;
        stats.cycles_mxv += col_cycles;
        match entry.part {
            Part::X => stats.valid_columns_x[layer] += 1,
            Part::H => stats.valid_columns_h[layer] += 1,
        }
        for (pe, slice) in state.slices.iter_mut().enumerate() {
            for (local, row) in (pe..rows).step_by(k).enumerate() {
                let target = if entry.part == Part::H && row >= 2 * h { &mut slice.acc_hc[local] } else { &mut slice.acc[local] };
                stats.saturation_events += mac_into(target, column[row], entry.value, acc) as u64;
            }
            stats.pe_macs[pe] += slice.acc.len() as u64;
        }
    }
}

/// Activation phase: read the delta memories out of the ACC slices and
/// produce `h_t`.
fn activation_phase(cfg: &AccelConfig, params: &GruLayerParams, luts: &LutPair, state: &mut SimLayerState, stats: &mut ExecutionStats) -> Vec<i16> {
    let h = params.hidden();
    let acc = params.acc_format();
    let h_t: Vec<i16> = (0..h)
        .map(|j| {
            let (code, sat) = gru_cell_output(
                state.acc_row(j, false),
                state.acc_row(h + j, false),
                state.acc_row(2 * h + j, false),
                state.acc_row(2 * h + j, true),
                state.h_prev[j],
                acc,
                luts,
            );
            stats.saturation_events += sat as u64;
            code
        })
        .collect();
    stats.cycles_act += cfg.column_mac_cycles(params.rows());
    h_t
}

fn finish_step(cfg: &AccelConfig, params: &GruLayerParams, state: &mut SimLayerState, h_t: &[i16], stats: &mut ExecutionStats) {
    stats.cycles_total = stats.cycles_delta.max(stats.cycles_mxv) + stats.cycles_act;
    stats.ops_effective = 2 * params.rows() as u64 * (params.input_dim() + params.hidden()) as u64;
    let _ = cfg;
    state.h_prev.copy_from_slice(h_t);
    state.t += 1;
}

/// One layer, one timestep through the accelerator. `layer` indexes the
/// per-layer counters in the returned stats (which are sized for
/// `layer + 1` layers).
pub fn sim_layer_step(
    cfg: &AccelConfig,
    params: &GruLayerParams,
    luts: &LutPair,
    state: &mut SimLayerState,
    x: &[i16],
    layer: usize,
) -> Result<(Vec<i16>, ExecutionStats), ModelError> {
    cfg.check_layer(params)?;
    if x.len() != params.input_dim() {
        return Err(ModelError::DimensionMismatch { what: "input vector", expected: params.input_dim(), got: x.len() });
    }
    let mut stats = ExecutionStats::for_layers(layer + 1, state.slices.len());
    let mut fifo = VecDeque::new();

    let mut x_slot = Vec::with_capacity(1 + x.len());
    x_slot.push(ONE_Q8_8);
    x_slot.extend_from_slice(x);
    let x_pushed = delta_unit_scan(&x_slot, &mut state.x_mem, params.theta_x(), Part::X, 0, true, &mut fifo);
    let bias = fifo.front().is_some_and(|e| e.pcol == 0);
    let h_prev = state.h_prev.clone();
    let h_pushed = delta_unit_scan(&h_prev, &mut state.h_mem, params.theta_h(), Part::H, params.h_column(0), false, &mut fifo);
    stats.cycles_delta = cfg.delta_scan_cycles(x_slot.len(), x_pushed) + cfg.delta_scan_cycles(h_prev.len(), h_pushed);
    stats.tally[layer] = SparsityTally {
        x_zeros: (x.len() - (x_pushed - bias as usize)) as u64,
        x_total: x.len() as u64,
        h_zeros: (h_prev.len() - h_pushed) as u64,
        h_total: h_prev.len() as u64,
    };

    pe_array_mxv(cfg, params, state, &mut fifo, &mut stats, layer);
    let h_t = activation_phase(cfg, params, luts, state, &mut stats);
    finish_step(cfg, params, state, &h_t, &mut stats);
    Ok((h_t, stats))
}

/// Like [`sim_layer_step`] but with externally supplied delta vectors in
/// place of the Delta Unit's output: used to drive the PE array with a
/// constructed sparsity pattern. State memories are left untouched; the
/// Delta Unit is still charged for scanning the full vectors.
pub fn sim_layer_step_with_deltas(
    cfg: &AccelConfig,
    params: &GruLayerParams,
    luts: &LutPair,
    state: &mut SimLayerState,
    dx: &DeltaVector,
    dh: &DeltaVector,
    layer: usize,
) -> Result<(Vec<i16>, ExecutionStats), ModelError> {
    cfg.check_layer(params)?;
    if dx.dense_len != 1 + params.input_dim() || dh.dense_len != params.hidden() {
        return Err(ModelError::DimensionMismatch {
            what: "delta vector",
            expected: 1 + params.input_dim() + params.hidden(),
            got: dx.dense_len + dh.dense_len,
        });
    }
    let mut stats = ExecutionStats::for_layers(layer + 1, state.slices.len());
    let mut fifo: VecDeque<FifoEntry> = dx
        .entries
        .iter()
        .map(|e| FifoEntry { pcol: params.x_column(e.index as usize), value: e.value, part: Part::X })
        .chain(dh.entries.iter().map(|e| FifoEntry { pcol: params.h_column(e.index as usize), value: e.value, part: Part::H }))
        .collect();
    let bias = dx.entries.first().is_some_and(|e| e.index == 0);
    stats.cycles_delta = cfg.delta_scan_cycles(dx.dense_len, dx.nnz()) + cfg.delta_scan_cycles(dh.dense_len, dh.nnz());
    stats.tally[layer] = SparsityTally {
        x_zeros: (params.input_dim() - (dx.nnz() - bias as usize)) as u64,
        x_total: params.input_dim() as u64,
        h_zeros: (dh.dense_len - dh.nnz()) as u64,
        h_total: dh.dense_len as u64,
    };
    pe_array_mxv(cfg, params, state, &mut fifo, &mut stats, layer);
    let h_t = activation_phase(cfg, params, luts, state, &mut stats);
    finish_step(cfg, params, state, &h_t, &mut stats);
    Ok((h_t, stats))
}

/// Result of a whole-sequence simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    /// `outputs[t][l]` is `h_t` of layer `l`.
    pub outputs: Vec<Vec<Vec<i16>>>,
    /// Counters per timestep, all layers merged.
    pub per_step: Vec<ExecutionStats>,
    pub total: ExecutionStats,
}

impl SimRun {
    fn step_latencies(&self, cfg: &AccelConfig) -> impl Iterator<Item = f64> + '_ {
        let f = cfg.clock_hz;
        self.per_step.iter().map(move |s| s.cycles_total as f64 / f)
    }

    /// Total simulated time in seconds.
    pub fn latency_seconds(&self, cfg: &AccelConfig) -> f64 {
        self.total.latency_seconds(cfg)
    }

    /// Mean per-timestep latency in seconds (NaN for an empty run).
    pub fn mean_step_latency(&self, cfg: &AccelConfig) -> f64 {
        self.latency_seconds(cfg) / self.per_step.len() as f64
    }

    pub fn min_step_latency(&self, cfg: &AccelConfig) -> f64 {
        self.step_latencies(cfg).fold(f64::NAN, f64::min)
    }

    pub fn max_step_latency(&self, cfg: &AccelConfig) -> f64 {
        self.step_latencies(cfg).fold(f64::NAN, f64::max)
    }

    pub fn effective_throughput(&self, cfg: &AccelConfig) -> f64 {
        self.total.effective_throughput(cfg)
    }
}

fn check_network(cfg: &AccelConfig, luts: &LutPair, net: &Network) -> Result<(), ModelError> {
    cfg.validate()?;
    if luts.out_bits() != cfg.lut_out_bits {
        return Err(ModelError::InvalidConfig(format!(
            "LUTs have {}-bit outputs, accelerator configured for {}",
            luts.out_bits(),
            cfg.lut_out_bits
        )));
    }
    for layer in net.layers() {
        cfg.check_layer(layer)?;
    }
    Ok(())
}

/// Simulate a whole sequence from the initial state.
pub fn sim_network_forward(cfg: &AccelConfig, net: &Network, luts: &LutPair, xs: &[Vec<i16>]) -> Result<SimRun, ModelError> {
    check_network(cfg, luts, net)?;
    let layers = net.layers();
    let mut states: Vec<SimLayerState> = layers.iter().map(|p| SimLayerState::new(p, cfg)).collect();
    let mut run = SimRun { outputs: Vec::with_capacity(xs.len()), per_step: Vec::with_capacity(xs.len()), total: ExecutionStats::for_layers(layers.len(), cfg.pes) };
    for x in xs {
        let mut step = ExecutionStats::for_layers(layers.len(), cfg.pes);
        let mut outs: Vec<Vec<i16>> = Vec::with_capacity(layers.len());
        for (l, (params, state)) in layers.iter().zip(&mut states).enumerate() {
            let input = if l == 0 { x.as_slice() } else { outs[l - 1].as_slice() };
            let (h, s) = sim_layer_step(cfg, params, luts, state, input, l)?;
            step.merge(&s);
            outs.push(h);
        }
        run.total.merge(&step);
        run.per_step.push(step);
        run.outputs.push(outs);
    }
    Ok(run)
}

/// Drive the PE array with random delta patterns whose zero fractions hit
/// `gamma_x` (input parts) and `gamma_h` (hidden parts) exactly over the
/// run, at uniformly random positions. The bias column fires at the first
/// step as in a real run.
pub fn sim_constructed_sparsity<R: Rng + ?Sized>(
    cfg: &AccelConfig,
    net: &Network,
    luts: &LutPair,
    gamma_x: f64,
    gamma_h: f64,
    steps: usize,
    rng: &mut R,
) -> Result<SimRun, ModelError> {
    check_network(cfg, luts, net)?;
    let layers = net.layers();
    let mut states: Vec<SimLayerState> = layers.iter().map(|p| SimLayerState::new(p, cfg)).collect();
    let schedules: Vec<(Vec<usize>, Vec<usize>)> = layers
        .iter()
        .map(|p| (synth::nonzero_schedule(p.input_dim(), steps, gamma_x), synth::nonzero_schedule(p.hidden(), steps, gamma_h)))
        .collect();
    let mut run = SimRun { outputs: Vec::with_capacity(steps), per_step: Vec::with_capacity(steps), total: ExecutionStats::for_layers(layers.len(), cfg.pes) };
    for t in 0..steps {
        let mut step = ExecutionStats::for_layers(layers.len(), cfg.pes);
        let mut outs = Vec::with_capacity(layers.len());
        for (l, (params, state)) in layers.iter().zip(&mut states).enumerate() {
            let (nx, nh) = (schedules[l].0[t], schedules[l].1[t]);
            let mut dx = synth::random_delta(rng, params.input_dim(), nx, 64);
            for e in &mut dx.entries {
                e.index += 1;
            }
            if t == 0 {
                dx.entries.insert(0, crate::deltagru::DeltaEntry { index: 0, value: ONE_Q8_8 as i32 });
            }
            dx.dense_len += 1;
            let dh = synth::random_delta(rng, params.hidden(), nh, 64);
            let (h, s) = sim_layer_step_with_deltas(cfg, params, luts, state, &dx, &dh, l)?;
            step.merge(&s);
            outs.push(h);
        }
        run.total.merge(&step);
        run.per_step.push(step);
        run.outputs.push(outs);
    }
    Ok(run)
}
