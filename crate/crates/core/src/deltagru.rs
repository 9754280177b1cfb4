//! Functional GRU and DeltaGRU reference.
//!
//! Activations and state memories are raw Q8.8 codes (`i16`). Weights live in
//! one concatenated matrix per layer with `3H` rows and `1 + I + H` columns:
//! column 0 holds the biases, then the input columns, then the hidden
//! columns. Row blocks `[0,H)`, `[H,2H)`, `[2H,3H)` belong to the reset,
//! update and candidate gates.
//!
//! Pre-activations accumulate in 32-bit words whose fraction width is that of
//! an exact activation-times-weight product, so accumulating deltas at zero
//! threshold telescopes to exactly the dense sum.

use crate::error::ModelError;
use crate::fixedpoint::{requantize, round_shift, saturate, QFormat, Rounding};
use crate::lut::LutPair;

/// Q8.8 code for 1.0, the value of the appended bias slot.
pub const ONE_Q8_8: i16 = 256;

const ACT_FRAC: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GruDims {
    pub layers: usize,
    pub input: usize,
    pub hidden: usize,
}

impl GruDims {
    pub fn new(layers: usize, input: usize, hidden: usize) -> Result<Self, ModelError> {
        if layers == 0 || input == 0 || hidden == 0 {
            return Err(ModelError::InvalidDims(format!(
                "L={layers}, I={input}, H={hidden}: all must be at least 1"
            )));
        }
        Ok(GruDims { layers, input, hidden })
    }

    /// Input width of layer `l` (0-based).
    pub fn layer_input(&self, l: usize) -> usize {
        if l == 0 {
            self.input
        } else {
            self.hidden
        }
    }
}

/// One quantized GRU layer in concatenated-matrix form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GruLayerParams {
    input: usize,
    hidden: usize,
    weight_format: QFormat,
    /// Column-major, `3H` codes per column.
    weights: Vec<i16>,
    theta_x: i16,
    theta_h: i16,
}

impl GruLayerParams {
    pub fn new(
        input: usize,
        hidden: usize,
        weight_format: QFormat,
        weights: Vec<i16>,
        theta_x: i16,
        theta_h: i16,
    ) -> Result<Self, ModelError> {
        if input == 0 || hidden == 0 {
            return Err(ModelError::InvalidDims(format!("layer I={input}, H={hidden}")));
        }
        let bits = weight_format.total_bits();
        if !matches!(bits, 1 | 2 | 4 | 8 | 16) {
            return Err(ModelError::UnsupportedWeightWidth(bits));
        }
        let expected = 3 * hidden * (1 + input + hidden);
        if weights.len() != expected {
            return Err(ModelError::DimensionMismatch {
                what: "concatenated weight matrix",
                expected,
                got: weights.len(),
            });
        }
        if let Some(&bad) = weights.iter().find(|&&w| !weight_format.contains(w as i64)) {
            return Err(crate::error::FixedError::CodeOutOfRange { code: bad as i64, format: weight_format }.into());
        }
        for theta in [theta_x, theta_h] {
            if theta < 0 {
                return Err(ModelError::NegativeThreshold(theta as i32));
            }
        }
        Ok(GruLayerParams { input, hidden, weight_format, weights, theta_x, theta_h })
    }

    /// Build from a `(row, col) -> code` function over the concatenated matrix.
    pub fn from_fn(
        input: usize,
        hidden: usize,
        weight_format: QFormat,
        theta_x: i16,
        theta_h: i16,
        mut f: impl FnMut(usize, usize) -> i16,
    ) -> Result<Self, ModelError> {
        let rows = 3 * hidden;
        let cols = 1 + input + hidden;
        let mut weights = Vec::with_capacity(rows * cols);
        for col in 0..cols {
            for row in 0..rows {
                weights.push(f(row, col));
            }
        }
        Self::new(input, hidden, weight_format, weights, theta_x, theta_h)
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn rows(&self) -> usize {
        3 * self.hidden
    }

    pub fn cols(&self) -> usize {
        1 + self.input + self.hidden
    }

    pub fn weight_format(&self) -> QFormat {
        self.weight_format
    }

    pub fn acc_format(&self) -> QFormat {
        QFormat::accumulator_for(self.weight_format)
    }

    pub fn theta_x(&self) -> i16 {
        self.theta_x
    }

    pub fn theta_h(&self) -> i16 {
        self.theta_h
    }

    pub fn set_thresholds(&mut self, theta_x: i16, theta_h: i16) -> Result<(), ModelError> {
        for theta in [theta_x, theta_h] {
            if theta < 0 {
                return Err(ModelError::NegativeThreshold(theta as i32));
            }
        }
        self.theta_x = theta_x;
        self.theta_h = theta_h;
        Ok(())
    }

    /// Column `col` of the concatenated matrix (rows `0..3H`).
    #[inline]
    pub fn column(&self, col: usize) -> &[i16] {
        let rows = self.rows();
        &self.weights[col * rows..(col + 1) * rows]
    }

    /// Column index of x-part element `i` (0 is the bias slot).
    #[inline]
    pub fn x_column(&self, i: usize) -> usize {
        i
    }

    /// Column index of hidden element `j`.
    #[inline]
    pub fn h_column(&self, j: usize) -> usize {
        1 + self.input + j
    }

    pub fn weight(&self, row: usize, col: usize) -> i16 {
        self.weights[col * self.rows() + row]
    }

    /// Column-major codes of the whole matrix.
    pub fn weights(&self) -> &[i16] {
        &self.weights
    }

    /// Real-valued parameters represented by the quantized codes.
    pub fn dequantize(&self) -> RealLayerParams {
        let (h, i) = (self.hidden, self.input);
        let fmt = self.weight_format;
        let real = |row: usize, col: usize| fmt.to_real(self.weight(row, col) as i64);
        let mut params = RealLayerParams::zeros(i, h);
        for g in 0..3 {
            for r in 0..h {
                let row = g * h + r;
                params.b[g][r] = real(row, 0);
                for c in 0..i {
                    params.w_x[g][r * i + c] = real(row, self.x_column(1 + c));
                }
                for c in 0..h {
                    params.w_h[g][r * h + c] = real(row, self.h_column(c));
                }
            }
        }
        params
    }
}

/// Real-valued GRU layer parameters, gate order (r, u, c). Matrices are
/// row-major: `w_x[g]` is `H x I`, `w_h[g]` is `H x H`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealLayerParams {
    pub input: usize,
    pub hidden: usize,
    pub w_x: [Vec<f64>; 3],
    pub w_h: [Vec<f64>; 3],
    pub b: [Vec<f64>; 3],
}

impl RealLayerParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        RealLayerParams {
            input,
            hidden,
            w_x: std::array::from_fn(|_| vec![0.0; hidden * input]),
            w_h: std::array::from_fn(|_| vec![0.0; hidden * hidden]),
            b: std::array::from_fn(|_| vec![0.0; hidden]),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn matvec(m: &[f64], v: &[f64], out_len: usize) -> Vec<f64> {
    let n = v.len();
    (0..out_len).map(|r| m[r * n..(r + 1) * n].iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// One dense GRU step in double precision with exact sigmoid and tanh.
pub fn dense_gru_step_float(params: &RealLayerParams, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>, ModelError> {
    let h = params.hidden;
    check_len("input vector", params.input, x.len())?;
    check_len("previous hidden state", h, h_prev.len())?;
    let pre = |g: usize| -> (Vec<f64>, Vec<f64>) { (matvec(&params.w_x[g], x, h), matvec(&params.w_h[g], h_prev, h)) };
    let (xr, hr) = pre(0);
    let (xu, hu) = pre(1);
    let (xc, hc) = pre(2);
    Ok((0..h)
        .map(|j| {
            let r = sigmoid(xr[j] + hr[j] + params.b[0][j]);
            let u = sigmoid(xu[j] + hu[j] + params.b[1][j]);
            let c = (xc[j] + r * hc[j] + params.b[2][j]).tanh();
            (1.0 - u) * c + u * h_prev[j]
        })
        .collect())
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), ModelError> {
    if expected != got {
        return Err(ModelError::DimensionMismatch { what, expected, got });
    }
    Ok(())
}

/// Output of the activation stage for one neuron.
///
/// `r = σ(M_r)`, `u = σ(M_u)`, `c = tanh(M_xc + r·M_hc)`,
/// `h = (1-u)·c + u·h_prev`. The `r·M_hc` product is rounded once into the
/// accumulator format; the final blend is formed exactly in 32 bits with 16
/// fraction bits and rounded once to Q8.8. Returns the new code and the
/// number of saturation events.
#[inline]
pub fn gru_cell_output(m_r: i32, m_u: i32, m_xc: i32, m_hc: i32, h_prev: i16, acc: QFormat, luts: &LutPair) -> (i16, u32) {
    let acc_frac = acc.frac_bits();
    let to_q88 = |m: i64| -> (i16, u32) {
        let (code, s) = requantize(m, acc_frac, QFormat::Q8_8, Rounding::NearestEven);
        (code as i16, s as u32)
    };
    let (r_in, s_r) = to_q88(m_r as i64);
    let (u_in, s_u) = to_q88(m_u as i64);
    let r = luts.sigmoid.lookup_q8_8(r_in) as i64;
    let u = luts.sigmoid.lookup_q8_8(u_in) as i64;
    let (gated, s1) = saturate(round_shift(r * m_hc as i64, ACT_FRAC as i32, Rounding::NearestEven), acc);
    let (pre_c, s2) = saturate(m_xc as i128 + gated as i128, acc);
    let (c_in, s_c) = to_q88(pre_c);
    let c = luts.tanh.lookup_q8_8(c_in) as i64;
    let sat = s_r + s_u + s_c + s1 as u32 + s2 as u32;
    let wide = QFormat::new(32, 2 * ACT_FRAC).expect("valid");
    let (blend, s3) = saturate(((ONE_Q8_8 as i64 - u) * c + u * h_prev as i64) as i128, wide);
    let (h, s4) = requantize(blend, 2 * ACT_FRAC, QFormat::Q8_8, Rounding::NearestEven);
    (h as i16, sat + s3 as u32 + s4 as u32)
}

/// Add `w * delta` for every row of a weight column into the target
/// accumulators, saturating. Returns the number of saturation events.
#[inline]
pub(crate) fn mac_into(acc: &mut i32, weight: i16, value: i32, format: QFormat) -> u32 {
    let (sum, sat) = saturate(*acc as i128 + weight as i128 * value as i128, format);
    *acc = sum as i32;
    sat as u32
}

/// Dense fixed-point GRU step: the bit-exact baseline for DeltaGRU at zero
/// thresholds. Returns the new hidden state and the saturation count.
pub fn dense_gru_step_fixed(params: &GruLayerParams, luts: &LutPair, x: &[i16], h_prev: &[i16]) -> Result<(Vec<i16>, u32), ModelError> {
    let h = params.hidden();
    check_len("input vector", params.input_dim(), x.len())?;
    check_len("previous hidden state", h, h_prev.len())?;
    let acc = params.acc_format();
    let mut sat = 0;
    let (mut m_r, mut m_u, mut m_xc, mut m_hc) = (vec![0i32; h], vec![0i32; h], vec![0i32; h], vec![0i32; h]);
    let x_vals = std::iter::once(ONE_Q8_8).chain(x.iter().copied());
    for (i, v) in x_vals.enumerate() {
        let column = params.column(params.x_column(i));
        for j in 0..h {
            sat += mac_into(&mut m_r[j], column[j], v as i32, acc);
            sat += mac_into(&mut m_u[j], column[h + j], v as i32, acc);
            sat += mac_into(&mut m_xc[j], column[2 * h + j], v as i32, acc);
        }
    }
    for (k, &v) in h_prev.iter().enumerate() {
        let column = params.column(params.h_column(k));
        for j in 0..h {
            sat += mac_into(&mut m_r[j], column[j], v as i32, acc);
            sat += mac_into(&mut m_u[j], column[h + j], v as i32, acc);
            sat += mac_into(&mut m_hc[j], column[2 * h + j], v as i32, acc);
        }
    }
    let out = (0..h)
        .map(|j| {
            let (code, s) = gru_cell_output(m_r[j], m_u[j], m_xc[j], m_hc[j], h_prev[j], acc, luts);
            sat += s;
            code
        })
        .collect();
    Ok((out, sat))
}

/// One suprathreshold element of a delta vector. `value` is the exact
/// difference of two Q8.8 codes, which needs 17 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeltaEntry {
    pub index: u32,
    pub value: i32,
}

/// Sparse delta vector: nonzero suprathreshold entries in increasing index
/// order, plus the dense length.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DeltaVector {
    pub entries: Vec<DeltaEntry>,
    pub dense_len: usize,
}

impl DeltaVector {
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn to_dense(&self) -> Vec<i32> {
        let mut dense = vec![0; self.dense_len];
        for e in &self.entries {
            dense[e.index as usize] = e.value;
        }
        dense
    }
}

/// Delta-encode `s_t` against the state memory `s_mem`.
///
/// An element fires when `|s_t[i] - s_mem[i]| >= theta` (raw codes); firing
/// copies `s_t[i]` into memory. Only nonzero differences are listed in the
/// result, since a zero difference contributes no column work.
pub fn delta_encode(s_t: &[i16], s_mem: &mut [i16], theta: i16) -> DeltaVector {
    assert_eq!(s_t.len(), s_mem.len(), "delta_encode: length mismatch");
    let mut entries = Vec::new();
    for (i, (&s, m)) in s_t.iter().zip(s_mem.iter_mut()).enumerate() {
        let d = s as i32 - *m as i32;
        if d.abs() >= theta as i32 {
            *m = s;
            if d != 0 {
                entries.push(DeltaEntry { index: i as u32, value: d });
            }
        }
    }
    DeltaVector { entries, dense_len: s_t.len() }
}

/// Encode the x-part of a layer: slot 0 carries the constant 1 that drives
/// the bias column and fires whenever it differs from memory, independent
/// of the threshold; slots `1..=I` follow the thresholded rule.
pub fn delta_encode_with_bias(x: &[i16], x_mem: &mut [i16], theta: i16) -> DeltaVector {
    assert_eq!(x.len() + 1, x_mem.len(), "x memory must include the bias slot");
    let mut out = DeltaVector { entries: Vec::new(), dense_len: x_mem.len() };
    let slot = ONE_Q8_8 as i32 - x_mem[0] as i32;
    if slot != 0 {
        x_mem[0] = ONE_Q8_8;
        out.entries.push(DeltaEntry { index: 0, value: slot });
    }
    let rest = delta_encode(x, &mut x_mem[1..], theta);
    out.entries.extend(rest.entries.into_iter().map(|e| DeltaEntry { index: e.index + 1, value: e.value }));
    out
}

/// How the delta memories start out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitConvention {
    /// All memories zero; the bias slot fires once at the first step.
    #[default]
    BiasSlot,
    /// `M_r`, `M_u`, `M_xc` preloaded with the biases; the bias slot is
    /// pre-set in memory and never fires.
    PreloadBias,
}

/// Per-layer recurrent state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerState {
    /// Input state memory with the bias slot at index 0.
    pub x_mem: Vec<i16>,
    pub h_mem: Vec<i16>,
    pub h_prev: Vec<i16>,
    pub m_r: Vec<i32>,
    pub m_u: Vec<i32>,
    pub m_xc: Vec<i32>,
    pub m_hc: Vec<i32>,
    pub t: u64,
}

impl LayerState {
    pub fn new(params: &GruLayerParams, init: InitConvention) -> Self {
        let h = params.hidden();
        let mut state = LayerState {
            x_mem: vec![0; 1 + params.input_dim()],
            h_mem: vec![0; h],
            h_prev: vec![0; h],
            m_r: vec![0; h],
            m_u: vec![0; h],
            m_xc: vec![0; h],
            m_hc: vec![0; h],
            t: 0,
        };
        if init == InitConvention::PreloadBias {
            let bias = params.column(0);
            for j in 0..h {
                state.m_r[j] = bias[j] as i32 * ONE_Q8_8 as i32;
                state.m_u[j] = bias[h + j] as i32 * ONE_Q8_8 as i32;
                state.m_xc[j] = bias[2 * h + j] as i32 * ONE_Q8_8 as i32;
            }
            state.x_mem[0] = ONE_Q8_8;
        }
        state
    }
}

/// Zero/total tallies of one layer's delta vectors (bias slot excluded).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SparsityTally {
    pub x_zeros: u64,
    pub x_total: u64,
    pub h_zeros: u64,
    pub h_total: u64,
}

impl SparsityTally {
    pub fn add(&mut self, other: &SparsityTally) {
        self.x_zeros += other.x_zeros;
        self.x_total += other.x_total;
        self.h_zeros += other.h_zeros;
        self.h_total += other.h_total;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepStats {
    pub tally: SparsityTally,
    /// Valid x-part columns, bias slot included.
    pub x_columns: u32,
    pub h_columns: u32,
    pub bias_fired: bool,
    pub saturations: u32,
}

/// Encode both delta vectors of a step and return them with their tallies.
pub(crate) fn encode_step(params: &GruLayerParams, state: &mut LayerState, x: &[i16]) -> (DeltaVector, DeltaVector, StepStats) {
    let dx = delta_encode_with_bias(x, &mut state.x_mem, params.theta_x());
    let dh = delta_encode(&state.h_prev, &mut state.h_mem, params.theta_h());
    let bias_fired = dx.entries.first().is_some_and(|e| e.index == 0);
    let x_nnz = dx.nnz() - bias_fired as usize;
    let stats = StepStats {
        tally: SparsityTally {
            x_zeros: (x.len() - x_nnz) as u64,
            x_total: x.len() as u64,
            h_zeros: (dh.dense_len - dh.nnz()) as u64,
            h_total: dh.dense_len as u64,
        },
        x_columns: dx.nnz() as u32,
        h_columns: dh.nnz() as u32,
        bias_fired,
        saturations: 0,
    };
    (dx, dh, stats)
}

/// Accumulate delta columns into the delta memories.
pub(crate) fn accumulate_deltas(params: &GruLayerParams, state: &mut LayerState, dx: &DeltaVector, dh: &DeltaVector) -> u32 {
    let h = params.hidden();
    let acc = params.acc_format();
    let mut sat = 0;
    for e in &dx.entries {
        let column = params.column(params.x_column(e.index as usize));
        for j in 0..h {
            sat += mac_into(&mut state.m_r[j], column[j], e.value, acc);
            sat += mac_into(&mut state.m_u[j], column[h + j], e.value, acc);
            sat += mac_into(&mut state.m_xc[j], column[2 * h + j], e.value, acc);
        }
    }
    for e in &dh.entries {
        let column = params.column(params.h_column(e.index as usize));
        for j in 0..h {
            sat += mac_into(&mut state.m_r[j], column[j], e.value, acc);
            sat += mac_into(&mut state.m_u[j], column[h + j], e.value, acc);
            sat += mac_into(&mut state.m_hc[j], column[2 * h + j], e.value, acc);
        }
    }
    sat
}

/// One DeltaGRU step. Updates `state` in place and returns `h_t`.
pub fn deltagru_step(params: &GruLayerParams, luts: &LutPair, state: &mut LayerState, x: &[i16]) -> Result<(Vec<i16>, StepStats), ModelError> {
    check_len("input vector", params.input_dim(), x.len())?;
    check_len("layer state", params.hidden(), state.h_prev.len())?;
    let (dx, dh, mut stats) = encode_step(params, state, x);
    stats.saturations += accumulate_deltas(params, state, &dx, &dh);
    let acc = params.acc_format();
    let h_t: Vec<i16> = (0..params.hidden())
        .map(|j| {
            let (code, s) = gru_cell_output(state.m_r[j], state.m_u[j], state.m_xc[j], state.m_hc[j], state.h_prev[j], acc, luts);
            stats.saturations += s;
            code
        })
        .collect();
    state.h_prev.clone_from(&h_t);
    state.t += 1;
    Ok((h_t, stats))
}

/// A stack of DeltaGRU layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    dims: GruDims,
    layers: Vec<GruLayerParams>,
}

impl Network {
    pub fn new(layers: Vec<GruLayerParams>) -> Result<Self, ModelError> {
        let first = layers.first().ok_or_else(|| ModelError::InvalidDims("network has no layers".into()))?;
        let dims = GruDims::new(layers.len(), first.input_dim(), first.hidden())?;
        for (l, layer) in layers.iter().enumerate() {
            check_len("layer hidden size", dims.hidden, layer.hidden())?;
            check_len("layer input size", dims.layer_input(l), layer.input_dim())?;
        }
        Ok(Network { dims, layers })
    }

    pub fn dims(&self) -> GruDims {
        self.dims
    }

    pub fn layers(&self) -> &[GruLayerParams] {
        &self.layers
    }

    /// Copy with the same `(theta_x, theta_h)` on every layer.
    pub fn with_thresholds(&self, theta_x: i16, theta_h: i16) -> Result<Network, ModelError> {
        let mut net = self.clone();
        for layer in &mut net.layers {
            layer.set_thresholds(theta_x, theta_h)?;
        }
        Ok(net)
    }

    pub fn initial_state(&self, init: InitConvention) -> Vec<LayerState> {
        self.layers.iter().map(|p| LayerState::new(p, init)).collect()
    }

    pub fn dequantize(&self) -> Vec<RealLayerParams> {
        self.layers.iter().map(GruLayerParams::dequantize).collect()
    }
}

/// Tallies pooled over a sequence, one entry per layer.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SequenceStats {
    pub per_layer: Vec<SparsityTally>,
    pub steps: u64,
    pub saturations: u64,
}

impl SequenceStats {
    pub fn new(layers: usize) -> Self {
        SequenceStats { per_layer: vec![SparsityTally::default(); layers], steps: 0, saturations: 0 }
    }

    /// Pooled fraction of zero x-part deltas; NaN when nothing was tallied.
    pub fn gamma_dx(&self) -> f64 {
        let (z, t) = self.per_layer.iter().fold((0, 0), |(z, t), l| (z + l.x_zeros, t + l.x_total));
        z as f64 / t as f64
    }

    pub fn gamma_dh(&self) -> f64 {
        let (z, t) = self.per_layer.iter().fold((0, 0), |(z, t), l| (z + l.h_zeros, t + l.h_total));
        z as f64 / t as f64
    }
}

/// Per-timestep outputs of every layer plus pooled statistics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForwardOutput {
    /// `outputs[t][l]` is `h_t` of layer `l`.
    pub outputs: Vec<Vec<Vec<i16>>>,
    pub stats: SequenceStats,
}

impl ForwardOutput {
    pub fn final_layer(&self) -> impl Iterator<Item = &[i16]> {
        self.outputs.iter().map(|step| step.last().expect("at least one layer").as_slice())
    }
}

/// Run a sequence through the network from the initial state.
pub fn deltagru_forward(net: &Network, luts: &LutPair, xs: &[Vec<i16>]) -> Result<ForwardOutput, ModelError> {
    let mut states = net.initial_state(InitConvention::BiasSlot);
    let mut stats = SequenceStats::new(net.layers.len());
    let mut outputs = Vec::with_capacity(xs.len());
    for x in xs {
        let mut step_out = Vec::with_capacity(net.layers.len());
        let mut input = x.as_slice();
        for (l, (params, state)) in net.layers.iter().zip(&mut states).enumerate() {
            let (h, s) = deltagru_step(params, luts, state, input)?;
            stats.per_layer[l].add(&s.tally);
            stats.saturations += s.saturations as u64;
            step_out.push(h);
            input = step_out.last().unwrap();
        }
        stats.steps += 1;
        outputs.push(step_out);
    }
    Ok(ForwardOutput { outputs, stats })
}

/// Dense fixed-point network forward; returns `outputs[t][l]`.
pub fn dense_forward_fixed(net: &Network, luts: &LutPair, xs: &[Vec<i16>]) -> Result<Vec<Vec<Vec<i16>>>, ModelError> {
    let mut h: Vec<Vec<i16>> = net.layers.iter().map(|p| vec![0; p.hidden()]).collect();
    let mut outputs = Vec::with_capacity(xs.len());
    for x in xs {
        let mut input = x.clone();
        for (params, h_l) in net.layers.iter().zip(&mut h) {
            let (next, _) = dense_gru_step_fixed(params, luts, &input, h_l)?;
            *h_l = next.clone();
            input = next;
        }
        outputs.push(h.clone());
    }
    Ok(outputs)
}

/// Dense double-precision forward; returns the final layer's output per step.
pub fn float_forward(params: &[RealLayerParams], xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ModelError> {
    let mut h: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.hidden]).collect();
    let mut outputs = Vec::with_capacity(xs.len());
    for x in xs {
        let mut input = x.clone();
        for (p, h_l) in params.iter().zip(&mut h) {
            *h_l = dense_gru_step_float(p, &input, h_l)?;
            input = h_l.clone();
        }
        outputs.push(h.last().cloned().unwrap_or_default());
    }
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn luts() -> LutPair {
        LutPair::new(5).unwrap()
    }

    fn q17() -> QFormat {
        QFormat::new(8, 7).unwrap()
    }

    #[test]
    fn float_zero_parameters_halve_the_state() {
        let p = RealLayerParams::zeros(3, 2);
        let h = dense_gru_step_float(&p, &[0.3, -1.0, 2.0], &[0.8, -0.4]).unwrap();
        assert!((h[0] - 0.4).abs() < 1e-15 && (h[1] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn float_reduces_with_zero_history() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = RealLayerParams::zeros(3, 2);
        for g in 0..3 {
            p.w_x[g].iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
            p.w_h[g].iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
            p.b[g].iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
        }
        let x = [0.5, -0.25, 0.125];
        let h = dense_gru_step_float(&p, &x, &[0.0, 0.0]).unwrap();
        for j in 0..2 {
            let dot = |m: &[f64]| (0..3).map(|c| m[j * 3 + c] * x[c]).sum::<f64>();
            let u = sigmoid(dot(&p.w_x[1]) + p.b[1][j]);
            let c = (dot(&p.w_x[2]) + p.b[2][j]).tanh();
            assert!((h[j] - (1.0 - u) * c).abs() < 1e-14);
        }
    }

    #[test]
    fn float_two_by_two_hand_evaluation() {
        // scalar-by-scalar evaluation, written out without matvec
        let mut p = RealLayerParams::zeros(2, 2);
        p.w_x = [vec![0.5, -0.25, 0.75, 0.1], vec![-0.6, 0.2, 0.3, 0.9], vec![0.4, 0.4, -0.8, 0.05]];
        p.w_h = [vec![0.1, 0.2, -0.3, 0.4], vec![0.0, -0.5, 0.25, 0.6], vec![0.7, -0.1, 0.2, -0.9]];
        p.b = [vec![0.01, -0.02], vec![0.5, -0.5], vec![0.1, 0.2]];
        let (x0, x1, h0, h1) = (0.3, -0.7, 0.2, -0.1);
        let h = dense_gru_step_float(&p, &[x0, x1], &[h0, h1]).unwrap();
        let r0 = sigmoid(0.5 * x0 - 0.25 * x1 + 0.1 * h0 + 0.2 * h1 + 0.01);
        let u0 = sigmoid(-0.6 * x0 + 0.2 * x1 + 0.0 * h0 - 0.5 * h1 + 0.5);
        let c0 = (0.4 * x0 + 0.4 * x1 + r0 * (0.7 * h0 - 0.1 * h1) + 0.1).tanh();
        let r1 = sigmoid(0.75 * x0 + 0.1 * x1 - 0.3 * h0 + 0.4 * h1 - 0.02);
        let u1 = sigmoid(0.3 * x0 + 0.9 * x1 + 0.25 * h0 + 0.6 * h1 - 0.5);
        let c1 = (-0.8 * x0 + 0.05 * x1 + r1 * (0.2 * h0 - 0.9 * h1) + 0.2).tanh();
        assert!((h[0] - ((1.0 - u0) * c0 + u0 * h0)).abs() < 1e-14);
        assert!((h[1] - ((1.0 - u1) * c1 + u1 * h1)).abs() < 1e-14);
    }

    #[test]
    fn float_rejects_bad_dims() {
        let p = RealLayerParams::zeros(3, 2);
        assert!(matches!(dense_gru_step_float(&p, &[0.0; 2], &[0.0; 2]), Err(ModelError::DimensionMismatch { .. })));
    }

    #[test]
    fn fixed_zero_everything_is_zero() {
        let p = GruLayerParams::from_fn(3, 4, q17(), 0, 0, |_, _| 0).unwrap();
        let (h, sat) = dense_gru_step_fixed(&p, &luts(), &[100, -50, 3], &[0; 4]).unwrap();
        assert_eq!(h, vec![0; 4]);
        assert_eq!(sat, 0);
    }

    #[test]
    fn fixed_tracks_float_on_small_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let luts = luts();
        for _ in 0..50 {
            let h = rng.gen_range(1..=8);
            let i = rng.gen_range(1..=4);
            let params = synth::random_layer(&mut rng, i, h, q17(), 0, 0, 0.5);
            let real = params.dequantize();
            let x: Vec<i16> = (0..i).map(|_| rng.gen_range(-256..=256)).collect();
            let hp: Vec<i16> = (0..h).map(|_| rng.gen_range(-200..=200)).collect();
            let (fixed, _) = dense_gru_step_fixed(&params, &luts, &x, &hp).unwrap();
            let xr: Vec<f64> = x.iter().map(|&c| c as f64 / 256.0).collect();
            let hr: Vec<f64> = hp.iter().map(|&c| c as f64 / 256.0).collect();
            let float = dense_gru_step_float(&real, &xr, &hr).unwrap();
            for (a, b) in fixed.iter().zip(&float) {
                assert!((*a as f64 / 256.0 - b).abs() <= 2f64.powi(-4), "fixed {a} float {b}");
            }
        }
    }

    #[test]
    fn delta_encode_examples() {
        let s = [10, -20, 0, 300];
        let mut mem = [0, 0, 0, 0];
        let dv = delta_encode(&s, &mut mem, 0);
        assert_eq!(mem, s);
        assert_eq!(dv.entries.iter().map(|e| e.index).collect::<Vec<_>>(), vec![0, 1, 3]);
        let mut mem2 = s;
        let dv = delta_encode(&s, &mut mem2, 5);
        assert!(dv.entries.is_empty());
        assert_eq!(mem2, s);
        let mut mem3 = [128];
        let dv = delta_encode(&[179], &mut mem3, 64);
        assert!(dv.entries.is_empty());
        assert_eq!(mem3, [128]);
        // ties at exactly theta fire
        let dv = delta_encode(&[192], &mut mem3, 64);
        assert_eq!(dv.entries, vec![DeltaEntry { index: 0, value: 64 }]);
        assert_eq!(mem3, [192]);
    }

    #[test]
    fn delta_values_are_exact_beyond_16_bits() {
        let mut mem = [i16::MIN];
        let dv = delta_encode(&[i16::MAX], &mut mem, 0);
        assert_eq!(dv.entries[0].value, 65535);
    }

    #[test]
    fn first_step_with_only_biases() {
        let h = 3;
        let bias = [40i16, -77, 100]; // per gate, same for every neuron
        let p = GruLayerParams::from_fn(2, h, q17(), 64, 64, |row, col| if col == 0 { bias[row / h] } else { 0 }).unwrap();
        let luts = luts();
        let mut state = LayerState::new(&p, InitConvention::BiasSlot);
        let (h1, stats) = deltagru_step(&p, &luts, &mut state, &[0, 0]).unwrap();
        assert!(stats.bias_fired);
        // bias codes in Q1.7 -> Q8.8 is a left shift by one
        let u = luts.sigmoid.lookup_q8_8(bias[1] * 2) as i64;
        let c = luts.tanh.lookup_q8_8(bias[2] * 2) as i64;
        let expect = round_shift((256 - u) * c, 8, Rounding::NearestEven) as i16;
        assert!(h1.iter().all(|&v| v == expect), "{h1:?} vs {expect}");

        // identical input, huge thresholds: nothing fires, M unchanged
        let mut p2 = p.clone();
        p2.set_thresholds(i16::MAX, i16::MAX).unwrap();
        let m_before = (state.m_r.clone(), state.m_u.clone(), state.m_xc.clone(), state.m_hc.clone());
        let (h2, stats) = deltagru_step(&p2, &luts, &mut state, &[0, 0]).unwrap();
        assert_eq!(stats.x_columns + stats.h_columns, 0);
        assert_eq!(m_before, (state.m_r.clone(), state.m_u.clone(), state.m_xc.clone(), state.m_hc.clone()));
        let expect2: Vec<i16> = h1
            .iter()
            .map(|&hp| round_shift((256 - u) * c + u * hp as i64, 8, Rounding::NearestEven) as i16)
            .collect();
        assert_eq!(h2, expect2);
    }

    #[test]
    fn zero_threshold_matches_dense_every_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let luts = luts();
        let p = synth::random_layer(&mut rng, 4, 4, q17(), 0, 0, 0.5);
        let mut state = LayerState::new(&p, InitConvention::BiasSlot);
        let mut h_dense = vec![0i16; 4];
        for _ in 0..10 {
            let x: Vec<i16> = (0..4).map(|_| rng.gen_range(-256..=256)).collect();
            let (hd, _) = dense_gru_step_fixed(&p, &luts, &x, &h_dense).unwrap();
            let (hdelta, _) = deltagru_step(&p, &luts, &mut state, &x).unwrap();
            assert_eq!(hd, hdelta);
            h_dense = hd;
        }
    }

    #[test]
    fn init_conventions_agree_after_first_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let luts = luts();
        for theta in [0, 16, 64] {
            let p = synth::random_layer(&mut rng, 5, 6, q17(), theta, theta, 0.5);
            let mut a = LayerState::new(&p, InitConvention::BiasSlot);
            let mut b = LayerState::new(&p, InitConvention::PreloadBias);
            for _ in 0..4 {
                let x: Vec<i16> = (0..5).map(|_| rng.gen_range(-300..=300)).collect();
                let (ha, sa) = deltagru_step(&p, &luts, &mut a, &x).unwrap();
                let (hb, _) = deltagru_step(&p, &luts, &mut b, &x).unwrap();
                assert_eq!(ha, hb);
                assert_eq!((&a.m_r, &a.m_u, &a.m_xc, &a.m_hc), (&b.m_r, &b.m_u, &b.m_xc, &b.m_hc));
                assert_eq!(sa.bias_fired, a.t == 1);
            }
        }
    }

    #[test]
    fn forward_empty_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = synth::random_network(&mut rng, GruDims::new(2, 3, 4).unwrap(), q17(), 0, 0, 0.5);
        let out = deltagru_forward(&net, &luts(), &[]).unwrap();
        assert!(out.outputs.is_empty());
        assert!(out.stats.gamma_dx().is_nan() && out.stats.gamma_dh().is_nan());
    }

    #[test]
    fn forward_is_composition_of_layer_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let luts = luts();
        let net = synth::random_network(&mut rng, GruDims::new(2, 3, 5).unwrap(), q17(), 16, 32, 0.5);
        let xs = synth::random_inputs(&mut rng, 12, 3, 256);
        let out = deltagru_forward(&net, &luts, &xs).unwrap();
        let mut s0 = LayerState::new(&net.layers()[0], InitConvention::BiasSlot);
        let mut s1 = LayerState::new(&net.layers()[1], InitConvention::BiasSlot);
        for (t, x) in xs.iter().enumerate() {
            let (h0, _) = deltagru_step(&net.layers()[0], &luts, &mut s0, x).unwrap();
            let (h1, _) = deltagru_step(&net.layers()[1], &luts, &mut s1, &h0).unwrap();
            assert_eq!(out.outputs[t], vec![h0, h1]);
        }
    }

    #[test]
    fn constant_input_sparsity_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (t_len, i) = (10, 6);
        let net = synth::random_network(&mut rng, GruDims::new(1, i, 4).unwrap(), q17(), 1, 1, 0.5);
        let x: Vec<i16> = (0..i).map(|_| rng.gen_range(1..=256)).collect();
        let xs = vec![x; t_len];
        let out = deltagru_forward(&net, &luts(), &xs).unwrap();
        let tally = out.stats.per_layer[0];
        assert_eq!(tally.x_total, (t_len * i) as u64);
        // first step fires every (nonzero) input, later steps nothing
        assert_eq!(tally.x_zeros, ((t_len - 1) * i) as u64);
        assert!(out.stats.gamma_dx() >= (t_len - 1) as f64 / t_len as f64);
    }

    #[test]
    fn network_rejects_bad_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = synth::random_layer(&mut rng, 3, 4, q17(), 0, 0, 0.5);
        let b = synth::random_layer(&mut rng, 3, 4, q17(), 0, 0, 0.5);
        assert!(Network::new(vec![a.clone(), b]).is_err());
        assert!(Network::new(vec![]).is_err());
        let net = Network::new(vec![a]).unwrap();
        assert!(deltagru_forward(&net, &luts(), &[vec![0; 2]]).is_err());
    }

    #[test]
    fn params_validate() {
        assert!(GruLayerParams::from_fn(2, 2, q17(), -1, 0, |_, _| 0).is_err());
        assert!(GruLayerParams::new(2, 2, q17(), vec![0; 5], 0, 0).is_err());
        assert!(GruLayerParams::from_fn(2, 2, QFormat::new(3, 1).unwrap(), 0, 0, |_, _| 0).is_err());
        let fmt = QFormat::new(4, 3).unwrap();
        assert!(GruLayerParams::from_fn(2, 2, fmt, 0, 0, |_, _| 9).is_err());
    }

    #[test]
    fn dequantize_places_gates_by_layout() {
        let p = GruLayerParams::from_fn(2, 2, q17(), 0, 0, |row, col| (row * 10 + col) as i16).unwrap();
        let real = p.dequantize();
        // row 3 = update gate neuron 1; column 1 = x[0]; column 4 = h[1]
        assert_eq!(real.w_x[1][2], 31.0 / 128.0);
        assert_eq!(real.w_h[1][3], 34.0 / 128.0);
        assert_eq!(real.b[2][0], 40.0 / 128.0);
    }

    proptest! {
        #[test]
        fn threshold_monotonicity(s in proptest::collection::vec(any::<i16>(), 1..20), seed in any::<u64>(), lo in 0i16..2000, extra in 0i16..2000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mem: Vec<i16> = s.iter().map(|_| rng.gen()).collect();
            let hi = lo + extra;
            let fired = |theta: i16| -> Vec<usize> {
                let mut m = mem.clone();
                delta_encode(&s, &mut m, theta);
                m.iter().zip(&mem).enumerate().filter(|(_, (a, b))| a != b).map(|(i, _)| i).collect()
            };
            let (low, high) = (fired(lo), fired(hi));
            prop_assert!(high.iter().all(|i| low.contains(i)));
        }

        #[test]
        fn outputs_stay_within_unit_interval(seed in any::<u64>(), theta in 0i16..128) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = synth::random_network(&mut rng, GruDims::new(2, 3, 4).unwrap(), q17(), theta, theta, 1.0);
            let xs = synth::random_inputs(&mut rng, 8, 3, 2048);
            let out = deltagru_forward(&net, &luts(), &xs).unwrap();
            for step in &out.outputs {
                for layer in step {
                    prop_assert!(layer.iter().all(|&v| (-256..=256).contains(&v)));
                }
            }
            let again = deltagru_forward(&net, &luts(), &xs).unwrap();
            prop_assert_eq!(out, again);
        }
    }
}
