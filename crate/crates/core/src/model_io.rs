//! Network quantization and the `EDRNNv01` weight container.
//!
//! Byte layout, all integers little-endian:
//!
//! ```text
//! offset  size  field
//!      0     8  magic "EDRNNv01"
//!      8     4  u32 layer count L
//!     12     4  u32 input dimension I
//!     16     4  u32 hidden size H
//!     20     1  u8  LUT output bits
//!     21     1  reserved, 0
//!     22     2  u16 PE count K
//!     24     4  u32 clock in Hz
//!     28     2  u16 DRAM interface bits
//!     30     2  reserved, 0
//!     32   8*L  per layer: u8 weight bits, u8 weight fraction bits,
//!               i16 theta_x, i16 theta_h (Q8.8 codes), u16 reserved
//!      …        payload
//! ```
//!
//! The payload stores each layer's concatenated matrix column by column
//! (bias column, input columns, hidden columns), rows `0..3H` within a
//! column. 8- and 16-bit codes are little-endian two's complement; 1-, 2-
//! and 4-bit codes are packed MSB-first. Every column starts on a byte
//! boundary.

use std::fmt::Write as _;

use crate::deltagru::{GruDims, GruLayerParams, Network, RealLayerParams};
use crate::error::{ContainerError, ModelError};
use crate::fixedpoint::{quantize, QFormat, Rounding};

pub const MAGIC: &[u8; 8] = b"EDRNNv01";
const FIXED_HEADER: usize = 32;
const LAYER_HEADER: usize = 8;

/// Accelerator settings recorded alongside the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccelDefaults {
    pub pes: u16,
    pub clock_hz: u32,
    pub dram_bits: u16,
}

impl Default for AccelDefaults {
    fn default() -> Self {
        AccelDefaults { pes: 8, clock_hz: 125_000_000, dram_bits: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerDescriptor {
    pub weight_format: QFormat,
    pub theta_x: i16,
    pub theta_h: i16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkDescriptor {
    pub dims: GruDims,
    pub layers: Vec<LayerDescriptor>,
    pub lut_out_bits: u32,
    pub accel: AccelDefaults,
}

/// Quantized network plus the run configuration it was exported with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightContainer {
    pub network: Network,
    pub lut_out_bits: u32,
    pub accel: AccelDefaults,
}

impl WeightContainer {
    pub fn new(network: Network, lut_out_bits: u32, accel: AccelDefaults) -> Result<Self, ModelError> {
        if !(5..=9).contains(&lut_out_bits) {
            return Err(crate::error::LutError::InvalidOutputBits(lut_out_bits).into());
        }
        Ok(WeightContainer { network, lut_out_bits, accel })
    }

    pub fn descriptor(&self) -> NetworkDescriptor {
        NetworkDescriptor {
            dims: self.network.dims(),
            layers: self
                .network
                .layers()
                .iter()
                .map(|p| LayerDescriptor { weight_format: p.weight_format(), theta_x: p.theta_x(), theta_h: p.theta_h() })
                .collect(),
            lut_out_bits: self.lut_out_bits,
            accel: self.accel,
        }
    }
}

/// Bytes one column of `rows` codes occupies.
pub fn column_bytes(rows: usize, weight_bits: u32) -> usize {
    (rows * weight_bits as usize).div_ceil(8)
}

fn payload_len(desc: &NetworkDescriptor) -> usize {
    let d = desc.dims;
    (0..d.layers)
        .map(|l| (1 + d.layer_input(l) + d.hidden) * column_bytes(3 * d.hidden, desc.layers[l].weight_format.total_bits()))
        .sum()
}

fn pack_column(codes: &[i16], bits: u32, out: &mut Vec<u8>) {
    match bits {
        8 => out.extend(codes.iter().map(|&c| c as i8 as u8)),
        16 => out.extend(codes.iter().flat_map(|&c| c.to_le_bytes())),
        _ => {
            let mask = (1u16 << bits) - 1;
            let start = out.len();
            out.resize(start + column_bytes(codes.len(), bits), 0);
            for (i, &c) in codes.iter().enumerate() {
                let bit = i * bits as usize;
                let shift = 8 - bits as usize - bit % 8;
                out[start + bit / 8] |= (((c as u16) & mask) << shift) as u8;
            }
        }
    }
}

fn unpack_column(bytes: &[u8], rows: usize, bits: u32, out: &mut Vec<i16>) {
    match bits {
        8 => out.extend(bytes.iter().map(|&b| b as i8 as i16)),
        16 => out.extend(bytes.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]]))),
        _ => {
            let mask = (1u16 << bits) - 1;
            for i in 0..rows {
                let bit = i * bits as usize;
                let shift = 8 - bits as usize - bit % 8;
                let raw = (bytes[bit / 8] as u16 >> shift) & mask;
                // sign-extend from `bits`
                let code = ((raw << (16 - bits)) as i16) >> (16 - bits);
                out.push(code);
            }
        }
    }
}

/// Serialize a container.
pub fn save(container: &WeightContainer) -> Vec<u8> {
    let desc = container.descriptor();
    let d = desc.dims;
    let mut out = Vec::with_capacity(FIXED_HEADER + LAYER_HEADER * d.layers + payload_len(&desc));
    out.extend_from_slice(MAGIC);
    out.extend((d.layers as u32).to_le_bytes());
    out.extend((d.input as u32).to_le_bytes());
    out.extend((d.hidden as u32).to_le_bytes());
    out.push(desc.lut_out_bits as u8);
    out.push(0);
    out.extend(desc.accel.pes.to_le_bytes());
    out.extend(desc.accel.clock_hz.to_le_bytes());
    out.extend(desc.accel.dram_bits.to_le_bytes());
    out.extend([0, 0]);
    for layer in &desc.layers {
        out.push(layer.weight_format.total_bits() as u8);
        out.push(layer.weight_format.frac_bits() as u8);
        out.extend(layer.theta_x.to_le_bytes());
        out.extend(layer.theta_h.to_le_bytes());
        out.extend([0, 0]);
    }
    for params in container.network.layers() {
        let bits = params.weight_format().total_bits();
        for col in 0..params.cols() {
            pack_column(params.column(col), bits, &mut out);
        }
    }
    out
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes(b[at..at + 2].try_into().unwrap())
}

/// Parse a container, validating magic, header fields and payload length.
pub fn load(bytes: &[u8]) -> Result<WeightContainer, ContainerError> {
    if bytes.len() < 8 {
        return Err(ContainerError::CorruptHeader(format!("{} bytes is shorter than the magic", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(ContainerError::UnsupportedVersion { found: bytes[..8].try_into().unwrap() });
    }
    if bytes.len() < FIXED_HEADER {
        return Err(ContainerError::CorruptHeader("truncated fixed header".into()));
    }
    let corrupt = |m: String| ContainerError::CorruptHeader(m);
    let (layers, input, hidden) = (u32_at(bytes, 8) as usize, u32_at(bytes, 12) as usize, u32_at(bytes, 16) as usize);
    let dims = GruDims::new(layers, input, hidden).map_err(|e| corrupt(e.to_string()))?;
    let lut_out_bits = bytes[20] as u32;
    if bytes[21] != 0 || bytes[30] != 0 || bytes[31] != 0 {
        return Err(corrupt("reserved header bytes are not zero".into()));
    }
    let accel = AccelDefaults { pes: u16_at(bytes, 22), clock_hz: u32_at(bytes, 24), dram_bits: u16_at(bytes, 28) };
    let layer_headers_end = layers
        .checked_mul(LAYER_HEADER)
        .and_then(|n| n.checked_add(FIXED_HEADER))
        .ok_or_else(|| corrupt("layer count overflows".into()))?;
    if bytes.len() < layer_headers_end {
        return Err(corrupt("truncated layer headers".into()));
    }
    let mut layer_desc = Vec::with_capacity(layers);
    for l in 0..layers {
        let at = FIXED_HEADER + l * LAYER_HEADER;
        let fmt = QFormat::new(bytes[at] as u32, bytes[at + 1] as u32).map_err(|e| corrupt(format!("layer {l}: {e}")))?;
        if u16_at(bytes, at + 6) != 0 {
            return Err(corrupt(format!("layer {l}: reserved bytes are not zero")));
        }
        layer_desc.push(LayerDescriptor {
            weight_format: fmt,
            theta_x: u16_at(bytes, at + 2) as i16,
            theta_h: u16_at(bytes, at + 4) as i16,
        });
    }
    let desc = NetworkDescriptor { dims, layers: layer_desc, lut_out_bits, accel };
    let expected = payload_len(&desc);
    let found = bytes.len() - layer_headers_end;
    if found != expected {
        return Err(ContainerError::Length { expected, found });
    }
    let mut cursor = layer_headers_end;
    let mut params = Vec::with_capacity(layers);
    for (l, ld) in desc.layers.iter().enumerate() {
        let bits = ld.weight_format.total_bits();
        let rows = 3 * hidden;
        let cols = 1 + dims.layer_input(l) + hidden;
        let per_col = column_bytes(rows, bits);
        let mut codes = Vec::with_capacity(rows * cols);
        for _ in 0..cols {
            unpack_column(&bytes[cursor..cursor + per_col], rows, bits, &mut codes);
            cursor += per_col;
        }
        params.push(GruLayerParams::new(dims.layer_input(l), hidden, ld.weight_format, codes, ld.theta_x, ld.theta_h)?);
    }
    Ok(WeightContainer::new(Network::new(params)?, lut_out_bits, accel)?)
}

/// Largest fraction width for which `max_abs` rounds into range.
pub fn choose_weight_format(max_abs: f64, total_bits: u32) -> Result<QFormat, ModelError> {
    if !matches!(total_bits, 1 | 2 | 4 | 8 | 16) {
        return Err(ModelError::UnsupportedWeightWidth(total_bits));
    }
    (0..total_bits)
        .rev()
        .map(|frac| QFormat::new(total_bits, frac).expect("valid split"))
        .find(|f| max_abs.is_finite() && max_abs < (f.max_code() as f64 + 0.5) * f.lsb())
        .ok_or(ModelError::WeightRange { max_abs, total_bits })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerQuantReport {
    pub format: QFormat,
    pub max_abs: f64,
    pub max_error: f64,
}

/// Quantize real-valued layers into concatenated fixed-point matrices.
/// `thresholds[l]` is `(theta_x, theta_h)` for layer `l`.
pub fn quantize_network(layers: &[RealLayerParams], weight_bits: u32, thresholds: &[(i16, i16)]) -> Result<(Network, Vec<LayerQuantReport>), ModelError> {
    if thresholds.len() != layers.len() {
        return Err(ModelError::DimensionMismatch { what: "threshold pairs", expected: layers.len(), got: thresholds.len() });
    }
    let mut params = Vec::with_capacity(layers.len());
    let mut report = Vec::with_capacity(layers.len());
    for (layer, &(tx, th)) in layers.iter().zip(thresholds) {
        let (i, h) = (layer.input, layer.hidden);
        for g in 0..3 {
            let shapes = [(layer.w_x[g].len(), h * i), (layer.w_h[g].len(), h * h), (layer.b[g].len(), h)];
            for (got, expected) in shapes {
                if got != expected {
                    return Err(ModelError::DimensionMismatch { what: "gate matrix", expected, got });
                }
            }
        }
        let value = |row: usize, col: usize| -> f64 {
            let (g, r) = (row / h, row % h);
            match col {
                0 => layer.b[g][r],
                c if c <= i => layer.w_x[g][r * i + (c - 1)],
                c => layer.w_h[g][r * h + (c - 1 - i)],
            }
        };
        let max_abs = (0..3 * h).flat_map(|row| (0..1 + i + h).map(move |col| (row, col))).map(|(r, c)| value(r, c).abs()).fold(0.0, f64::max);
        let format = choose_weight_format(max_abs, weight_bits)?;
        let mut max_error: f64 = 0.0;
        let p = GruLayerParams::from_fn(i, h, format, tx, th, |row, col| {
            let v = value(row, col);
            let (w, _) = quantize(v, format, Rounding::NearestEven);
            max_error = max_error.max((w.to_real() - v).abs());
            w.code() as i16
        })?;
        params.push(p);
        report.push(LayerQuantReport { format, max_abs, max_error });
    }
    Ok((Network::new(params)?, report))
}

/// Render a C header holding the dimensions, thresholds and the payload
/// bytes in container order.
pub fn export_header(container: &WeightContainer) -> String {
    let desc = container.descriptor();
    let d = desc.dims;
    let bytes = save(container);
    let payload = &bytes[FIXED_HEADER + LAYER_HEADER * d.layers..];
    let mut s = String::new();
    let _ = writeln!(s, "/* DeltaGRU network parameters generated by edrnn; container format EDRNNv01. */");
    let _ = writeln!(s, "#ifndef EDRNN_NETWORK_H");
    let _ = writeln!(s, "#define EDRNN_NETWORK_H");
    let _ = writeln!(s);
    let _ = writeln!(s, "#include <stdint.h>");
    let _ = writeln!(s);
    let _ = writeln!(s, "#define EDRNN_NUM_LAYERS {}", d.layers);
    let _ = writeln!(s, "#define EDRNN_INPUT_DIM {}", d.input);
    let _ = writeln!(s, "#define EDRNN_HIDDEN_DIM {}", d.hidden);
    let _ = writeln!(s, "#define EDRNN_LUT_OUT_BITS {}", desc.lut_out_bits);
    let _ = writeln!(s, "#define EDRNN_NUM_PES {}", desc.accel.pes);
    let _ = writeln!(s, "#define EDRNN_CLOCK_HZ {}", desc.accel.clock_hz);
    let _ = writeln!(s, "#define EDRNN_DRAM_BITS {}", desc.accel.dram_bits);
    let mut offset = 0;
    for (l, ld) in desc.layers.iter().enumerate() {
        let rows = 3 * d.hidden;
        let cols = 1 + d.layer_input(l) + d.hidden;
        let len = cols * column_bytes(rows, ld.weight_format.total_bits());
        let _ = writeln!(s);
        let _ = writeln!(s, "#define EDRNN_L{l}_ROWS {rows}");
        let _ = writeln!(s, "#define EDRNN_L{l}_COLS {cols}");
        let _ = writeln!(s, "#define EDRNN_L{l}_WEIGHT_BITS {}", ld.weight_format.total_bits());
        let _ = writeln!(s, "#define EDRNN_L{l}_WEIGHT_FRAC_BITS {}", ld.weight_format.frac_bits());
        let _ = writeln!(s, "#define EDRNN_L{l}_THETA_X {:#x}", ld.theta_x);
        let _ = writeln!(s, "#define EDRNN_L{l}_THETA_H {:#x}", ld.theta_h);
        let _ = writeln!(s, "#define EDRNN_L{l}_OFFSET {offset}");
        let _ = writeln!(s, "#define EDRNN_L{l}_BYTES {len}");
        offset += len;
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "static const uint8_t edrnn_weights[{}] = {{", payload.len());
    for chunk in payload.chunks(12) {
        let line: Vec<String> = chunk.iter().map(|b| format!("0x{b:02x}")).collect();
        let _ = writeln!(s, "    {},", line.join(", "));
    }
    let _ = writeln!(s, "}};");
    let _ = writeln!(s);
    let _ = writeln!(s, "#endif /* EDRNN_NETWORK_H */");
    s
}
