//! Plain-text formats: input sequences (one timestep per line) and
//! real-valued weight files.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use edrnn_core::deltagru::RealLayerParams;
use edrnn_core::fixedpoint::{quantize, Rounding};
use edrnn_core::QFormat;

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn tokens(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty())
}

pub fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

/// Parsed input sequence plus the number of real values that saturated
/// during quantization.
pub struct Inputs {
    pub codes: Vec<Vec<i16>>,
    pub saturated: usize,
}

/// One timestep per line, `dim` values each: Q8.8 codes, or reals when
/// `real` is set.
pub fn parse_inputs(text: &str, dim: usize, real: bool) -> Result<Inputs> {
    let mut codes = Vec::new();
    let mut saturated = 0;
    for (n, line) in content_lines(text) {
        let row = tokens(line)
            .map(|t| {
                if real {
                    let v: f64 = t.parse().with_context(|| format!("line {n}: bad number {t:?}"))?;
                    let (w, sat) = quantize(v, QFormat::Q8_8, Rounding::NearestEven);
                    saturated += sat as usize;
                    Ok(w.code() as i16)
                } else {
                    t.parse::<i16>().with_context(|| format!("line {n}: bad Q8.8 code {t:?}"))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        ensure!(row.len() == dim, "line {n}: expected {dim} values, found {}", row.len());
        codes.push(row);
    }
    ensure!(!codes.is_empty(), "input sequence is empty");
    Ok(Inputs { codes, saturated })
}

/// Header `L I H`, then per layer W_xr, W_xu, W_xc (H x I), W_hr, W_hu, W_hc
/// (H x H), b_r, b_u, b_c, all row-major. Layers after the first take H
/// inputs. Whitespace and line breaks are free-form.
pub fn parse_weights(text: &str) -> Result<Vec<RealLayerParams>> {
    let mut values = Vec::new();
    for (n, line) in content_lines(text) {
        for t in tokens(line) {
            let v: f64 = t.parse().with_context(|| format!("line {n}: bad number {t:?}"))?;
            ensure!(v.is_finite(), "line {n}: non-finite weight");
            values.push(v);
        }
    }
    if values.len() < 3 {
        bail!("missing `L I H` header");
    }
    let header: Vec<usize> = values[..3]
        .iter()
        .map(|&v| if v >= 1.0 && v.fract() == 0.0 { Ok(v as usize) } else { bail!("header values must be positive integers") })
        .collect::<Result<_>>()?;
    let (layers, input, hidden) = (header[0], header[1], header[2]);
    let mut rest = values[3..].iter().copied();
    let mut take = |n: usize| -> Result<Vec<f64>> {
        let v: Vec<f64> = rest.by_ref().take(n).collect();
        ensure!(v.len() == n, "weight file is truncated");
        Ok(v)
    };
    let mut out = Vec::with_capacity(layers);
    for l in 0..layers {
        let i = if l == 0 { input } else { hidden };
        let mut p = RealLayerParams::zeros(i, hidden);
        for g in 0..3 {
            p.w_x[g] = take(hidden * i)?;
        }
        for g in 0..3 {
            p.w_h[g] = take(hidden * hidden)?;
        }
        for g in 0..3 {
            p.b[g] = take(hidden)?;
        }
        out.push(p);
    }
    let extra = rest.count();
    ensure!(extra == 0, "weight file has {extra} trailing values");
    Ok(out)
}

pub fn format_weights(layers: &[RealLayerParams]) -> String {
    let mut s = String::new();
    let first = &layers[0];
    s.push_str(&format!("{} {} {}\n", layers.len(), first.input, first.hidden));
    for (l, p) in layers.iter().enumerate() {
        let names = ["W_xr", "W_xu", "W_xc", "W_hr", "W_hu", "W_hc", "b_r", "b_u", "b_c"];
        let blocks = p.w_x.iter().chain(&p.w_h).chain(&p.b);
        for (name, block) in names.iter().zip(blocks) {
            let cols = if name.starts_with("W_x") { p.input } else { p.hidden };
            s.push_str(&format!("# layer {l} {name}\n"));
            for row in block.chunks(cols) {
                let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                s.push_str(&line.join(" "));
                s.push('\n');
            }
        }
    }
    s
}

pub fn format_rows<T: ToString>(rows: impl IntoIterator<Item = impl IntoIterator<Item = T>>) -> String {
    let mut s = String::new();
    for row in rows {
        let line: Vec<String> = row.into_iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inputs_codes_and_reals() {
        let parsed = parse_inputs("# t0\n1 2 -3\n\n4,5,6\n", 3, false).unwrap();
        assert_eq!(parsed.codes, vec![vec![1, 2, -3], vec![4, 5, 6]]);
        let parsed = parse_inputs("0.5 -1.0\n200 0\n", 2, true).unwrap();
        assert_eq!(parsed.codes, vec![vec![128, -256], vec![i16::MAX, 0]]);
        assert_eq!(parsed.saturated, 1);
        assert!(parse_inputs("1 2\n", 3, false).is_err());
        assert!(parse_inputs("", 3, false).is_err());
    }

    #[test]
    fn weights_roundtrip_through_text() {
        let mut a = RealLayerParams::zeros(2, 1);
        a.w_x[0] = vec![0.5, -0.25];
        a.b[2] = vec![0.125];
        let mut b = RealLayerParams::zeros(1, 1);
        b.w_h[1] = vec![0.75];
        let layers = vec![a, b];
        let text = format_weights(&layers);
        assert_eq!(parse_weights(&text).unwrap(), layers);
        assert!(parse_weights(&format!("{text} 1.0")).is_err());
        assert!(parse_weights("1 2 1\n0.5").is_err());
    }
}
