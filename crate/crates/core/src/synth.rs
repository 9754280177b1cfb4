//! Seeded generators for random networks, input sequences and delta
//! patterns with a prescribed sparsity.

use rand::seq::index::sample;
use rand::Rng;

use crate::deltagru::{DeltaEntry, DeltaVector, GruDims, GruLayerParams, Network};
use crate::fixedpoint::{quantize, QFormat, Rounding};

/// Layer with weights and biases drawn uniformly from `[-scale, scale]` and
/// quantized into `format`.
pub fn random_layer<R: Rng + ?Sized>(
    rng: &mut R,
    input: usize,
    hidden: usize,
    format: QFormat,
    theta_x: i16,
    theta_h: i16,
    scale: f64,
) -> GruLayerParams {
    GruLayerParams::from_fn(input, hidden, format, theta_x, theta_h, |_, _| {
        let v = if scale > 0.0 { rng.gen_range(-scale..=scale) } else { 0.0 };
        quantize(v, format, Rounding::NearestEven).0.code() as i16
    })
    .expect("generated layer is well formed")
}

pub fn random_network<R: Rng + ?Sized>(
    rng: &mut R,
    dims: GruDims,
    format: QFormat,
    theta_x: i16,
    theta_h: i16,
    scale: f64,
) -> Network {
    let layers = (0..dims.layers)
        .map(|l| random_layer(rng, dims.layer_input(l), dims.hidden, format, theta_x, theta_h, scale))
        .collect();
    Network::new(layers).expect("generated network is well formed")
}

/// `steps` input vectors of Q8.8 codes uniform in `[-amplitude, amplitude]`.
pub fn random_inputs<R: Rng + ?Sized>(rng: &mut R, steps: usize, dim: usize, amplitude: i16) -> Vec<Vec<i16>> {
    (0..steps).map(|_| (0..dim).map(|_| rng.gen_range(-amplitude..=amplitude)).collect()).collect()
}

/// Number of nonzero elements to place at each of `steps` steps so that the
/// total over the run is `round(len * steps * (1 - gamma))`, spread as evenly
/// as whole elements allow.
pub fn nonzero_schedule(len: usize, steps: usize, gamma: f64) -> Vec<usize> {
    let total = ((len * steps) as f64 * (1.0 - gamma)).round() as usize;
    (0..steps).map(|t| total * (t + 1) / steps - total * t / steps).collect()
}

/// Delta vector of length `len` with `nnz` nonzero entries at uniformly
/// random positions and random nonzero values in `[-amplitude, amplitude]`.
pub fn random_delta<R: Rng + ?Sized>(rng: &mut R, len: usize, nnz: usize, amplitude: i32) -> DeltaVector {
    let mut idx = sample(rng, len, nnz.min(len)).into_vec();
    idx.sort_unstable();
    let entries = idx
        .into_iter()
        .map(|i| {
            let mag = rng.gen_range(1..=amplitude.max(1));
            DeltaEntry { index: i as u32, value: if rng.gen() { mag } else { -mag } }
        })
        .collect();
    DeltaVector { entries, dense_len: len }
}
