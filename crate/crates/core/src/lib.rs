//! Bit-exact fixed-point DeltaGRU inference, a cycle-level functional model
//! of a column-skipping delta-RNN accelerator, and closed-form performance
//! estimates.
//!
//! - [`fixedpoint`]: Q-format arithmetic with saturation.
//! - [`lut`]: table-driven sigmoid and tanh.
//! - [`deltagru`]: dense GRU and DeltaGRU reference kernels.
//! - [`sim`]: Delta Unit / PE array simulator with cycle and traffic counters.
//! - [`perf`]: sparsity statistics and throughput/latency estimators.
//! - [`model_io`]: quantization and the `EDRNNv01` weight container.

pub mod deltagru;
pub mod error;
pub mod fixedpoint;
pub mod lut;
pub mod model_io;
pub mod parallel;
pub mod perf;
pub mod sim;
pub mod synth;

pub use deltagru::{
    deltagru_forward, deltagru_step, dense_gru_step_fixed, dense_gru_step_float, GruDims, GruLayerParams,
    LayerState, Network,
};
pub use error::{ContainerError, FixedError, LutError, ModelError, PerfError};
pub use fixedpoint::{FixedWord, QFormat, Rounding};
pub use lut::{ActLut, Activation, LutPair};
pub use sim::{AccelConfig, ExecutionStats};
