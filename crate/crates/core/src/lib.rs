//! Software model of NVIDIA Tensor Core instructions.
//!
//! The crate reproduces, on the CPU and bit-for-bit, the numeric semantics
//! of the warp-level `mma`, `mma.sp` and `ldmatrix` instructions, and
//! predicts their latency and throughput from a calibration dataset of
//! microbenchmark measurements. The pieces:
//!
//! - [`formats`]: parameterized low-precision float formats (TF32, BF16,
//!   FP16, FP8) with bit-exact encode/decode/round.
//! - [`oracle`]: the CPU reference multiply-accumulate used as the error
//!   baseline, plus the l2 relative-error metric.
//! - [`mma`]: dense tile emulation with a configurable mixed-precision
//!   pipeline; [`fragments`] holds the per-lane register layouts.
//! - [`sparse`]: 2:4 structured sparsity and the `mma.sp` selector.
//! - [`shmem`]: banked shared memory, `ldmatrix` distribution and the
//!   bank-conflict latency model.
//! - [`perf`]: the calibration tables and the sub-core pipeline model
//!   behind latency/throughput prediction.
//! - [`experiments`]: deterministic numeric experiments (element probes and
//!   chain matrix multiplication) with pinned RNG streams.

pub mod error;
pub mod exact;
pub mod formats;
pub mod experiments;
pub mod fragments;
pub mod matrix;
pub mod mma;
pub mod oracle;
pub mod perf;
pub mod shmem;
pub mod sparse;

pub use error::{Error, Result};
pub use formats::{FloatFormat, QuantizedValue, RoundingMode};
pub use matrix::{DenseMatrix, Layout};
pub use mma::{MmaShape, NumericPipelineConfig};
