//! Desk-scale reliability toolkit for feed-forward networks on noisy
//! compute substrates.
//!
//! The centerpiece is a normalization layer that applies its learnable affine
//! transform *before* standardization and stochastically drops the affine
//! weights to ones and biases to zeros. Training under that randomness makes
//! the network tolerant of the multiplicative/additive disturbances that
//! in-memory weight storage introduces, and sampling the same masks at
//! inference time yields a predictive distribution whose spread scores
//! uncertainty.
//!
//! Around the layer sit the pieces needed to demonstrate this end to end:
//!
//! - [`model`] / [`forward`] / [`train`]: a small dense-network engine with
//!   exact hand-derived backpropagation and SGD.
//! - [`quant`]: sign binarization (straight-through gradients) and symmetric
//!   4/8-bit fake quantization with two's-complement bit access.
//! - [`faults`]: conductance-variation and bit-flip models plus a seeded
//!   Monte Carlo harness producing mean ± std robustness curves.
//! - [`bayes`]: multi-pass predictive distributions, NLL scores, and
//!   threshold-based out-of-distribution detection under input shifts.
//! - [`data`]: deterministic synthetic tasks and CSV I/O.
//! - [`gradcheck`]: finite-difference verification of every layer kind.
//!
//! Everything is reproducible: each consumer of randomness owns a stream
//! derived from `(seed, purpose, id, run)` ([`rng`]), so sweeps are
//! byte-identical whether they execute serially or in parallel (`parallel`
//! feature, on by default; see [`exec`]).

pub mod bayes;
pub mod data;
pub mod error;
pub mod exec;
pub mod faults;
pub mod forward;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod norm;
pub mod numfmt;
pub mod optim;
pub mod quant;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use exec::ExecMode;
pub use model::{LayerParams, LayerSpec, Mode, Model, Precision};
pub use tensor::Tensor;
