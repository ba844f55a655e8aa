//! Quantized sparse PCA compression of convolutional weight tensors.
//!
//! A weight tensor is reshaped into a `d x n` tile matrix, centered, and
//! factored into a quantized codebook `C` (d x k) times a quantized sparse
//! latent `Z` (k x n) by projected gradient descent with hard thresholding,
//! optimized against sampled layer input/output activations. The factors
//! serialize bit-exactly into the `QSPC` container, with size and compute
//! overhead accounted per layer and per network. The [`lab`] module studies
//! the underlying iterative projection methods (projection inequality,
//! contraction envelopes, IHT and BIHT recovery) on synthetic instances.

pub mod codec;
pub mod commands;
pub mod error;
pub mod lab;
pub mod optim;
pub mod qspt;
pub mod quant;
pub mod report;
pub mod solver;
pub mod sweep;
pub mod tensor;

pub use error::{Error, Result};
pub use quant::{QuantAxis, QuantConfig, QuantMode, QuantizedMatrix, Quantizer, ScaleVector};
pub use report::{OverheadReport, SizeReport};
pub use solver::{
    CalibrationSet, FactorPair, SolveOutcome, SolveTrace, SolverConfig, SparsityTarget,
    StoppingRule, Termination, ThresholdSchedule,
};
pub use tensor::{ConvSpec, TileMatrix, WeightTensor};
