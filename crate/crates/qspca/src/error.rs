use thiserror::Error;

/// Errors produced by the compression pipeline and file codecs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("tile size {d} does not divide element count {elements} (shape {shape:?})")]
    TileDivisibility {
        d: usize,
        elements: usize,
        shape: [usize; 4],
    },

    #[error("shape mismatch: {context}: expected {expected} elements, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value at index {index}: {value}")]
    NonFinite { index: usize, value: f64 },

    #[error("invalid convolution geometry: input {in_h}x{in_w}, kernel {kernel_h}x{kernel_w}, stride {stride}, padding {padding}")]
    ConvGeometry {
        in_h: usize,
        in_w: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    },

    #[error("bitwidth {bits} outside supported range [{min}, {max}]")]
    BitwidthRange { bits: u8, min: u8, max: u8 },

    #[error("scale vector length {got} does not match channel count {expected}")]
    ScaleLength { expected: usize, got: usize },

    #[error("sparsity target {target} exceeds latent size {latent}")]
    SparsityTarget { target: usize, latent: usize },

    #[error("extra-sparsity fraction {0} outside [0, 1]")]
    SparsityFraction(f64),

    #[error("rank {k} outside valid range [1, {max}]")]
    RankRange { k: usize, max: usize },

    #[error("SVD did not converge within {iterations} iterations")]
    SvdNonConvergence { iterations: usize },

    #[error("empty sample subset")]
    EmptySubset,

    #[error("calibration set: {0}")]
    Calibration(String),

    #[error("bad magic bytes: expected {expected:?}, got {got:?}")]
    BadMagic { expected: [u8; 4], got: [u8; 4] },

    #[error("unsupported container version {0}")]
    BadVersion(u16),

    #[error("truncated payload: needed {needed} bytes, had {available}")]
    Truncated { needed: usize, available: usize },

    #[error("trailing garbage: {0} unread bytes after payload")]
    TrailingBytes(usize),

    #[error("mask popcount {popcount} does not match stored value count {values}")]
    PopcountMismatch { popcount: usize, values: usize },

    #[error("container field out of range: {0}")]
    BadContainer(String),

    #[error("empty layer list")]
    EmptyLayerList,

    #[error("iteration law violates its contract: {0}")]
    LawViolation(String),

    #[error("contraction envelope violated at step {step}: error {error} > bound {bound}")]
    EnvelopeViolation { step: usize, error: f64, bound: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
