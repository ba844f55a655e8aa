//! Per-channel scale fitting, fake quantization, and the straight-through
//! gradient contract.
//!
//! Two integer ranges are supported. `PaperLiteralUnsigned` clamps codes to
//! `[0, 2^b - 1]`; `SymmetricSigned` clamps to `[-2^(b-1), 2^(b-1) - 1]` and
//! is the practical default for real-valued factors. Rounding ties go away
//! from zero. Scales are fitted once by min-max and then held fixed.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_BITS: u8 = 2;
pub const MAX_BITS: u8 = 8;

/// Fallback scale for channels with no usable dynamic range.
pub const DEGENERATE_SCALE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuantMode {
    /// Codes in `[0, 2^b - 1]`, exactly the printed clamp bounds.
    PaperLiteralUnsigned,
    /// Codes in `[-2^(b-1), 2^(b-1) - 1]`.
    SymmetricSigned,
}

/// Which index of a matrix entry selects its quantization channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuantAxis {
    PerColumn,
    PerRow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantConfig {
    pub bits: u8,
    pub mode: QuantMode,
    pub axis: QuantAxis,
}

impl QuantConfig {
    pub fn new(bits: u8, mode: QuantMode, axis: QuantAxis) -> Result<Self> {
        if !(MIN_BITS..=MAX_BITS).contains(&bits) {
            return Err(Error::BitwidthRange {
                bits,
                min: MIN_BITS,
                max: MAX_BITS,
            });
        }
        Ok(Self { bits, mode, axis })
    }

    /// Inclusive integer code range for this mode and bitwidth.
    pub fn code_range(&self) -> (i64, i64) {
        match self.mode {
            QuantMode::PaperLiteralUnsigned => (0, (1i64 << self.bits) - 1),
            QuantMode::SymmetricSigned => {
                let half = 1i64 << (self.bits - 1);
                (-half, half - 1)
            }
        }
    }

    fn channel_count(&self, rows: usize, cols: usize) -> usize {
        match self.axis {
            QuantAxis::PerColumn => cols,
            QuantAxis::PerRow => rows,
        }
    }

    fn channel_of(&self, row: usize, col: usize) -> usize {
        match self.axis {
            QuantAxis::PerColumn => col,
            QuantAxis::PerRow => row,
        }
    }
}

/// One positive scale per quantization channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleVector(Vec<f64>);

impl ScaleVector {
    pub fn new(scales: Vec<f64>) -> Result<Self> {
        if let Some(&bad) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "scale must be finite and positive, got {bad}"
            )));
        }
        Ok(Self(scales))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Rounds every scale to IEEE binary16 (round-to-nearest-even), the
    /// storage precision, so in-memory factors match the encoded file.
    pub fn rounded_to_f16(&self) -> Self {
        Self(
            self.0
                .iter()
                .map(|&s| {
                    let r = half::f16::from_f64(s).to_f64();
                    if r > 0.0 {
                        r
                    } else {
                        // f16 underflow on a tiny positive scale; keep the
                        // smallest positive subnormal so positivity holds.
                        half::f16::from_bits(1).to_f64()
                    }
                })
                .collect(),
        )
    }
}

/// Integer codes plus the scales that dequantize them.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMatrix {
    pub codes: DMatrix<i32>,
    pub scales: ScaleVector,
    pub config: QuantConfig,
}

impl QuantizedMatrix {
    /// Dequantized values: `code * channel scale`, exactly.
    pub fn dequantized(&self) -> DMatrix<f64> {
        let scales = self.scales.as_slice();
        DMatrix::from_fn(self.codes.nrows(), self.codes.ncols(), |i, j| {
            self.codes[(i, j)] as f64 * scales[self.config.channel_of(i, j)]
        })
    }

    pub fn nonzero_count(&self) -> usize {
        self.codes.iter().filter(|&&c| c != 0).count()
    }
}

/// Min-max scale fitting, one scale per channel.
pub fn fit_minmax_scales(matrix: &DMatrix<f64>, config: &QuantConfig) -> ScaleVector {
    let channels = config.channel_count(matrix.nrows(), matrix.ncols());
    let mut scales = vec![0.0f64; channels];
    match config.mode {
        QuantMode::PaperLiteralUnsigned => {
            let mut maxima = vec![f64::NEG_INFINITY; channels];
            for j in 0..matrix.ncols() {
                for i in 0..matrix.nrows() {
                    let c = config.channel_of(i, j);
                    maxima[c] = maxima[c].max(matrix[(i, j)]);
                }
            }
            let levels = ((1i64 << config.bits) - 1) as f64;
            for (s, &m) in scales.iter_mut().zip(&maxima) {
                *s = if m > 0.0 { m / levels } else { DEGENERATE_SCALE };
            }
        }
        QuantMode::SymmetricSigned => {
            let mut maxima = vec![0.0f64; channels];
            for j in 0..matrix.ncols() {
                for i in 0..matrix.nrows() {
                    let c = config.channel_of(i, j);
                    maxima[c] = maxima[c].max(matrix[(i, j)].abs());
                }
            }
            let levels = ((1i64 << (config.bits - 1)) - 1) as f64;
            for (s, &m) in scales.iter_mut().zip(&maxima) {
                *s = if m > 0.0 { m / levels } else { DEGENERATE_SCALE };
            }
        }
    }
    ScaleVector(scales)
}

fn check_scale_len(
    matrix: &DMatrix<f64>,
    scales: &ScaleVector,
    config: &QuantConfig,
) -> Result<()> {
    let expected = config.channel_count(matrix.nrows(), matrix.ncols());
    if scales.len() != expected {
        return Err(Error::ScaleLength {
            expected,
            got: scales.len(),
        });
    }
    Ok(())
}

/// Quantizes with round-half-away-from-zero and the mode's clamp bounds.
pub fn quantize(
    matrix: &DMatrix<f64>,
    scales: &ScaleVector,
    config: &QuantConfig,
) -> Result<QuantizedMatrix> {
    check_scale_len(matrix, scales, config)?;
    let (lo, hi) = config.code_range();
    let s = scales.as_slice();
    let codes = DMatrix::from_fn(matrix.nrows(), matrix.ncols(), |i, j| {
        // f64::round ties away from zero, matching the chosen convention.
        let q = (matrix[(i, j)] / s[config.channel_of(i, j)]).round();
        (q as i64).clamp(lo, hi) as i32
    });
    Ok(QuantizedMatrix {
        codes,
        scales: scales.clone(),
        config: *config,
    })
}

/// Straight-through gradient gate: 1 where the pre-clamp value stays inside
/// `[lo - 0.5, hi + 0.5]` (closed interval), 0 where the clamp saturates.
pub fn ste_gradient_mask(
    matrix: &DMatrix<f64>,
    scales: &ScaleVector,
    config: &QuantConfig,
) -> Result<DMatrix<f64>> {
    check_scale_len(matrix, scales, config)?;
    let (lo, hi) = config.code_range();
    let (lo, hi) = (lo as f64 - 0.5, hi as f64 + 0.5);
    let s = scales.as_slice();
    Ok(DMatrix::from_fn(matrix.nrows(), matrix.ncols(), |i, j| {
        let v = matrix[(i, j)] / s[config.channel_of(i, j)];
        if (lo..=hi).contains(&v) {
            1.0
        } else {
            0.0
        }
    }))
}

/// Quantizer attached to a factor matrix. `Identity` is an exact pass-through
/// used to exercise the unquantized PCA special case.
#[derive(Debug, Clone, PartialEq)]
pub enum Quantizer {
    Uniform {
        config: QuantConfig,
        scales: ScaleVector,
    },
    Identity,
}

impl Quantizer {
    pub fn uniform(config: QuantConfig, scales: ScaleVector) -> Self {
        Self::Uniform { config, scales }
    }

    /// Quantize-dequantize view of `matrix` (the values the deployed model
    /// actually uses).
    pub fn dequantized(&self, matrix: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            Self::Uniform { config, scales } => {
                Ok(quantize(matrix, scales, config)?.dequantized())
            }
            Self::Identity => Ok(matrix.clone()),
        }
    }

    pub fn ste_mask(&self, matrix: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            Self::Uniform { config, scales } => ste_gradient_mask(matrix, scales, config),
            Self::Identity => Ok(DMatrix::from_element(matrix.nrows(), matrix.ncols(), 1.0)),
        }
    }

    /// Integer codes, when this quantizer has them.
    pub fn quantized(&self, matrix: &DMatrix<f64>) -> Result<Option<QuantizedMatrix>> {
        match self {
            Self::Uniform { config, scales } => Ok(Some(quantize(matrix, scales, config)?)),
            Self::Identity => Ok(None),
        }
    }

    pub fn config(&self) -> Option<&QuantConfig> {
        match self {
            Self::Uniform { config, .. } => Some(config),
            Self::Identity => None,
        }
    }

    pub fn scales(&self) -> Option<&ScaleVector> {
        match self {
            Self::Uniform { scales, .. } => Some(scales),
            Self::Identity => None,
        }
    }
}
