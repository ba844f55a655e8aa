//! Weight tensors, tile-matrix reshaping, PCA centering, and im2col lowering.
//!
//! A 4-D convolutional weight is flattened in `(f_out, f_in, h, w)` order and
//! sliced into contiguous length-`d` columns of a `d x n` tile matrix. The
//! centering vector keeps one full-precision mean per tile dimension so the
//! factorization operates on a zero-mean matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// 4-D convolutional weight with 32-bit entries, row-major over
/// `(f_out, f_in, h, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    pub f_out: usize,
    pub f_in: usize,
    pub h: usize,
    pub w: usize,
    data: Vec<f32>,
}

impl WeightTensor {
    /// Validates that `data` matches the shape and contains only finite values.
    pub fn new(f_out: usize, f_in: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        let expected = f_out * f_in * h * w;
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                context: "weight tensor data",
                expected,
                actual: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                index,
                value: value as f64,
            });
        }
        Ok(Self {
            f_out,
            f_in,
            h,
            w,
            data,
        })
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.f_out, self.f_in, self.h, self.w]
    }

    pub fn element_count(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// The reshaped `d x n` matrix together with its per-row centering vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TileMatrix {
    pub entries: DMatrix<f64>,
    pub mean: DVector<f64>,
}

impl TileMatrix {
    pub fn d(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n(&self) -> usize {
        self.entries.ncols()
    }
}

/// Geometry of the convolution realized as a matrix product via [`lower_conv`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvSpec {
    /// Derives output spatial dims from input dims, kernel size, stride and
    /// zero padding. Stride must be at least 1 and the kernel must fit into
    /// the padded input.
    pub fn new(
        in_h: usize,
        in_w: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let geometry = Error::ConvGeometry {
            in_h,
            in_w,
            kernel_h,
            kernel_w,
            stride,
            padding,
        };
        if stride == 0 || kernel_h == 0 || kernel_w == 0 || in_h == 0 || in_w == 0 {
            return Err(geometry);
        }
        if in_h + 2 * padding < kernel_h || in_w + 2 * padding < kernel_w {
            return Err(geometry);
        }
        let out_h = (in_h + 2 * padding - kernel_h) / stride + 1;
        let out_w = (in_w + 2 * padding - kernel_w) / stride + 1;
        Ok(Self {
            stride,
            padding,
            in_h,
            in_w,
            out_h,
            out_w,
        })
    }

    /// Output spatial size `p = out_h * out_w`.
    pub fn output_size(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Slices the flattened weight into contiguous length-`d` columns.
///
/// Column `i` holds flat elements `[i*d, (i+1)*d)`. The centering vector is
/// zero; [`center`] is a separate step.
pub fn tile_reshape(weights: &WeightTensor, d: usize) -> Result<TileMatrix> {
    let elements = weights.element_count();
    if d == 0 || !elements.is_multiple_of(d) {
        return Err(Error::TileDivisibility {
            d,
            elements,
            shape: weights.shape(),
        });
    }
    let n = elements / d;
    let flat: Vec<f64> = weights.data().iter().map(|&v| v as f64).collect();
    Ok(TileMatrix {
        entries: DMatrix::from_column_slice(d, n, &flat),
        mean: DVector::zeros(d),
    })
}

/// Inverse of [`tile_reshape`]: adds the centering vector back per row and
/// reassembles the 4-D tensor.
pub fn untile_reshape(tiles: &TileMatrix, shape: [usize; 4]) -> Result<WeightTensor> {
    let elements: usize = shape.iter().product();
    let (d, n) = (tiles.d(), tiles.n());
    if d * n != elements {
        return Err(Error::ShapeMismatch {
            context: "untile target shape",
            expected: d * n,
            actual: elements,
        });
    }
    let mut flat = Vec::with_capacity(elements);
    for col in tiles.entries.column_iter() {
        for (row, value) in col.iter().enumerate() {
            flat.push((value + tiles.mean[row]) as f32);
        }
    }
    WeightTensor::new(shape[0], shape[1], shape[2], shape[3], flat)
}

/// Subtracts per-row means and accumulates them into the centering vector, so
/// centering an already-centered matrix is a no-op up to rounding.
pub fn center(tiles: &TileMatrix) -> TileMatrix {
    let row_means = tiles.entries.column_mean();
    let mut entries = tiles.entries.clone();
    for mut col in entries.column_iter_mut() {
        col -= &row_means;
    }
    TileMatrix {
        entries,
        mean: &tiles.mean + row_means,
    }
}

/// [`center`], then rounds the centering vector to its 32-bit storage
/// precision, folding the rounding residual back into the entries.
/// Reconstruction with the stored mean is then exact.
pub fn center_to_storage(tiles: &TileMatrix) -> TileMatrix {
    let centered = center(tiles);
    let stored_mean = centered.mean.map(|v| v as f32 as f64);
    let residual = &centered.mean - &stored_mean;
    let mut entries = centered.entries;
    for mut col in entries.column_iter_mut() {
        col += &residual;
    }
    TileMatrix {
        entries,
        mean: stored_mean,
    }
}

/// im2col: unrolls input patches so that `conv(W, X)` equals
/// `reshape(W, f_out x f_in*h*w) * X_col`.
///
/// `data` is one activation sample, row-major over `(channels, in_h, in_w)`.
/// The result has `channels*kernel_h*kernel_w` rows and `p` columns; row
/// index is `c*kernel_h*kernel_w + u*kernel_w + v`, column index is
/// `oy*out_w + ox`. Out-of-bounds taps read as zero.
pub fn lower_conv(
    data: &[f64],
    channels: usize,
    spec: &ConvSpec,
    kernel_h: usize,
    kernel_w: usize,
) -> Result<DMatrix<f64>> {
    let expected = channels * spec.in_h * spec.in_w;
    if data.len() != expected {
        return Err(Error::ShapeMismatch {
            context: "activation sample",
            expected,
            actual: data.len(),
        });
    }
    let derived = ConvSpec::new(
        spec.in_h,
        spec.in_w,
        kernel_h,
        kernel_w,
        spec.stride,
        spec.padding,
    )?;
    if derived.out_h != spec.out_h || derived.out_w != spec.out_w {
        return Err(Error::ConvGeometry {
            in_h: spec.in_h,
            in_w: spec.in_w,
            kernel_h,
            kernel_w,
            stride: spec.stride,
            padding: spec.padding,
        });
    }

    let p = spec.output_size();
    let rows = channels * kernel_h * kernel_w;
    let mut cols = DMatrix::zeros(rows, p);
    for c in 0..channels {
        for u in 0..kernel_h {
            for v in 0..kernel_w {
                let row = c * kernel_h * kernel_w + u * kernel_w + v;
                for oy in 0..spec.out_h {
                    // Signed tap coordinates; padding shifts them negative.
                    let iy = (oy * spec.stride + u) as isize - spec.padding as isize;
                    if iy < 0 || iy >= spec.in_h as isize {
                        continue;
                    }
                    for ox in 0..spec.out_w {
                        let ix = (ox * spec.stride + v) as isize - spec.padding as isize;
                        if ix < 0 || ix >= spec.in_w as isize {
                            continue;
                        }
                        let value =
                            data[c * spec.in_h * spec.in_w + iy as usize * spec.in_w + ix as usize];
                        cols[(row, oy * spec.out_w + ox)] = value;
                    }
                }
            }
        }
    }
    Ok(cols)
}
