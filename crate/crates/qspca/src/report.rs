//! Size and compute accounting for compressed layers.
//!
//! Bit counts follow the sparse factor storage scheme: dense codebook codes,
//! a 1-bit-per-entry mask, the surviving latent codes, and 2k binary16 scale
//! parameters. The centering vector counts as uncompressible and is reported
//! separately.

use serde::{Deserialize, Serialize};

use crate::codec::{payload_layout, CompressedLayer};
use crate::error::{Error, Result};

/// Bit cost of the 2k binary16 scale parameters.
pub fn quantization_adjustment_bits(k: u64) -> u64 {
    2 * k * 16
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    /// Original tensor: 32 bits per element.
    pub l_o_bits: u64,
    /// Compressed factors: `d*k*b_c + k*n + (1-r)*k*n*b_z + l_q`.
    pub l_c_bits: u64,
    /// Scale-parameter adjustment `2k * 16`.
    pub l_q_bits: u64,
    /// Sparsity ratio `r = 1 - nonzeros / (k*n)`.
    pub sparsity: f64,
    pub nonzeros: u64,
    pub weight_elements: u64,
    pub codebook_elements: u64,
    pub latent_elements: u64,
    /// Number of tiles `n`.
    pub tiles: u64,
    /// `l_o / l_c`, a ratio of exact integer bit counts.
    pub compression_ratio: f64,
    /// Whether the mask + nonzero encoding beats storing all `k*n` codes,
    /// i.e. `r > 1/b_z`.
    pub sparse_payoff: bool,
    /// `d*k*b_c + k*n*b_z + l_q`: the dense alternative, for comparison.
    pub dense_l_c_bits: u64,
    /// Byte-accurate factor payload in the container (streams padded to
    /// byte boundaries, scales included; centering vector excluded).
    pub payload_bytes: u64,
    /// Centering vector bytes, kept at full precision.
    pub centering_bytes: u64,
}

/// Exact bit accounting for one layer from its dimensions and the integral
/// stored-nonzero count.
pub fn layer_size_bits(
    shape: [usize; 4],
    d: usize,
    k: usize,
    b_c: u8,
    b_z: u8,
    nonzeros: u64,
) -> Result<SizeReport> {
    let elements = shape.iter().map(|&v| v as u64).product::<u64>();
    if d == 0 || !elements.is_multiple_of(d as u64) {
        return Err(Error::TileDivisibility {
            d,
            elements: elements as usize,
            shape,
        });
    }
    let n = elements / d as u64;
    let (d, k) = (d as u64, k as u64);
    let latent = k * n;
    if nonzeros > latent {
        return Err(Error::SparsityTarget {
            target: nonzeros as usize,
            latent: latent as usize,
        });
    }
    let l_o = elements * 32;
    let l_q = quantization_adjustment_bits(k);
    let l_c = d * k * b_c as u64 + latent + nonzeros * b_z as u64 + l_q;
    let dense = d * k * b_c as u64 + latent * b_z as u64 + l_q;
    let r = 1.0 - nonzeros as f64 / latent as f64;
    // r > 1/b_z exactly, as integers: mask + stored codes beat dense codes.
    let payoff = latent + nonzeros * (b_z as u64) < latent * b_z as u64;
    Ok(SizeReport {
        l_o_bits: l_o,
        l_c_bits: l_c,
        l_q_bits: l_q,
        sparsity: r,
        nonzeros,
        weight_elements: elements,
        codebook_elements: d * k,
        latent_elements: latent,
        tiles: n,
        compression_ratio: l_o as f64 / l_c as f64,
        sparse_payoff: payoff,
        dense_l_c_bits: dense,
        payload_bytes: (d * k * b_c as u64).div_ceil(8)
            + latent.div_ceil(8)
            + (nonzeros * b_z as u64).div_ceil(8)
            + 2 * k * 2,
        centering_bytes: d * 4,
    })
}

impl SizeReport {
    pub fn from_layer(layer: &CompressedLayer) -> Result<Self> {
        let report = layer_size_bits(
            layer.shape.map(|v| v as usize),
            layer.d as usize,
            layer.k as usize,
            layer.b_c,
            layer.b_z,
            layer.stored_nonzeros() as u64,
        )?;
        // The formula must agree exactly with the container's payload bytes.
        let layout = payload_layout(layer);
        debug_assert_eq!(
            report.payload_bytes,
            layout[..4].iter().sum::<usize>() as u64
        );
        debug_assert_eq!(report.centering_bytes, layout[4] as u64);
        Ok(report)
    }
}

/// Whole-network compression ratio `sum L_o / (L_u + sum L_c)` with
/// uncompressible bits `L_u`.
pub fn network_ratio(layers: &[SizeReport], l_u_bits: u64) -> Result<f64> {
    if layers.is_empty() {
        return Err(Error::EmptyLayerList);
    }
    let total_o: u64 = layers.iter().map(|l| l.l_o_bits).sum();
    let total_c: u64 = layers.iter().map(|l| l.l_c_bits).sum();
    Ok(total_o as f64 / (l_u_bits + total_c) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    /// Forward-pass MACs: `f_in * f_out * h * w * p`.
    pub base_macs: u64,
    /// Filter-reconstruction MACs: `f_in * f_out * h * w * k`.
    pub reconstruction_macs: u64,
    /// `k / p`.
    pub mac_overhead: f64,
    /// Base MACs weighted by 32x32-bit operands.
    pub base_bops: u64,
    /// Reconstruction MACs weighted by `b_c x b_z`-bit operands.
    pub reconstruction_bops: u64,
    pub bop_overhead: f64,
}

/// Compute overhead of on-the-fly weight reconstruction relative to the
/// layer's forward pass with output spatial size `p`.
pub fn overhead(shape: [usize; 4], k: usize, p: usize, b_c: u8, b_z: u8) -> Result<OverheadReport> {
    if p == 0 {
        return Err(Error::InvalidArgument("output spatial size p must be >= 1".into()));
    }
    let kernel_macs: u64 = shape.iter().map(|&v| v as u64).product();
    let base_macs = kernel_macs * p as u64;
    let reconstruction_macs = kernel_macs * k as u64;
    let base_bops = base_macs * 32 * 32;
    let reconstruction_bops = reconstruction_macs * b_c as u64 * b_z as u64;
    Ok(OverheadReport {
        base_macs,
        reconstruction_macs,
        mac_overhead: k as f64 / p as f64,
        base_bops,
        reconstruction_bops,
        bop_overhead: reconstruction_bops as f64 / base_bops as f64,
    })
}
