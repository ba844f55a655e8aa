//! Bit-exact serialization of compressed layers.
//!
//! Container layout ("QSPC"): magic `QSPC`, version u16 = 1, then eleven
//! little-endian u32 header fields `(f_out, f_in, h, w, d, k, n, b_c, b_z,
//! mode_c, mode_z)`, then the payload streams in order: codebook codes
//! (d*k fields of b_c bits), mask bitmap (k*n bits), latent nonzero codes
//! (popcount fields of b_z bits, row-major mask order), scales (2k IEEE
//! binary16), centering vector (d f32). Every bitstream is padded to a byte
//! boundary; bit 0 of a stream is the least significant bit of its first
//! byte. Signed codes are stored as two's complement in their field width.

use half::f16;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::quant::{QuantAxis, QuantConfig, QuantMode, Quantizer, ScaleVector};
use crate::solver::FactorPair;

pub const QSPC_MAGIC: [u8; 4] = *b"QSPC";
pub const QSPC_VERSION: u16 = 1;

/// Serialized factors of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedLayer {
    pub shape: [u32; 4],
    pub d: u32,
    pub k: u32,
    pub n: u32,
    pub b_c: u8,
    pub b_z: u8,
    pub mode_c: QuantMode,
    pub mode_z: QuantMode,
    /// All d*k codebook codes, row-major.
    pub c_codes: Vec<i32>,
    /// k*n mask bits, row-major, packed LSB-first.
    pub mask: Vec<u8>,
    /// Codes at set mask bits, in row-major mask order.
    pub z_codes: Vec<i32>,
    /// Per-column codebook scales (already rounded to binary16).
    pub c_scales: Vec<f32>,
    /// Per-row latent scales (already rounded to binary16).
    pub z_scales: Vec<f32>,
    /// Full-precision centering vector, length d.
    pub mean: Vec<f32>,
}

impl CompressedLayer {
    pub fn latent_len(&self) -> usize {
        self.k as usize * self.n as usize
    }

    pub fn mask_bit(&self, index: usize) -> bool {
        self.mask[index / 8] >> (index % 8) & 1 == 1
    }

    pub fn stored_nonzeros(&self) -> usize {
        self.mask.iter().map(|b| b.count_ones() as usize).sum()
    }
}

// ---------------------------------------------------------------------------
// Bit-level packing

struct BitWriter {
    bytes: Vec<u8>,
    bit: usize,
}

impl BitWriter {
    fn new() -> Self {
        Self {
            bytes: Vec::new(),
            bit: 0,
        }
    }

    fn push(&mut self, value: u64, width: u8) {
        for i in 0..width {
            if self.bit.is_multiple_of(8) {
                self.bytes.push(0);
            }
            if value >> i & 1 == 1 {
                *self.bytes.last_mut().unwrap() |= 1 << (self.bit % 8);
            }
            self.bit += 1;
        }
    }

    fn finish(self) -> Vec<u8> {
        self.bytes
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    bit: usize,
}

impl<'a> BitReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, bit: 0 }
    }

    fn pull(&mut self, width: u8) -> Result<u64> {
        let needed = self.bit + width as usize;
        if needed > self.bytes.len() * 8 {
            return Err(Error::Truncated {
                needed: needed.div_ceil(8),
                available: self.bytes.len(),
            });
        }
        let mut value = 0u64;
        for i in 0..width {
            let pos = self.bit + i as usize;
            if self.bytes[pos / 8] >> (pos % 8) & 1 == 1 {
                value |= 1 << i;
            }
        }
        self.bit += width as usize;
        Ok(value)
    }
}

fn field_to_code(raw: u64, width: u8, mode: QuantMode) -> i32 {
    match mode {
        QuantMode::PaperLiteralUnsigned => raw as i32,
        QuantMode::SymmetricSigned => {
            // Sign-extend a two's-complement field.
            let sign = 1u64 << (width - 1);
            if raw & sign != 0 {
                (raw as i64 - (1i64 << width)) as i32
            } else {
                raw as i32
            }
        }
    }
}

fn code_to_field(code: i32, width: u8) -> u64 {
    (code as i64 as u64) & ((1u64 << width) - 1)
}

fn pack_codes(codes: &[i32], width: u8) -> Vec<u8> {
    let mut w = BitWriter::new();
    for &c in codes {
        w.push(code_to_field(c, width), width);
    }
    w.finish()
}

fn unpack_codes(bytes: &[u8], count: usize, width: u8, mode: QuantMode) -> Result<Vec<i32>> {
    let mut r = BitReader::new(bytes);
    (0..count).map(|_| r.pull(width).map(|v| field_to_code(v, width, mode))).collect()
}

pub(crate) fn packed_len_bytes(fields: usize, width: u8) -> usize {
    (fields * width as usize).div_ceil(8)
}

// ---------------------------------------------------------------------------
// Encode / decode between solver factors and the serialized form

fn mode_tag(mode: QuantMode) -> u32 {
    match mode {
        QuantMode::PaperLiteralUnsigned => 0,
        QuantMode::SymmetricSigned => 1,
    }
}

fn tag_mode(tag: u32) -> Result<QuantMode> {
    match tag {
        0 => Ok(QuantMode::PaperLiteralUnsigned),
        1 => Ok(QuantMode::SymmetricSigned),
        other => Err(Error::BadContainer(format!("unknown quantizer mode {other}"))),
    }
}

/// Serializes quantized factors. Mask bits are set only where the solver kept
/// the entry AND its code is nonzero, so accidental zeros inside the kept
/// support cost no storage and the file's nonzero ratio matches its mask.
pub fn encode(pair: &FactorPair, mean: &DVector<f64>, shape: [usize; 4]) -> Result<CompressedLayer> {
    let (c_cfg, c_scales) = uniform_parts(&pair.codebook_quant, "codebook")?;
    let (z_cfg, z_scales) = uniform_parts(&pair.latent_quant, "latent")?;
    let elements: usize = shape.iter().product();
    let (d, k, n) = (pair.d(), pair.k(), pair.n_tiles());
    if d * n != elements {
        return Err(Error::ShapeMismatch {
            context: "encode target shape",
            expected: d * n,
            actual: elements,
        });
    }
    if mean.len() != d {
        return Err(Error::ShapeMismatch {
            context: "centering vector",
            expected: d,
            actual: mean.len(),
        });
    }

    // Scales adopt their binary16 storage precision before quantizing so the
    // file and the in-memory model agree exactly.
    let c_scales = c_scales.rounded_to_f16();
    let z_scales = z_scales.rounded_to_f16();
    let cq = crate::quant::quantize(&pair.codebook, &c_scales, &c_cfg)?;
    let zq = crate::quant::quantize(&pair.latent, &z_scales, &z_cfg)?;

    let mut c_codes = Vec::with_capacity(d * k);
    for i in 0..d {
        for j in 0..k {
            c_codes.push(cq.codes[(i, j)]);
        }
    }

    let mut mask_writer = BitWriter::new();
    let mut z_codes = Vec::new();
    for i in 0..k {
        for j in 0..n {
            let kept = pair.mask[(i, j)] != 0.0 && zq.codes[(i, j)] != 0;
            mask_writer.push(kept as u64, 1);
            if kept {
                z_codes.push(zq.codes[(i, j)]);
            }
        }
    }

    Ok(CompressedLayer {
        shape: shape.map(|v| v as u32),
        d: d as u32,
        k: k as u32,
        n: n as u32,
        b_c: c_cfg.bits,
        b_z: z_cfg.bits,
        mode_c: c_cfg.mode,
        mode_z: z_cfg.mode,
        c_codes,
        mask: mask_writer.finish(),
        z_codes,
        c_scales: to_f16_f32(c_scales.as_slice()),
        z_scales: to_f16_f32(z_scales.as_slice()),
        mean: mean.iter().map(|&v| v as f32).collect(),
    })
}

fn uniform_parts(q: &Quantizer, which: &str) -> Result<(QuantConfig, ScaleVector)> {
    match q {
        Quantizer::Uniform { config, scales } => Ok((*config, scales.clone())),
        Quantizer::Identity => Err(Error::InvalidArgument(format!(
            "{which} quantizer must be uniform to encode"
        ))),
    }
}

fn to_f16_f32(scales: &[f64]) -> Vec<f32> {
    scales.iter().map(|&s| f16::from_f64(s).to_f32()).collect()
}

/// Exact inverse of [`encode`] on the stored representation.
pub fn decode(layer: &CompressedLayer) -> Result<(FactorPair, DVector<f64>, [usize; 4])> {
    let (d, k, n) = (layer.d as usize, layer.k as usize, layer.n as usize);
    let popcount = layer.stored_nonzeros();
    if popcount != layer.z_codes.len() {
        return Err(Error::PopcountMismatch {
            popcount,
            values: layer.z_codes.len(),
        });
    }

    let c_cfg = QuantConfig::new(layer.b_c, layer.mode_c, QuantAxis::PerColumn)?;
    let z_cfg = QuantConfig::new(layer.b_z, layer.mode_z, QuantAxis::PerRow)?;
    let c_scales = ScaleVector::new(layer.c_scales.iter().map(|&s| s as f64).collect())?;
    let z_scales = ScaleVector::new(layer.z_scales.iter().map(|&s| s as f64).collect())?;

    let mut codebook = DMatrix::zeros(d, k);
    for i in 0..d {
        for j in 0..k {
            codebook[(i, j)] = layer.c_codes[i * k + j] as f64 * c_scales.as_slice()[j];
        }
    }

    let mut latent = DMatrix::zeros(k, n);
    let mut mask = DMatrix::zeros(k, n);
    let mut next = 0usize;
    for i in 0..k {
        for j in 0..n {
            if layer.mask_bit(i * n + j) {
                latent[(i, j)] = layer.z_codes[next] as f64 * z_scales.as_slice()[i];
                mask[(i, j)] = 1.0;
                next += 1;
            }
        }
    }

    let mut pair = FactorPair::new(codebook, latent)?;
    pair.mask = mask;
    pair.codebook_quant = Quantizer::uniform(c_cfg, c_scales);
    pair.latent_quant = Quantizer::uniform(z_cfg, z_scales);
    let mean = DVector::from_iterator(d, layer.mean.iter().map(|&v| v as f64));
    let shape = layer.shape.map(|v| v as usize);
    Ok((pair, mean, shape))
}

// ---------------------------------------------------------------------------
// Container I/O

/// Byte sizes of the payload streams, in file order.
pub fn payload_layout(layer: &CompressedLayer) -> [usize; 5] {
    let (d, k, n) = (layer.d as usize, layer.k as usize, layer.n as usize);
    [
        packed_len_bytes(d * k, layer.b_c),
        (k * n).div_ceil(8),
        packed_len_bytes(layer.z_codes.len(), layer.b_z),
        2 * k * 2,
        d * 4,
    ]
}

pub fn to_bytes(layer: &CompressedLayer) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&QSPC_MAGIC);
    out.extend_from_slice(&QSPC_VERSION.to_le_bytes());
    for field in [
        layer.shape[0],
        layer.shape[1],
        layer.shape[2],
        layer.shape[3],
        layer.d,
        layer.k,
        layer.n,
        layer.b_c as u32,
        layer.b_z as u32,
        mode_tag(layer.mode_c),
        mode_tag(layer.mode_z),
    ] {
        out.extend_from_slice(&field.to_le_bytes());
    }
    out.extend_from_slice(&pack_codes(&layer.c_codes, layer.b_c));
    out.extend_from_slice(&layer.mask);
    out.extend_from_slice(&pack_codes(&layer.z_codes, layer.b_z));
    for &s in layer.c_scales.iter().chain(&layer.z_scales) {
        out.extend_from_slice(&f16::from_f32(s).to_le_bytes());
    }
    for &m in &layer.mean {
        out.extend_from_slice(&m.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<CompressedLayer> {
    let mut cursor = 0usize;
    let take = |cursor: &mut usize, len: usize| -> Result<&[u8]> {
        if *cursor + len > bytes.len() {
            return Err(Error::Truncated {
                needed: *cursor + len,
                available: bytes.len(),
            });
        }
        let slice = &bytes[*cursor..*cursor + len];
        *cursor += len;
        Ok(slice)
    };

    let magic: [u8; 4] = take(&mut cursor, 4)?.try_into().unwrap();
    if magic != QSPC_MAGIC {
        return Err(Error::BadMagic {
            expected: QSPC_MAGIC,
            got: magic,
        });
    }
    let version = u16::from_le_bytes(take(&mut cursor, 2)?.try_into().unwrap());
    if version != QSPC_VERSION {
        return Err(Error::BadVersion(version));
    }
    let mut fields = [0u32; 11];
    for f in &mut fields {
        *f = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap());
    }
    let [s0, s1, s2, s3, d, k, n, b_c, b_z, mode_c, mode_z] = fields;
    let elements = s0 as u64 * s1 as u64 * s2 as u64 * s3 as u64;
    if d == 0 || k == 0 || n == 0 || d as u64 * n as u64 != elements {
        return Err(Error::BadContainer(format!(
            "dimensions d={d}, n={n} inconsistent with shape {s0}x{s1}x{s2}x{s3}"
        )));
    }
    if !(2..=8).contains(&b_c) || !(2..=8).contains(&b_z) {
        return Err(Error::BadContainer(format!("bitwidths b_c={b_c}, b_z={b_z}")));
    }
    let mode_c = tag_mode(mode_c)?;
    let mode_z = tag_mode(mode_z)?;
    let (d, k, n) = (d as usize, k as usize, n as usize);
    let (b_c, b_z) = (b_c as u8, b_z as u8);

    let c_bytes = take(&mut cursor, packed_len_bytes(d * k, b_c))?;
    let c_codes = unpack_codes(c_bytes, d * k, b_c, mode_c)?;
    let mask = take(&mut cursor, (k * n).div_ceil(8))?.to_vec();
    // Padding bits past k*n must be clear, otherwise popcount lies.
    for idx in (k * n)..mask.len() * 8 {
        if mask[idx / 8] >> (idx % 8) & 1 == 1 {
            return Err(Error::BadContainer("set bit in mask padding".into()));
        }
    }
    let popcount: usize = mask.iter().map(|b| b.count_ones() as usize).sum();
    let z_bytes = take(&mut cursor, packed_len_bytes(popcount, b_z))?;
    let z_codes = unpack_codes(z_bytes, popcount, b_z, mode_z)?;
    let scale_bytes = take(&mut cursor, 2 * k * 2)?;
    let mut scales = Vec::with_capacity(2 * k);
    for chunk in scale_bytes.chunks_exact(2) {
        scales.push(f16::from_le_bytes([chunk[0], chunk[1]]).to_f32());
    }
    let mean_bytes = take(&mut cursor, d * 4)?;
    let mean: Vec<f32> = mean_bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if cursor != bytes.len() {
        return Err(Error::TrailingBytes(bytes.len() - cursor));
    }

    Ok(CompressedLayer {
        shape: [s0, s1, s2, s3],
        d: d as u32,
        k: k as u32,
        n: n as u32,
        b_c,
        b_z,
        mode_c,
        mode_z,
        c_codes,
        mask,
        z_codes,
        c_scales: scales[..k].to_vec(),
        z_scales: scales[k..].to_vec(),
        mean,
    })
}

pub fn write_file(path: &std::path::Path, layer: &CompressedLayer) -> Result<()> {
    Ok(std::fs::write(path, to_bytes(layer))?)
}

pub fn read_file(path: &std::path::Path) -> Result<CompressedLayer> {
    from_bytes(&std::fs::read(path)?)
}
