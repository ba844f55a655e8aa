//! The "QSPT" tensor archive: magic `QSPT`, version u16 = 1, tensor count
//! u32; per tensor a u16 name length + UTF-8 name, rank u8, dims as
//! little-endian u32, then the payload as little-endian IEEE-754 f32 in
//! row-major order. Holds both weights and calibration activations.

use crate::error::{Error, Result};
use crate::tensor::WeightTensor;

pub const QSPT_MAGIC: [u8; 4] = *b"QSPT";
pub const QSPT_VERSION: u16 = 1;
pub const MAX_RANK: u8 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, dims: Vec<u32>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        if dims.is_empty() || dims.len() > MAX_RANK as usize {
            return Err(Error::BadContainer(format!(
                "tensor '{name}' has rank {}, supported range is 1..={MAX_RANK}",
                dims.len()
            )));
        }
        let expected: usize = dims.iter().map(|&d| d as usize).product();
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                context: "named tensor payload",
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
        Ok(Self { name, dims, data })
    }

    pub fn element_count(&self) -> usize {
        self.data.len()
    }

    pub fn from_weights(name: impl Into<String>, weights: &WeightTensor) -> Self {
        let [a, b, c, d] = weights.shape();
        Self {
            name: name.into(),
            dims: vec![a as u32, b as u32, c as u32, d as u32],
            data: weights.data().to_vec(),
        }
    }

    pub fn to_weights(&self) -> Result<WeightTensor> {
        if self.dims.len() != 4 {
            return Err(Error::BadContainer(format!(
                "tensor '{}' has rank {}, expected 4",
                self.name,
                self.dims.len()
            )));
        }
        WeightTensor::new(
            self.dims[0] as usize,
            self.dims[1] as usize,
            self.dims[2] as usize,
            self.dims[3] as usize,
            self.data.clone(),
        )
    }
}

pub fn to_bytes(tensors: &[NamedTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&QSPT_MAGIC);
    out.extend_from_slice(&QSPT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.dims.len() as u8);
        for &d in &t.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
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
    if magic != QSPT_MAGIC {
        return Err(Error::BadMagic {
            expected: QSPT_MAGIC,
            got: magic,
        });
    }
    let version = u16::from_le_bytes(take(&mut cursor, 2)?.try_into().unwrap());
    if version != QSPT_VERSION {
        return Err(Error::BadVersion(version));
    }
    let count = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap());
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut cursor, 2)?.try_into().unwrap());
        let name = std::str::from_utf8(take(&mut cursor, name_len as usize)?)
            .map_err(|e| Error::BadContainer(format!("tensor name is not UTF-8: {e}")))?
            .to_string();
        let rank = take(&mut cursor, 1)?[0];
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::BadContainer(format!(
                "tensor '{name}' has rank {rank}, supported range is 1..={MAX_RANK}"
            )));
        }
        let mut dims = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            dims.push(u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()));
        }
        let elements: usize = dims.iter().map(|&d| d as usize).product();
        let payload = take(&mut cursor, elements * 4)?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(NamedTensor::new(name, dims, data)?);
    }
    if cursor != bytes.len() {
        return Err(Error::TrailingBytes(bytes.len() - cursor));
    }
    Ok(tensors)
}

pub fn write_file(path: &std::path::Path, tensors: &[NamedTensor]) -> Result<()> {
    Ok(std::fs::write(path, to_bytes(tensors))?)
}

pub fn read_file(path: &std::path::Path) -> Result<Vec<NamedTensor>> {
    from_bytes(&std::fs::read(path)?)
}

/// Looks up a tensor by name, or falls back to the only rank-4 tensor.
pub fn find_weights<'a>(tensors: &'a [NamedTensor], name: &str) -> Result<&'a NamedTensor> {
    if let Some(t) = tensors.iter().find(|t| t.name == name) {
        return Ok(t);
    }
    let mut rank4 = tensors.iter().filter(|t| t.dims.len() == 4);
    match (rank4.next(), rank4.next()) {
        (Some(t), None) => Ok(t),
        _ => Err(Error::BadContainer(format!(
            "no tensor named '{name}' and no unique rank-4 tensor in the archive"
        ))),
    }
}

pub fn find_named<'a>(tensors: &'a [NamedTensor], name: &str) -> Result<&'a NamedTensor> {
    tensors.iter().find(|t| t.name == name).ok_or_else(|| {
        Error::BadContainer(format!("archive has no tensor named '{name}'"))
    })
}
