//! IDX binary format: big-endian magic, big-endian u32 dimensions, raw u8
//! payload.

use crate::error::{AppError, Result};
use std::fs;
use std::io::Write;
use std::path::Path;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Parsed IDX payload: u8 tensor plus its shape. Images scale to `[0, 1]`
/// through [`IdxData::unit_floats`]; label files expose class ids through
/// [`IdxData::labels`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxData {
    magic: u32,
    shape: Vec<usize>,
    raw: Vec<u8>,
}

impl IdxData {
    pub fn from_images(shape: Vec<usize>, raw: Vec<u8>) -> Result<Self> {
        Self::checked(IDX_IMAGES_MAGIC, shape, raw)
    }

    pub fn from_labels(raw: Vec<u8>) -> Result<Self> {
        let shape = vec![raw.len()];
        Self::checked(IDX_LABELS_MAGIC, shape, raw)
    }

    fn checked(magic: u32, shape: Vec<usize>, raw: Vec<u8>) -> Result<Self> {
        let expect_dims = if magic == IDX_IMAGES_MAGIC { 3 } else { 1 };
        if shape.len() != expect_dims {
            return Err(AppError::Config(format!(
                "IDX magic {magic:#010x} requires {expect_dims} dimensions, got {}",
                shape.len()
            )));
        }
        let total: usize = shape.iter().product();
        if total != raw.len() {
            return Err(AppError::Config(format!(
                "IDX payload has {} bytes but the shape needs {total}",
                raw.len()
            )));
        }
        Ok(Self { magic, shape, raw })
    }

    pub fn magic(&self) -> u32 {
        self.magic
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn raw(&self) -> &[u8] {
        &self.raw
    }

    pub fn is_images(&self) -> bool {
        self.magic == IDX_IMAGES_MAGIC
    }

    /// Pixel values scaled to `[0, 1]`.
    pub fn unit_floats(&self) -> Vec<f64> {
        self.raw.iter().map(|&b| b as f64 / 255.0).collect()
    }

    /// Class ids of a label file.
    pub fn labels(&self) -> Vec<usize> {
        self.raw.iter().map(|&b| b as usize).collect()
    }
}

fn format_err(path: &Path, offset: u64, message: impl Into<String>) -> AppError {
    AppError::Format { path: path.to_path_buf(), offset, message: message.into() }
}

fn read_be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(format_err(path, offset as u64, "truncated while reading a u32"));
    }
    Ok(u32::from_be_bytes([bytes[offset], bytes[offset + 1], bytes[offset + 2], bytes[offset + 3]]))
}

/// Parse an IDX file (images `0x00000803` or labels `0x00000801`), with
/// shape-checked payload. Bad magic and truncation both report the byte
/// offset of the problem.
pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxData> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    let magic = read_be_u32(&bytes, 0, path)?;
    let ndims = match magic {
        IDX_IMAGES_MAGIC => 3,
        IDX_LABELS_MAGIC => 1,
        other => {
            return Err(format_err(
                path,
                0,
                format!("bad magic {other:#010x} (expected 0x00000803 images or 0x00000801 labels)"),
            ));
        }
    };
    let mut shape = Vec::with_capacity(ndims);
    for d in 0..ndims {
        shape.push(read_be_u32(&bytes, 4 + 4 * d, path)? as usize);
    }
    let header = 4 + 4 * ndims;
    let total: usize = shape.iter().product();
    if bytes.len() < header + total {
        return Err(format_err(
            path,
            bytes.len() as u64,
            format!("truncated payload: need {} bytes, have {}", header + total, bytes.len()),
        ));
    }
    let raw = bytes[header..header + total].to_vec();
    Ok(IdxData { magic, shape, raw })
}

/// Write an IDX file in the exact layout [`load_idx`] parses.
pub fn write_idx(path: impl AsRef<Path>, data: &IdxData) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(4 + 4 * data.shape.len() + data.raw.len());
    out.extend_from_slice(&data.magic.to_be_bytes());
    for &d in &data.shape {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&data.raw);
    let mut f = fs::File::create(path).map_err(|e| AppError::io(path, e))?;
    f.write_all(&out).map_err(|e| AppError::io(path, e))?;
    Ok(())
}
