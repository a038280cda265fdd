//! IDX files as distributed for MNIST: a big-endian `u32` magic, one
//! big-endian `u32` per dimension, then raw unsigned bytes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::real::{lit, Real};
use crate::tensor::DenseArray;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;

fn format_error(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        format: "IDX",
        offset,
        message: message.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_error(offset, "truncated header"))
}

/// Validate the magic and header, returning the dimension extents and the
/// payload.
fn parse<'a>(bytes: &'a [u8], magic: u32, ndim: usize) -> Result<(Vec<usize>, &'a [u8])> {
    let found = read_u32(bytes, 0)?;
    if found != magic {
        return Err(format_error(0, format!("expected magic {magic}, found {found}")));
    }
    let dims = (0..ndim)
        .map(|i| read_u32(bytes, 4 + 4 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * ndim;
    let len: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() < len {
        return Err(format_error(
            header + payload.len(),
            format!("truncated payload: expected {len} bytes, found {}", payload.len()),
        ));
    }
    Ok((dims, &payload[..len]))
}

/// Images as `[n, rows, cols]` with pixels scaled to `[0, 1]`.
pub fn parse_idx_images<R: Real>(bytes: &[u8]) -> Result<DenseArray<R>> {
    let (dims, payload) = parse(bytes, IMAGE_MAGIC, 3)?;
    let scale = lit::<R>(255.0);
    DenseArray::from_vec(&dims, payload.iter().map(|&b| lit::<R>(b as f64) / scale).collect())
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    Ok(parse(bytes, LABEL_MAGIC, 1)?.1.to_vec())
}

pub fn load_idx<R: Real>(path: impl AsRef<Path>) -> Result<DenseArray<R>> {
    let path = path.as_ref();
    parse_idx_images(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    parse_idx_labels(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
