//! Dataset cache: a 16-byte header followed by raw little-endian `f32` frames
//! and, optionally, little-endian `u32` labels.
//!
//! | bytes  | field                                  |
//! |--------|----------------------------------------|
//! | 0..4   | magic `FFDS`                           |
//! | 4      | version (1)                            |
//! | 5      | channels                               |
//! | 6      | frames per sequence (`T + 1`)          |
//! | 7      | flags (bit 0: labels present)          |
//! | 8..10  | height, `u16`                          |
//! | 10..12 | width, `u16`                           |
//! | 12..16 | sequence count, `u32`                  |

use std::path::Path;

use crate::error::{Error, Result};
use crate::real::{lit, to_f64, Real};
use crate::tensor::{ImageShape, Sequence};

use super::SequenceBatch;

pub const CACHE_MAGIC: &[u8; 4] = b"FFDS";
pub const CACHE_VERSION: u8 = 1;
const HEADER_LEN: usize = 16;

fn format_error(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        format: "dataset cache",
        offset,
        message: message.into(),
    }
}

pub fn encode_cache<R: Real>(batch: &SequenceBatch<R>) -> Result<Vec<u8>> {
    let shape = batch.shape;
    let frames = batch.steps + 1;
    let narrow = |v: usize, max: usize, what: &str| {
        if v > max {
            Err(Error::InvalidArgument(format!(
                "{what} {v} exceeds the cache limit {max}"
            )))
        } else {
            Ok(v)
        }
    };
    narrow(shape.channels, u8::MAX as usize, "channel count")?;
    narrow(frames, u8::MAX as usize, "frame count")?;
    narrow(shape.height.max(shape.width), u16::MAX as usize, "image extent")?;
    narrow(batch.len(), u32::MAX as usize, "sequence count")?;

    let mut out = Vec::with_capacity(HEADER_LEN + batch.len() * frames * shape.len() * 4);
    out.extend_from_slice(CACHE_MAGIC);
    out.push(CACHE_VERSION);
    out.push(shape.channels as u8);
    out.push(frames as u8);
    out.push(batch.labels.is_some() as u8);
    out.extend_from_slice(&(shape.height as u16).to_le_bytes());
    out.extend_from_slice(&(shape.width as u16).to_le_bytes());
    out.extend_from_slice(&(batch.len() as u32).to_le_bytes());
    for seq in &batch.sequences {
        for &v in &seq.frames {
            out.extend_from_slice(&(to_f64(v) as f32).to_le_bytes());
        }
    }
    if let Some(labels) = &batch.labels {
        for &k in labels {
            out.extend_from_slice(&(k as u32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_cache<R: Real>(bytes: &[u8]) -> Result<SequenceBatch<R>> {
    if bytes.len() < HEADER_LEN {
        return Err(format_error(bytes.len(), "truncated header"));
    }
    if &bytes[..4] != CACHE_MAGIC {
        return Err(format_error(0, "expected magic FFDS"));
    }
    if bytes[4] != CACHE_VERSION {
        return Err(format_error(4, format!("unsupported version {}", bytes[4])));
    }
    let channels = bytes[5] as usize;
    let frames = bytes[6] as usize;
    let flags = bytes[7];
    let height = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let width = u16::from_le_bytes([bytes[10], bytes[11]]) as usize;
    let count = u32::from_le_bytes([bytes[12], bytes[13], bytes[14], bytes[15]]) as usize;
    if flags > 1 {
        return Err(format_error(7, format!("unknown flags {flags:#x}")));
    }
    let shape = ImageShape::new(channels, height, width);
    if shape.is_empty() || frames < 1 {
        return Err(format_error(5, "empty frame shape"));
    }
    let per_seq = frames * shape.len();
    let data_len = count * per_seq * 4;
    let label_len = if flags & 1 == 1 { count * 4 } else { 0 };
    let expected = HEADER_LEN + data_len + label_len;
    if bytes.len() != expected {
        return Err(format_error(
            bytes.len().min(expected),
            format!("expected {expected} bytes in total, found {}", bytes.len()),
        ));
    }
    let floats = &bytes[HEADER_LEN..HEADER_LEN + data_len];
    let sequences = floats
        .chunks_exact(per_seq * 4)
        .map(|chunk| {
            let frames = chunk
                .chunks_exact(4)
                .map(|b| lit::<R>(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
                .collect();
            Sequence::new(shape, frames)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = (label_len > 0).then(|| {
        bytes[HEADER_LEN + data_len..]
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
            .collect()
    });
    SequenceBatch::new(shape, frames - 1, sequences, labels)
}

pub fn write_cache<R: Real>(batch: &SequenceBatch<R>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_cache(batch)?).map_err(|e| Error::io(path, e))
}

pub fn read_cache<R: Real>(path: impl AsRef<Path>) -> Result<SequenceBatch<R>> {
    let path = path.as_ref();
    decode_cache(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(labels: bool) -> SequenceBatch<f32> {
        let shape = ImageShape::new(2, 3, 2);
        let sequences = (0..3)
            .map(|s| Sequence::new(shape, (0..36).map(|i| ((i + s) % 11) as f32 / 10.0).collect()).unwrap())
            .collect();
        SequenceBatch::new(shape, 2, sequences, labels.then(|| vec![2, 0, 1])).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        for labels in [true, false] {
            let b = batch(labels);
            let bytes = encode_cache(&b).unwrap();
            assert_eq!(&bytes[..4], b"FFDS");
            assert_eq!(bytes.len(), 16 + 3 * 36 * 4 + if labels { 12 } else { 0 });
            assert_eq!(decode_cache::<f32>(&bytes).unwrap(), b);
        }
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = encode_cache(&batch(true)).unwrap();
        assert!(matches!(decode_cache::<f32>(&bytes[..10]), Err(Error::Format { .. })));
        assert!(matches!(
            decode_cache::<f32>(&bytes[..bytes.len() - 1]),
            Err(Error::Format { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode_cache::<f32>(&bad),
            Err(Error::Format { offset: 0, .. })
        ));
        let mut bad = bytes;
        bad[4] = 9;
        assert!(matches!(
            decode_cache::<f32>(&bad),
            Err(Error::Format { offset: 4, .. })
        ));
    }
}
