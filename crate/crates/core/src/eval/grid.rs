//! Binary PPM (P6) grids: one row per sequence, one column per timestep.
//!
//! Cells are `W x H` images separated by 1-pixel gray (128) lines; there is no
//! outer border, so the raster is `cols * W + cols - 1` by `rows * H + rows - 1`.
//! Header is `P6\n{width} {height}\n255\n`. One-channel frames are written as
//! gray, three-channel frames as RGB; each value maps to `round(255 v)`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::real::{to_f64, Real};
use crate::tensor::ImageShape;

pub const SEPARATOR: u8 = 128;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PpmImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub rgb: Vec<u8>,
}

impl PpmImage {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_grid<R: Real>(rows: &[Vec<Vec<R>>], shape: ImageShape) -> Result<Vec<u8>> {
    let cols = rows.first().map_or(0, |r| r.len());
    if rows.is_empty() || cols == 0 {
        return Err(Error::InvalidArgument("no frames to export".into()));
    }
    if shape.channels != 1 && shape.channels != 3 {
        return Err(Error::InvalidArgument(format!(
            "grid export needs 1 or 3 channels, got {}",
            shape.channels
        )));
    }
    for row in rows {
        if row.len() != cols {
            return Err(Error::shape("grid row", cols, row.len()));
        }
        for frame in row {
            if frame.len() != shape.len() {
                return Err(Error::shape("grid frame", shape.len(), frame.len()));
            }
            crate::vae::check_pixels(frame, "grid frame")?;
        }
    }
    let (w, h) = (shape.width, shape.height);
    let width = cols * w + cols - 1;
    let height = rows.len() * h + rows.len() - 1;
    let mut rgb = vec![SEPARATOR; 3 * width * height];
    let n = shape.pixels();
    for (r, row) in rows.iter().enumerate() {
        for (c, frame) in row.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    let dst = 3 * ((r * (h + 1) + y) * width + c * (w + 1) + x);
                    for ch in 0..3 {
                        let src = if shape.channels == 1 { 0 } else { ch };
                        rgb[dst + ch] = quantize(to_f64(frame[src * n + y * w + x]));
                    }
                }
            }
        }
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(&rgb);
    Ok(out)
}

pub fn export_grid<R: Real>(rows: &[Vec<Vec<R>>], shape: ImageShape, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_grid(rows, shape)?;
    let path = path.as_ref();
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parse a P6 file with maxval 255 (comments are not supported).
pub fn read_ppm(bytes: &[u8]) -> Result<PpmImage> {
    let err = |offset: usize, message: &str| Error::Format {
        format: "PPM",
        offset,
        message: message.into(),
    };
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(err(pos, "truncated header"));
        }
        fields.push((start, std::str::from_utf8(&bytes[start..pos]).unwrap_or("")));
    }
    if fields[0].1 != "P6" {
        return Err(err(0, "expected P6 magic"));
    }
    let num = |(off, s): (usize, &str)| s.parse::<usize>().map_err(|_| err(off, "bad header number"));
    let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(err(fields[3].0, "only maxval 255 is supported"));
    }
    pos += 1;
    let len = 3 * width * height;
    if bytes.len() < pos + len {
        return Err(err(bytes.len(), "truncated raster"));
    }
    Ok(PpmImage {
        width,
        height,
        rgb: bytes[pos..pos + len].to_vec(),
    })
}
