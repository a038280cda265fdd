use crate::error::{Error, Result};
use crate::real::{lit, to_f64, Real};
use crate::tensor::{ImageShape, Sequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformKind {
    /// Zoom about the image centre; extent is the final scale factor.
    Scale,
    /// Rotation about the image centre; extent in degrees.
    Rotate,
    /// HSV hue rotation; extent in degrees. Needs RGB frames.
    Hue,
}

impl TransformKind {
    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Scale => "scale",
            TransformKind::Rotate => "rotate",
            TransformKind::Hue => "hue",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformSpec {
    pub kind: TransformKind,
    pub steps: usize,
    pub extent: f64,
}

impl TransformSpec {
    pub fn new(kind: TransformKind, steps: usize, extent: f64) -> Result<Self> {
        let spec = Self { kind, steps, extent };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            TransformKind::Scale => (1.0..=3.0).contains(&self.extent),
            TransformKind::Rotate => (0.0..=180.0).contains(&self.extent),
            TransformKind::Hue => (0.0..360.0).contains(&self.extent),
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "{} extent {} out of range",
                self.kind.name(),
                self.extent
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("transform needs at least one step".into()));
        }
        Ok(())
    }

    /// Magnitude at frame `t`: a scale factor for `Scale`, degrees otherwise.
    pub fn magnitude(&self, t: usize) -> f64 {
        let frac = t as f64 / self.steps as f64;
        match self.kind {
            TransformKind::Scale => 1.0 + frac * (self.extent - 1.0),
            _ => frac * self.extent,
        }
    }
}

/// Render frames `0..=T` of `spec` applied to `base`. Frame 0 is `base` itself.
pub fn generate_sequence<R: Real>(base: &[R], shape: ImageShape, spec: &TransformSpec) -> Result<Sequence<R>> {
    spec.validate()?;
    if base.len() != shape.len() {
        return Err(Error::shape("base image", shape.len(), base.len()));
    }
    crate::vae::check_pixels(base, "base image")?;
    if spec.kind == TransformKind::Hue && shape.channels != 3 {
        return Err(Error::InvalidArgument(format!(
            "hue rotation needs 3 channels, image has {}",
            shape.channels
        )));
    }
    let src: Vec<f64> = base.iter().map(|&v| to_f64(v)).collect();
    let mut frames = Vec::with_capacity((spec.steps + 1) * shape.len());
    frames.extend_from_slice(base);
    for t in 1..=spec.steps {
        let m = spec.magnitude(t);
        let frame = match spec.kind {
            TransformKind::Scale => warp(&src, shape, |x, y| (x / m, y / m)),
            TransformKind::Rotate => {
                let (s, c) = m.to_radians().sin_cos();
                // inverse map: rotate the output coordinate back by -m
                warp(&src, shape, |x, y| (c * x + s * y, -s * x + c * y))
            }
            TransformKind::Hue => rotate_hue(&src, shape, m),
        };
        frames.extend(frame.into_iter().map(|v| lit::<R>(v.clamp(0.0, 1.0))));
    }
    Sequence::new(shape, frames)
}

/// Resample every channel at `centre + inverse(p - centre)` with bilinear
/// interpolation and zero padding outside the image.
fn warp(src: &[f64], shape: ImageShape, inverse: impl Fn(f64, f64) -> (f64, f64)) -> Vec<f64> {
    let (h, w) = (shape.height, shape.width);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = vec![0.0; shape.len()];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = inverse(x as f64 - cx, y as f64 - cy);
            let (sx, sy) = (sx + cx, sy + cy);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let taps = [
                (x0, y0, (1.0 - fx) * (1.0 - fy)),
                (x0 + 1.0, y0, fx * (1.0 - fy)),
                (x0, y0 + 1.0, (1.0 - fx) * fy),
                (x0 + 1.0, y0 + 1.0, fx * fy),
            ];
            for c in 0..shape.channels {
                let plane = &src[c * h * w..(c + 1) * h * w];
                let mut acc = 0.0;
                for &(tx, ty, wt) in &taps {
                    if wt != 0.0 && tx >= 0.0 && ty >= 0.0 && (tx as usize) < w && (ty as usize) < h {
                        acc += wt * plane[ty as usize * w + tx as usize];
                    }
                }
                out[c * h * w + y * w + x] = acc;
            }
        }
    }
    out
}

fn rotate_hue(src: &[f64], shape: ImageShape, degrees: f64) -> Vec<f64> {
    let n = shape.pixels();
    let mut out = vec![0.0; src.len()];
    for i in 0..n {
        let (h, s, v) = rgb_to_hsv([src[i], src[n + i], src[2 * n + i]]);
        let rgb = hsv_to_rgb((h + degrees).rem_euclid(360.0), s, v);
        for c in 0..3 {
            out[c * n + i] = rgb[c];
        }
    }
    out
}

/// Hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
pub fn rgb_to_hsv([r, g, b]: [f64; 3]) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let sat = if max == 0.0 { 0.0 } else { delta / max };
    (hue, sat, max)
}

pub fn hsv_to_rgb(hue: f64, sat: f64, value: f64) -> [f64; 3] {
    let c = value * sat;
    let hp = hue.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = value - c;
    [r + m, g + m, b + m]
}
