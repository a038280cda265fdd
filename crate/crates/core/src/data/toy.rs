use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::real::{lit, Real};
use crate::tensor::ImageShape;

use super::transform::hsv_to_rgb;

pub const TOY_CHANNELS: usize = 3;

/// Every sprite starts red. A hue rotation applied to bases of every hue would
/// move the whole colour circle the same way round, which no gradient field can
/// do (its circulation around a closed loop is zero); from a fixed start the
/// hue sequence is an open path.
pub const BASE_HUE: f64 = 0.0;

/// `n` procedurally drawn RGB sprites of `size x size`, deterministic in `seed`.
///
/// Each sprite is a single red of random saturation and value on black, either
/// a bar (rotated rectangle) or a blob (rotated ellipse), centred so that a
/// 1.8x zoom or any rotation keeps it inside the frame.
pub fn make_toy_dataset<R: Real>(seed: u64, n: usize, size: usize) -> Result<Vec<Vec<R>>> {
    if size < 8 {
        return Err(Error::InvalidArgument(format!(
            "toy sprites need size >= 8, got {size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| draw_sprite(&mut rng, size)).collect())
}

pub fn toy_shape(size: usize) -> ImageShape {
    ImageShape::new(TOY_CHANNELS, size, size)
}

fn draw_sprite<R: Real>(rng: &mut ChaCha8Rng, size: usize) -> Vec<R> {
    let s = size as f64;
    let bar = rng.gen_bool(0.5);
    let (a, b) = if bar {
        (rng.gen_range(0.18..0.24) * s, rng.gen_range(0.06..0.1) * s)
    } else {
        (rng.gen_range(0.16..0.26) * s, rng.gen_range(0.09..0.15) * s)
    };
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let rgb = hsv_to_rgb(BASE_HUE, rng.gen_range(0.6..1.0), rng.gen_range(0.7..1.0));
    let (sin, cos) = angle.sin_cos();
    let c = (s - 1.0) / 2.0;
    let pixels = size * size;
    let mut img = vec![R::zero(); TOY_CHANNELS * pixels];
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 - c, y as f64 - c);
            let (u, v) = (cos * dx + sin * dy, -sin * dx + cos * dy);
            let inside = if bar {
                u.abs() <= a && v.abs() <= b
            } else {
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            };
            if inside {
                for ch in 0..TOY_CHANNELS {
                    img[ch * pixels + y * size + x] = lit(rgb[ch]);
                }
            }
        }
    }
    img
}

/// Counts of pixel values in `bins` equal-width bins over `[0, 1]`.
pub fn pixel_histogram<R: Real>(images: &[Vec<R>], bins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; bins];
    for v in images.iter().flatten() {
        let x = v.to_f64().unwrap_or(0.0);
        counts[((x * bins as f64) as usize).min(bins - 1)] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let a = make_toy_dataset::<f32>(3, 10, 16).unwrap();
        let b = make_toy_dataset::<f32>(3, 10, 16).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, make_toy_dataset::<f32>(4, 10, 16).unwrap());
        assert!(a.iter().flatten().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(a.iter().all(|img| img.len() == 3 * 256 && img.iter().any(|&v| v > 0.0)));
    }

    #[test]
    fn empty_and_too_small() {
        assert!(make_toy_dataset::<f64>(0, 0, 16).unwrap().is_empty());
        assert!(make_toy_dataset::<f64>(0, 1, 7).is_err());
    }

    #[test]
    fn sprites_survive_full_zoom() {
        // every foreground pixel stays within the radius a 1.8x zoom keeps in frame
        for img in make_toy_dataset::<f64>(11, 50, 16).unwrap() {
            for y in 0..16 {
                for x in 0..16 {
                    if img[y * 16 + x] + img[256 + y * 16 + x] + img[512 + y * 16 + x] > 0.0 {
                        let r = ((x as f64 - 7.5).powi(2) + (y as f64 - 7.5).powi(2)).sqrt();
                        assert!(r * 1.8 < 8.0);
                    }
                }
            }
        }
    }
}
