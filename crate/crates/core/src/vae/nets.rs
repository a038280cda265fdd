use rand::Rng;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{DenseArray, ImageShape};

use super::conv::{
    relu_backward, relu_inplace, swap_leading, Conv2d, ConvCache, ConvGeometry, ConvTranspose2d, ConvTransposeCache,
    Dense,
};

/// Strided convolution stack: `channels.len()` conv + ReLU layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNetConfig {
    pub image: ImageShape,
    pub channels: Vec<usize>,
    pub geom: ConvGeometry,
}

impl ConvNetConfig {
    /// Spatial extents before the first and after every layer.
    pub fn extents(&self) -> Result<Vec<(usize, usize)>> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::InvalidArgument(
                "convolution channels must be non-empty and positive".into(),
            ));
        }
        if self.image.is_empty() {
            return Err(Error::InvalidArgument("image extents must be positive".into()));
        }
        let mut out = vec![(self.image.height, self.image.width)];
        for _ in &self.channels {
            let (h, w) = *out.last().expect("non-empty");
            let next = (self.geom.output_extent(h)?, self.geom.output_extent(w)?);
            if next.0 == 0 || next.1 == 0 {
                return Err(Error::InvalidArgument(format!(
                    "image {}x{} too small for {} stride-{} layers",
                    self.image.height,
                    self.image.width,
                    self.channels.len(),
                    self.geom.stride
                )));
            }
            out.push(next);
        }
        Ok(out)
    }

    fn feature_len(&self, extents: &[(usize, usize)]) -> usize {
        let (h, w) = *extents.last().expect("non-empty");
        self.channels.last().copied().unwrap_or(0) * h * w
    }
}

/// Image batch `[N, C, H, W]` -> `[N, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvEncoder<R> {
    pub convs: Vec<Conv2d<R>>,
    pub head: Dense<R>,
    pub image: ImageShape,
    extents: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct EncoderCache<R> {
    batch: usize,
    convs: Vec<ConvCache<R>>,
    activations: Vec<Vec<R>>,
    features: Vec<R>,
}

impl<R: Real> ConvEncoder<R> {
    pub fn new(config: &ConvNetConfig, out_dim: usize, head_gain: f64, rng: &mut impl Rng) -> Result<Self> {
        let extents = config.extents()?;
        let mut convs = Vec::with_capacity(config.channels.len());
        let mut c_in = config.image.channels;
        for &c in &config.channels {
            convs.push(Conv2d::new(c_in, c, config.geom, rng));
            c_in = c;
        }
        let head = Dense::new(config.feature_len(&extents), out_dim, head_gain, rng);
        Ok(Self {
            convs,
            head,
            image: config.image,
            extents,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.head.n_out()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            convs: self.convs.iter().map(Conv2d::zeros_like).collect(),
            head: self.head.zeros_like(),
            image: self.image,
            extents: self.extents.clone(),
        }
    }

    pub fn forward(&self, images: &[R], batch: usize) -> Result<(Vec<R>, EncoderCache<R>)> {
        let img = self.image;
        if images.len() != batch * img.len() {
            return Err(Error::shape("encoder input", batch * img.len(), images.len()));
        }
        let mut act = swap_leading(images, batch, img.channels, img.pixels());
        let mut convs = Vec::with_capacity(self.convs.len());
        let mut activations = Vec::with_capacity(self.convs.len());
        for (conv, &(h, w)) in self.convs.iter().zip(&self.extents) {
            let (mut out, cache) = conv.forward(&act, batch, h, w)?;
            relu_inplace(&mut out);
            convs.push(cache);
            activations.push(out.clone());
            act = out;
        }
        let (h, w) = *self.extents.last().expect("non-empty");
        let c_last = self.convs.last().expect("non-empty").c_out();
        let features = swap_leading(&act, c_last, batch, h * w);
        let out = self.head.forward(&features, batch)?;
        Ok((
            out,
            EncoderCache {
                batch,
                convs,
                activations,
                features,
            },
        ))
    }

    /// Accumulate parameter gradients for `d_out` (`[N, out]`).
    pub fn backward(&self, cache: &EncoderCache<R>, d_out: &[R], grads: &mut Self) {
        let batch = cache.batch;
        let d_feat = self
            .head
            .backward(&cache.features, d_out, batch, &mut grads.head, true)
            .expect("input gradient requested");
        let (h, w) = *self.extents.last().expect("non-empty");
        let c_last = self.convs.last().expect("non-empty").c_out();
        let mut d_act = swap_leading(&d_feat, batch, c_last, h * w);
        for i in (0..self.convs.len()).rev() {
            relu_backward(&cache.activations[i], &mut d_act);
            match self.convs[i].backward(&cache.convs[i], &d_act, &mut grads.convs[i], i > 0) {
                Some(d) => d_act = d,
                None => break,
            }
        }
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &DenseArray<R>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("{prefix}.conv{i}.weight"), &c.weight));
            out.push((format!("{prefix}.conv{i}.bias"), &c.bias));
        }
        out.push((format!("{prefix}.head.weight"), &self.head.weight));
        out.push((format!("{prefix}.head.bias"), &self.head.bias));
        out
    }

    pub fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut DenseArray<R>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter_mut().enumerate() {
            out.push((format!("{prefix}.conv{i}.weight"), &mut c.weight));
            out.push((format!("{prefix}.conv{i}.bias"), &mut c.bias));
        }
        out.push((format!("{prefix}.head.weight"), &mut self.head.weight));
        out.push((format!("{prefix}.head.bias"), &mut self.head.bias));
        out
    }
}

/// Latent batch `[N, d]` -> image logits `[N, C, H, W]`, mirroring a [`ConvEncoder`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvDecoder<R> {
    pub fc: Dense<R>,
    pub tconvs: Vec<ConvTranspose2d<R>>,
    pub image: ImageShape,
    extents: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct DecoderCache<R> {
    batch: usize,
    input: Vec<R>,
    hidden: Vec<R>,
    tconvs: Vec<ConvTransposeCache<R>>,
    activations: Vec<Vec<R>>,
}

impl<R: Real> ConvDecoder<R> {
    pub fn new(config: &ConvNetConfig, latent_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let extents = config.extents()?;
        let fc = Dense::new(latent_dim, config.feature_len(&extents), 1.0, rng);
        let layers = config.channels.len();
        let mut tconvs = Vec::with_capacity(layers);
        for i in 0..layers {
            let c_in = config.channels[layers - 1 - i];
            let c_out = if i + 1 == layers {
                config.image.channels
            } else {
                config.channels[layers - 2 - i]
            };
            tconvs.push(ConvTranspose2d::new(c_in, c_out, config.geom, rng));
        }
        Ok(Self {
            fc,
            tconvs,
            image: config.image,
            extents,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.fc.n_in()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            fc: self.fc.zeros_like(),
            tconvs: self.tconvs.iter().map(ConvTranspose2d::zeros_like).collect(),
            image: self.image,
            extents: self.extents.clone(),
        }
    }

    pub fn forward(&self, z: &[R], batch: usize) -> Result<(Vec<R>, DecoderCache<R>)> {
        let mut hidden = self.fc.forward(z, batch)?;
        relu_inplace(&mut hidden);
        let layers = self.tconvs.len();
        let (h, w) = self.extents[layers];
        let mut act = swap_leading(&hidden, batch, self.tconvs[0].c_in(), h * w);
        let mut caches = Vec::with_capacity(layers);
        let mut activations = Vec::with_capacity(layers);
        for (i, t) in self.tconvs.iter().enumerate() {
            let (mut out, cache) = t.forward(&act, batch, self.extents[layers - i], self.extents[layers - 1 - i])?;
            if i + 1 < layers {
                relu_inplace(&mut out);
                activations.push(out.clone());
            }
            caches.push(cache);
            act = out;
        }
        let logits = swap_leading(&act, self.image.channels, batch, self.image.pixels());
        Ok((
            logits,
            DecoderCache {
                batch,
                input: z.to_vec(),
                hidden,
                tconvs: caches,
                activations,
            },
        ))
    }

    /// Accumulate parameter gradients for `d_logits` (`[N, C, H, W]`) and return `dL/dz`.
    pub fn backward(&self, cache: &DecoderCache<R>, d_logits: &[R], grads: &mut Self) -> Vec<R> {
        let batch = cache.batch;
        let layers = self.tconvs.len();
        let mut d_act = swap_leading(d_logits, batch, self.image.channels, self.image.pixels());
        for i in (0..layers).rev() {
            if i + 1 < layers {
                relu_backward(&cache.activations[i], &mut d_act);
            }
            d_act = self.tconvs[i]
                .backward(&cache.tconvs[i], &d_act, &mut grads.tconvs[i], true)
                .expect("input gradient requested");
        }
        let (h, w) = self.extents[layers];
        let mut d_hidden = swap_leading(&d_act, self.tconvs[0].c_in(), batch, h * w);
        relu_backward(&cache.hidden, &mut d_hidden);
        self.fc
            .backward(&cache.input, &d_hidden, batch, &mut grads.fc, true)
            .expect("input gradient requested")
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &DenseArray<R>)> {
        let mut out = vec![
            (format!("{prefix}.fc.weight"), &self.fc.weight),
            (format!("{prefix}.fc.bias"), &self.fc.bias),
        ];
        for (i, t) in self.tconvs.iter().enumerate() {
            out.push((format!("{prefix}.tconv{i}.weight"), &t.weight));
            out.push((format!("{prefix}.tconv{i}.bias"), &t.bias));
        }
        out
    }

    pub fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut DenseArray<R>)> {
        let mut out = vec![
            (format!("{prefix}.fc.weight"), &mut self.fc.weight),
            (format!("{prefix}.fc.bias"), &mut self.fc.bias),
        ];
        for (i, t) in self.tconvs.iter_mut().enumerate() {
            out.push((format!("{prefix}.tconv{i}.weight"), &mut t.weight));
            out.push((format!("{prefix}.tconv{i}.bias"), &mut t.bias));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::relative_max_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config(h: usize, w: usize) -> ConvNetConfig {
        ConvNetConfig {
            image: ImageShape::new(2, h, w),
            channels: vec![3, 4, 3],
            geom: ConvGeometry::default(),
        }
    }

    fn flat<R: Real>(params: Vec<(String, &DenseArray<R>)>) -> Vec<R> {
        params.into_iter().flat_map(|(_, a)| a.data().to_vec()).collect()
    }

    #[test]
    fn mnist_sized_chain_round_trips() {
        let cfg = ConvNetConfig {
            image: ImageShape::new(1, 28, 28),
            channels: vec![2, 2, 2, 2],
            geom: ConvGeometry::default(),
        };
        assert_eq!(cfg.extents().unwrap(), vec![(28, 28), (14, 14), (7, 7), (3, 3), (1, 1)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dec = ConvDecoder::<f64>::new(&cfg, 5, &mut rng).unwrap();
        let (out, _) = dec.forward(&[0.1; 10], 2).unwrap();
        assert_eq!(out.len(), 2 * 28 * 28);
    }

    #[test]
    fn too_small_image_rejected() {
        let cfg = ConvNetConfig {
            image: ImageShape::new(1, 4, 4),
            channels: vec![2; 4],
            geom: ConvGeometry::default(),
        };
        assert!(cfg.extents().is_err());
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = config(9, 8);
        let enc = ConvEncoder::<f64>::new(&cfg, 4, 1.0, &mut rng).unwrap();
        let batch = 2;
        let x: Vec<f64> = (0..batch * cfg.image.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let probe: Vec<f64> = (0..batch * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = |e: &ConvEncoder<f64>| -> f64 {
            let (o, _) = e.forward(&x, batch).unwrap();
            o.iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = enc.forward(&x, batch).unwrap();
        let mut grads = enc.zeros_like();
        enc.backward(&cache, &probe, &mut grads);
        let analytic = flat(grads.named_params("e"));
        let n = analytic.len();
        let h = 1e-6;
        let numeric: Vec<f64> = (0..n)
            .map(|i| {
                let mut p = enc.clone();
                let mut m = enc.clone();
                bump(&mut p.named_params_mut("e"), i, h);
                bump(&mut m.named_params_mut("e"), i, -h);
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect();
        assert!(relative_max_error(&analytic, &numeric) < 1e-6);
    }

    fn bump(params: &mut [(String, &mut DenseArray<f64>)], mut i: usize, delta: f64) {
        for (_, a) in params.iter_mut() {
            if i < a.len() {
                a.data_mut()[i] += delta;
                return;
            }
            i -= a.len();
        }
        panic!("index out of range");
    }

    #[test]
    fn decoder_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = config(12, 10);
        let mut dec = ConvDecoder::<f64>::new(&cfg, 3, &mut rng).unwrap();
        for (_, b) in dec.named_params_mut("d") {
            if b.shape().len() == 1 {
                b.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.2..0.2));
            }
        }
        let batch = 2;
        let z: Vec<f64> = (0..batch * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let probe: Vec<f64> = (0..batch * cfg.image.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = |d: &ConvDecoder<f64>, z: &[f64]| -> f64 {
            let (o, _) = d.forward(z, batch).unwrap();
            o.iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = dec.forward(&z, batch).unwrap();
        let mut grads = dec.zeros_like();
        let dz = dec.backward(&cache, &probe, &mut grads);
        let analytic = flat(grads.named_params("d"));
        let h = 1e-6;
        let numeric: Vec<f64> = (0..analytic.len())
            .map(|i| {
                let mut p = dec.clone();
                let mut m = dec.clone();
                bump(&mut p.named_params_mut("d"), i, h);
                bump(&mut m.named_params_mut("d"), i, -h);
                (f(&p, &z) - f(&m, &z)) / (2.0 * h)
            })
            .collect();
        assert!(relative_max_error(&analytic, &numeric) < 1e-6);
        let numeric_z: Vec<f64> = (0..z.len())
            .map(|i| {
                let mut p = z.clone();
                let mut m = z.clone();
                p[i] += h;
                m[i] -= h;
                (f(&dec, &p) - f(&dec, &m)) / (2.0 * h)
            })
            .collect();
        assert!(relative_max_error(&dz, &numeric_z) < 1e-6);
    }

    #[test]
    fn batch_rows_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = config(8, 8);
        let enc = ConvEncoder::<f64>::new(&cfg, 4, 1.0, &mut rng).unwrap();
        let x: Vec<f64> = (0..3 * cfg.image.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let (all, _) = enc.forward(&x, 3).unwrap();
        let (one, _) = enc.forward(&x[cfg.image.len()..2 * cfg.image.len()], 1).unwrap();
        assert!(relative_max_error(&all[4..8], &one) < 1e-14);
    }
}
