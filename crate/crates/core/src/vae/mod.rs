//! Sequence VAE: convolutional encoder and decoder, the transformation
//! classifier, Gumbel-Softmax machinery and the supervised and weakly
//! supervised objectives.

pub mod conv;
pub mod gumbel;
pub mod nets;
mod objective;

pub use conv::ConvGeometry;
pub use gumbel::{anneal_tau, categorical_kl_uniform, gumbel_softmax, sample_gumbels, GumbelSample, GumbelState};
pub use nets::{ConvDecoder, ConvEncoder, ConvNetConfig};
pub use objective::{
    batch_objective, class_posterior, elbo_supervised, elbo_weak, Breakdown, ModelGrads, ObjectiveOptions, Supervision,
};

use rand::Rng;

use crate::error::{Error, Result};
use crate::real::{lit, Real};
use crate::tensor::{DenseArray, ImageShape, Sequence};

/// Pixels of `x_hat` are clamped to `[EPS, 1 - EPS]` inside the likelihood.
pub const RECON_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct VaeConfig {
    pub image: ImageShape,
    pub latent_dim: usize,
    pub num_classes: usize,
    pub channels: Vec<usize>,
    pub classifier_channels: Vec<usize>,
    pub geom: ConvGeometry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeqVae<R> {
    pub encoder: ConvEncoder<R>,
    pub decoder: ConvDecoder<R>,
    pub classifier: ConvEncoder<R>,
    pub latent_dim: usize,
}

impl<R: Real> SeqVae<R> {
    pub fn new(config: &VaeConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.latent_dim == 0 || config.num_classes == 0 {
            return Err(Error::InvalidArgument(
                "latent dimension and class count must be positive".into(),
            ));
        }
        let enc_cfg = ConvNetConfig {
            image: config.image,
            channels: config.channels.clone(),
            geom: config.geom,
        };
        let cls_cfg = ConvNetConfig {
            channels: config.classifier_channels.clone(),
            ..enc_cfg.clone()
        };
        Ok(Self {
            encoder: ConvEncoder::new(&enc_cfg, 2 * config.latent_dim, 0.5, rng)?,
            decoder: ConvDecoder::new(&enc_cfg, config.latent_dim, rng)?,
            classifier: ConvEncoder::new(&cls_cfg, config.num_classes, 0.5, rng)?,
            latent_dim: config.latent_dim,
        })
    }

    pub fn image(&self) -> ImageShape {
        self.encoder.image
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.out_dim()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            decoder: self.decoder.zeros_like(),
            classifier: self.classifier.zeros_like(),
            latent_dim: self.latent_dim,
        }
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &DenseArray<R>)> {
        let mut out = self.encoder.named_params(&format!("{prefix}.encoder"));
        out.extend(self.decoder.named_params(&format!("{prefix}.decoder")));
        out.extend(self.classifier.named_params(&format!("{prefix}.classifier")));
        out
    }

    pub fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut DenseArray<R>)> {
        let mut out = self.encoder.named_params_mut(&format!("{prefix}.encoder"));
        out.extend(self.decoder.named_params_mut(&format!("{prefix}.decoder")));
        out.extend(self.classifier.named_params_mut(&format!("{prefix}.classifier")));
        out
    }
}

pub fn check_pixels<R: Real>(x: &[R], context: &str) -> Result<()> {
    match x.iter().position(|&v| !(v >= R::zero() && v <= R::one())) {
        Some(i) => Err(Error::InvalidArgument(format!(
            "{context}: pixel {i} = {} outside [0, 1]",
            x[i]
        ))),
        None => Ok(()),
    }
}

/// Encoder means and log-variances for a batch of images, one row per image.
pub fn encode_batch<R: Real>(vae: &SeqVae<R>, images: &[R], batch: usize) -> Result<(Vec<Vec<R>>, Vec<Vec<R>>)> {
    check_pixels(images, "encoder input")?;
    let (out, _) = vae.encoder.forward(images, batch)?;
    let d = vae.latent_dim;
    let mu = out.chunks(2 * d).map(|r| r[..d].to_vec()).collect();
    let logvar = out.chunks(2 * d).map(|r| r[d..].to_vec()).collect();
    Ok((mu, logvar))
}

pub fn encode<R: Real>(vae: &SeqVae<R>, x0: &[R]) -> Result<(Vec<R>, Vec<R>)> {
    let (mut mu, mut logvar) = encode_batch(vae, x0, 1)?;
    Ok((mu.remove(0), logvar.remove(0)))
}

/// `z0 = mu + exp(logvar / 2) * noise` and `log N(z0; mu, diag exp(logvar))`.
pub fn reparameterize<R: Real>(mu: &[R], logvar: &[R], noise: &[R]) -> Result<(Vec<R>, R)> {
    if mu.len() != logvar.len() || mu.len() != noise.len() {
        return Err(Error::shape("reparameterization inputs", mu.len(), noise.len()));
    }
    let half = lit::<R>(0.5);
    let log_2pi = lit::<R>((2.0 * std::f64::consts::PI).ln());
    let mut log_q = R::zero();
    let z = mu
        .iter()
        .zip(logvar)
        .zip(noise)
        .map(|((&m, &lv), &e)| {
            log_q -= half * (e * e + log_2pi + lv);
            m + (half * lv).exp() * e
        })
        .collect();
    Ok((z, log_q))
}

pub fn sigmoid<R: Real>(x: R) -> R {
    R::one() / (R::one() + (-x).exp())
}

pub fn decode_batch<R: Real>(vae: &SeqVae<R>, zs: &[Vec<R>]) -> Result<Vec<Vec<R>>> {
    let d = vae.latent_dim;
    if let Some(z) = zs.iter().find(|z| z.len() != d) {
        return Err(Error::shape("decoder input", d, z.len()));
    }
    let flat: Vec<R> = zs.iter().flatten().copied().collect();
    let (logits, _) = vae.decoder.forward(&flat, zs.len())?;
    Ok(logits
        .chunks(vae.image().len().max(1))
        .map(|c| c.iter().map(|&l| sigmoid(l)).collect())
        .collect())
}

pub fn decode<R: Real>(vae: &SeqVae<R>, z: &[R]) -> Result<Vec<R>> {
    Ok(decode_batch(vae, &[z.to_vec()])?.remove(0))
}

/// Bernoulli log-likelihood with `x_hat` clamped to `[eps, 1 - eps]`.
pub fn recon_loglik<R: Real>(x: &[R], x_hat: &[R]) -> Result<R> {
    if x.len() != x_hat.len() {
        return Err(Error::shape("reconstruction", x.len(), x_hat.len()));
    }
    let eps = lit::<R>(RECON_EPS);
    Ok(x.iter()
        .zip(x_hat)
        .map(|(&x, &p)| {
            let p = p.max(eps).min(R::one() - eps);
            x * p.ln() + (R::one() - x) * (R::one() - p).ln()
        })
        .sum())
}

/// Difference image `x_T - x_0` fed to the classifier.
pub fn sequence_difference<R: Real>(seq: &Sequence<R>) -> Result<Vec<R>> {
    if seq.num_frames() < 2 {
        return Err(Error::InvalidArgument(
            "classifier needs a sequence of at least 2 frames".into(),
        ));
    }
    Ok(seq
        .frame(seq.steps())
        .iter()
        .zip(seq.frame(0))
        .map(|(&a, &b)| a - b)
        .collect())
}

pub fn classify_sequence<R: Real>(vae: &SeqVae<R>, seq: &Sequence<R>) -> Result<Vec<R>> {
    if seq.shape != vae.image() {
        return Err(Error::shape(
            "sequence frame",
            format!("{:?}", vae.image()),
            format!("{:?}", seq.shape),
        ));
    }
    let diff = sequence_difference(seq)?;
    Ok(vae.classifier.forward(&diff, 1)?.0)
}
