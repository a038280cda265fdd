//! Batched training objective `-ELBO + lambda * HJ` with exact gradients.
//!
//! Per sequence: `z_0 ~ q(z_0 | x_0)`, roll out under the (possibly sampled)
//! transformation, decode every `z_t`, and sum Bernoulli reconstruction terms,
//! the closed-form KL of `q(z_0 | x_0)`, the per-step KL estimates against the
//! diffused prior and, in weak mode, `KL(q(k | x) || uniform)`. Every term is
//! averaged over the batch.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{step_kl_sum, FlowClock, Rollout, RolloutAdjoint, RolloutOptions};
use crate::potential::PotentialBank;
use crate::real::{lit, to_f64, Real};
use crate::tensor::Sequence;

use super::gumbel::{categorical_kl_uniform, gumbel_softmax, softmax, GumbelSample};
use super::{check_pixels, reparameterize, sequence_difference, sigmoid, SeqVae, RECON_EPS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveOptions {
    pub clock: FlowClock,
    pub kl_step_weight: f64,
    pub hj_weight: f64,
    pub hj_initial_weight: f64,
    /// Straight-through one-hot samples in weak mode; soft samples otherwise.
    pub hard_gumbel: bool,
}

impl Default for ObjectiveOptions {
    fn default() -> Self {
        Self {
            clock: FlowClock::default(),
            kl_step_weight: 1.0,
            hj_weight: 1.0,
            hj_initial_weight: 1.0,
            hard_gumbel: true,
        }
    }
}

/// How the transformation index of each sequence is chosen.
#[derive(Debug, Clone, Copy)]
pub enum Supervision<'a, R> {
    Labels(&'a [usize]),
    /// Classifier posterior sampled with the given Gumbel noise and temperature.
    Weak {
        gumbels: &'a [Vec<R>],
        tau: R,
    },
}

/// Batch means of the objective's terms (unweighted).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Breakdown {
    pub recon_loglik: f64,
    pub kl0: f64,
    pub kl_steps: f64,
    pub hj: f64,
    pub cat_kl: f64,
}

impl Breakdown {
    pub fn elbo(&self, opts: &ObjectiveOptions) -> f64 {
        self.recon_loglik - self.kl0 - opts.kl_step_weight * self.kl_steps - self.cat_kl
    }

    /// `[recon, kl0, kl_steps, hj, cat_kl]` as they enter the loss; they sum to [`Self::loss`].
    pub fn loss_terms(&self, opts: &ObjectiveOptions) -> [f64; 5] {
        [
            -self.recon_loglik,
            self.kl0,
            opts.kl_step_weight * self.kl_steps,
            opts.hj_weight * self.hj,
            self.cat_kl,
        ]
    }

    pub fn loss(&self, opts: &ObjectiveOptions) -> f64 {
        self.loss_terms(opts).iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads<R> {
    pub vae: SeqVae<R>,
    pub bank: PotentialBank<R>,
}

impl<R: Real> ModelGrads<R> {
    pub fn zeros(vae: &SeqVae<R>, bank: &PotentialBank<R>) -> Self {
        Self {
            vae: vae.zeros_like(),
            bank: bank.zeros_like(),
        }
    }
}

struct SequenceForward<R> {
    rollout: Rollout<R>,
    kl: crate::flow::StepKl<R>,
    recon: R,
    kl0: R,
}

/// Evaluate the objective on a batch; with `grads`, accumulate the gradient of
/// the batch-mean loss.
pub fn batch_objective<R: Real>(
    vae: &SeqVae<R>,
    bank: &PotentialBank<R>,
    batch: &[Sequence<R>],
    supervision: Supervision<'_, R>,
    noise: &[Vec<R>],
    opts: &ObjectiveOptions,
    grads: Option<&mut ModelGrads<R>>,
) -> Result<Breakdown> {
    let b = batch.len();
    if b == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let image = vae.image();
    let d = vae.latent_dim;
    let k_total = bank.num_potentials();
    if bank.latent_dim != d {
        return Err(Error::shape("potential latent dimension", d, bank.latent_dim));
    }
    let steps = batch[0].steps();
    for s in batch {
        if s.shape != image {
            return Err(Error::shape(
                "sequence frame",
                format!("{image:?}"),
                format!("{:?}", s.shape),
            ));
        }
        if s.steps() != steps {
            return Err(Error::shape("sequence length", steps + 1, s.num_frames()));
        }
    }
    if noise.len() != b || noise.iter().any(|n| n.len() != d) {
        return Err(Error::shape(
            "reparameterization noise",
            format!("{b} x {d}"),
            noise.len(),
        ));
    }
    let want_grads = grads.is_some();
    let inv_b = R::one() / lit::<R>(b as f64);

    // encoder
    let x0: Vec<R> = batch.iter().flat_map(|s| s.frame(0).iter().copied()).collect();
    check_pixels(&x0, "encoder input")?;
    let (enc_out, enc_cache) = vae.encoder.forward(&x0, b)?;

    // mixture weights per sequence
    let weak = matches!(supervision, Supervision::Weak { .. });
    let mut samples: Vec<GumbelSample<R>> = Vec::new();
    let mut cat_kl = Vec::new();
    let mut cat_grad = Vec::new();
    let mut cls_cache = None;
    let weights: Vec<Vec<R>> = match supervision {
        Supervision::Labels(labels) => {
            if labels.len() != b {
                return Err(Error::shape("labels", b, labels.len()));
            }
            labels
                .iter()
                .map(|&k| {
                    bank.check_index(k)?;
                    Ok((0..k_total)
                        .map(|j| if j == k { R::one() } else { R::zero() })
                        .collect())
                })
                .collect::<Result<_>>()?
        }
        Supervision::Weak { gumbels, tau } => {
            if vae.num_classes() != k_total {
                return Err(Error::shape("classifier outputs", k_total, vae.num_classes()));
            }
            if gumbels.len() != b {
                return Err(Error::shape("Gumbel noise", b, gumbels.len()));
            }
            if steps < 1 {
                return Err(Error::InvalidArgument(
                    "classifier needs a sequence of at least 2 frames".into(),
                ));
            }
            let diffs: Vec<R> = batch
                .iter()
                .map(sequence_difference)
                .collect::<Result<Vec<_>>>()?
                .concat();
            let (logits, cache) = vae.classifier.forward(&diffs, b)?;
            cls_cache = Some(cache);
            let mut w = Vec::with_capacity(b);
            for (row, g) in logits.chunks(k_total).zip(gumbels) {
                let (kl, grad) = categorical_kl_uniform(row);
                cat_kl.push(kl);
                cat_grad.push(grad);
                let s = gumbel_softmax(row, g, tau, opts.hard_gumbel)?;
                w.push(s.value.clone());
                samples.push(s);
            }
            w
        }
    };

    // flows
    let rollout_opts = RolloutOptions {
        steps,
        clock: opts.clock,
        hj_initial_weight: opts.hj_initial_weight,
        compute_hj: true,
    };
    let diffusions: Vec<R> = (0..k_total)
        .map(|j| bank.diffusion_coefficient(j))
        .collect::<Result<_>>()?;
    let half = lit::<R>(0.5);
    let forwards: Vec<SequenceForward<R>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let row = &enc_out[i * 2 * d..(i + 1) * 2 * d];
            let (mu, logvar) = row.split_at(d);
            let (z0, log_q0) = reparameterize(mu, logvar, &noise[i])?;
            let rollout = Rollout::run(bank, &weights[i], &z0, log_q0, rollout_opts, weak && want_grads)?;
            let mix_d = weights[i].iter().zip(&diffusions).map(|(&w, &dk)| w * dk).sum();
            let kl = step_kl_sum(&rollout.states, mix_d, opts.clock);
            let kl0 = mu
                .iter()
                .zip(logvar)
                .map(|(&m, &lv)| half * (m * m + lv.exp() - R::one() - lv))
                .sum();
            Ok(SequenceForward {
                rollout,
                kl,
                recon: R::zero(),
                kl0,
            })
        })
        .collect::<Result<_>>()?;
    let mut forwards = forwards;

    // decoder over every frame, sequence-major
    let frames = steps + 1;
    let zs: Vec<R> = forwards
        .iter()
        .flat_map(|f| f.rollout.states.iter().flat_map(|s| s.z.iter().copied()))
        .collect();
    let (logits, dec_cache) = vae.decoder.forward(&zs, b * frames)?;
    let eps = lit::<R>(RECON_EPS);
    let n_img = image.len();
    let mut d_logits = if want_grads {
        vec![R::zero(); logits.len()]
    } else {
        Vec::new()
    };
    for (i, f) in forwards.iter_mut().enumerate() {
        let mut recon = R::zero();
        for t in 0..frames {
            let x = batch[i].frame(t);
            check_pixels(x, "target frame")?;
            let off = (i * frames + t) * n_img;
            for p in 0..n_img {
                let xv = x[p];
                let raw = sigmoid(logits[off + p]);
                let q = raw.max(eps).min(R::one() - eps);
                recon += xv * q.ln() + (R::one() - xv) * (R::one() - q).ln();
                if want_grads && q == raw {
                    d_logits[off + p] = -(xv - raw) * inv_b;
                }
            }
        }
        f.recon = recon;
    }

    let mean = |vals: &mut dyn Iterator<Item = R>| -> f64 { to_f64(vals.sum::<R>() * inv_b) };
    let breakdown = Breakdown {
        recon_loglik: mean(&mut forwards.iter().map(|f| f.recon)),
        kl0: mean(&mut forwards.iter().map(|f| f.kl0)),
        kl_steps: mean(&mut forwards.iter().map(|f| f.kl.value)),
        hj: mean(&mut forwards.iter().map(|f| f.rollout.hj)),
        cat_kl: if weak { mean(&mut cat_kl.iter().copied()) } else { 0.0 },
    };
    if !breakdown.loss(opts).is_finite() {
        return Err(Error::NonFinite("objective".into()));
    }
    let Some(grads) = grads else {
        return Ok(breakdown);
    };

    let d_z = vae.decoder.backward(&dec_cache, &d_logits, &mut grads.vae.decoder);
    let w_kl = lit::<R>(opts.kl_step_weight) * inv_b;
    let w_hj = lit::<R>(opts.hj_weight) * inv_b;
    let per_sequence: Vec<(PotentialBank<R>, Vec<R>, Vec<R>)> = (0..b)
        .into_par_iter()
        .map(|i| {
            let f = &forwards[i];
            let mut local = bank.zeros_like();
            let adj = RolloutAdjoint {
                z: (0..frames)
                    .map(|t| {
                        let dz = &d_z[(i * frames + t) * d..(i * frames + t + 1) * d];
                        dz.iter().zip(&f.kl.d_z[t]).map(|(&a, &k)| a + w_kl * k).collect()
                    })
                    .collect(),
                log_q: f.kl.d_log_q.iter().map(|&v| w_kl * v).collect(),
                hj: w_hj,
            };
            let g = f.rollout.backward(bank, &adj, &mut local);
            let mut d_weights = g.weights;
            let d_mix = w_kl * f.kl.d_diffusion;
            for j in 0..k_total {
                d_weights[j] += d_mix * diffusions[j];
                let rho = bank.diffusion_pre.data()[j];
                local.diffusion_pre.data_mut()[j] += d_mix * weights[i][j] * lit::<R>(2.0) * rho;
            }
            // encoder adjoints through z0 = mu + sigma * eps and log q0
            let row = &enc_out[i * 2 * d..(i + 1) * 2 * d];
            let (mu, logvar) = row.split_at(d);
            let mut d_enc = vec![R::zero(); 2 * d];
            for c in 0..d {
                let sigma = (half * logvar[c]).exp();
                d_enc[c] = g.z0[c] + inv_b * mu[c];
                d_enc[d + c] =
                    g.z0[c] * noise[i][c] * half * sigma - half * g.log_q0 + inv_b * half * (sigma * sigma - R::one());
            }
            (local, d_enc, d_weights)
        })
        .collect();

    let mut d_enc_all = Vec::with_capacity(b * 2 * d);
    let mut d_weights_all = Vec::with_capacity(b);
    for (local, d_enc, d_w) in per_sequence {
        grads.bank.add_scaled(&local, R::one());
        d_enc_all.extend(d_enc);
        d_weights_all.push(d_w);
    }
    vae.encoder.backward(&enc_cache, &d_enc_all, &mut grads.vae.encoder);

    if let Some(cache) = cls_cache {
        let mut d_cls = Vec::with_capacity(b * k_total);
        for i in 0..b {
            let through = samples[i].backward(&d_weights_all[i]);
            d_cls.extend(through.iter().zip(&cat_grad[i]).map(|(&a, &c)| a + inv_b * c));
        }
        vae.classifier.backward(&cache, &d_cls, &mut grads.vae.classifier);
    }
    Ok(breakdown)
}

/// ELBO of one labelled sequence and its breakdown.
pub fn elbo_supervised<R: Real>(
    vae: &SeqVae<R>,
    bank: &PotentialBank<R>,
    seq: &Sequence<R>,
    k: usize,
    noise: &[R],
    opts: &ObjectiveOptions,
) -> Result<(f64, Breakdown)> {
    let b = batch_objective(
        vae,
        bank,
        std::slice::from_ref(seq),
        Supervision::Labels(&[k]),
        &[noise.to_vec()],
        opts,
        None,
    )?;
    Ok((b.elbo(opts), b))
}

/// ELBO of one unlabelled sequence with the transformation drawn from the
/// classifier posterior, minus `KL(q(k | x) || uniform)`.
pub fn elbo_weak<R: Real>(
    vae: &SeqVae<R>,
    bank: &PotentialBank<R>,
    seq: &Sequence<R>,
    noise: &[R],
    gumbels: &[R],
    tau: R,
    opts: &ObjectiveOptions,
) -> Result<(f64, Breakdown)> {
    let g = [gumbels.to_vec()];
    let b = batch_objective(
        vae,
        bank,
        std::slice::from_ref(seq),
        Supervision::Weak { gumbels: &g, tau },
        &[noise.to_vec()],
        opts,
        None,
    )?;
    Ok((b.elbo(opts), b))
}

/// Classifier posterior `q(k | x)` for a sequence.
pub fn class_posterior<R: Real>(vae: &SeqVae<R>, seq: &Sequence<R>) -> Result<Vec<R>> {
    Ok(softmax(&super::classify_sequence(vae, seq)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{diffused_gaussian_logpdf, evolve_posterior};
    use crate::potential::BankConfig;
    use crate::real::relative_max_error;
    use crate::tensor::ImageShape;
    use crate::vae::tests::tiny_config;
    use crate::vae::{decode, encode, recon_loglik};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> (SeqVae<f64>, PotentialBank<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vae = SeqVae::new(&tiny_config(), &mut rng).unwrap();
        // non-zero biases keep ReLU pre-activations away from the kink at 0
        for (_, p) in vae.named_params_mut("m") {
            if p.shape().len() == 1 {
                p.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.1));
            }
        }
        let bank_cfg = BankConfig {
            num_potentials: 3,
            latent_dim: 3,
            hidden: vec![5],
            time_embed_dim: 4,
            potential_output_scale: 0.3,
            ..BankConfig::default()
        };
        let mut bank = PotentialBank::new(&bank_cfg, &mut rng).unwrap();
        for v in bank.diffusion_pre.data_mut() {
            *v = rng.gen_range(0.1..0.4);
        }
        (vae, bank)
    }

    fn sequence(seed: u64, shape: ImageShape, frames: usize) -> Sequence<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Sequence::new(
            shape,
            (0..shape.len() * frames).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn opts() -> ObjectiveOptions {
        ObjectiveOptions {
            clock: FlowClock::new(0.5).unwrap(),
            kl_step_weight: 0.8,
            hj_weight: 0.6,
            hj_initial_weight: 1.0,
            hard_gumbel: true,
        }
    }

    #[test]
    fn single_frame_is_plain_vae_elbo() {
        let (vae, bank) = model(1);
        let seq = sequence(2, vae.image(), 1);
        let noise = [0.3, -0.1, 0.8];
        let (elbo, parts) = elbo_supervised(&vae, &bank, &seq, 0, &noise, &ObjectiveOptions::default()).unwrap();
        // reference single-image VAE
        let (mu, lv) = encode(&vae, seq.frame(0)).unwrap();
        let z: Vec<f64> = (0..3).map(|i| mu[i] + (0.5 * lv[i]).exp() * noise[i]).collect();
        let recon = recon_loglik(seq.frame(0), &decode(&vae, &z).unwrap()).unwrap();
        let kl: f64 = (0..3).map(|i| 0.5 * (mu[i] * mu[i] + lv[i].exp() - 1.0 - lv[i])).sum();
        assert_eq!(elbo, recon - kl);
        assert_eq!(parts.kl_steps, 0.0);
    }

    #[test]
    fn zero_potential_constant_sequence() {
        let (mut vae, mut bank) = model(3);
        for (_, p) in vae.encoder.named_params_mut("e") {
            p.fill(0.0);
        }
        for net in &mut bank.potentials {
            for l in &mut net.layers {
                l.weight.fill(0.0);
                l.bias.fill(0.0);
            }
        }
        bank.diffusion_pre.fill(0.0);
        let x0 = sequence(4, vae.image(), 1);
        let seq = Sequence::new(vae.image(), x0.frame(0).repeat(5)).unwrap();
        let noise = [0.2, 0.5, -0.4];
        let o = ObjectiveOptions::default();
        let (elbo, parts) = elbo_supervised(&vae, &bank, &seq, 1, &noise, &o).unwrap();
        let recon = recon_loglik(x0.frame(0), &decode(&vae, &noise).unwrap()).unwrap();
        assert_eq!(parts.kl0, 0.0);
        assert!(parts.kl_steps.abs() < 1e-12);
        assert!((elbo - 5.0 * recon).abs() < 1e-10);
    }

    #[test]
    fn elbo_equals_manual_sum_of_terms() {
        let (vae, bank) = model(5);
        let seq = sequence(6, vae.image(), 4);
        let noise = [0.1, -0.7, 0.4];
        let o = opts();
        let (elbo, _) = elbo_supervised(&vae, &bank, &seq, 2, &noise, &o).unwrap();
        let (mu, lv) = encode(&vae, seq.frame(0)).unwrap();
        let z0: Vec<f64> = (0..3).map(|i| mu[i] + (0.5 * lv[i]).exp() * noise[i]).collect();
        let lq0: f64 = (0..3)
            .map(|i| -0.5 * (noise[i] * noise[i] + (2.0 * std::f64::consts::PI).ln() + lv[i]))
            .sum();
        let tr = evolve_posterior(&bank, 2, &z0, lq0, 3, o.clock).unwrap();
        let mut manual = 0.0;
        for s in &tr.states {
            manual += recon_loglik(seq.frame(s.t), &decode(&vae, &s.z).unwrap()).unwrap();
            if s.t > 0 {
                let prior = diffused_gaussian_logpdf(bank.diffusion_coefficient(2).unwrap(), &s.z, s.t as f64 * 0.5);
                manual -= o.kl_step_weight * (s.log_q - prior);
            }
        }
        manual -= (0..3)
            .map(|i| 0.5 * (mu[i] * mu[i] + lv[i].exp() - 1.0 - lv[i]))
            .sum::<f64>();
        assert!((elbo - manual).abs() < 1e-10);
    }

    #[test]
    fn weak_hard_sample_equals_supervised_minus_categorical_kl() {
        let (vae, bank) = model(7);
        let seq = sequence(8, vae.image(), 3);
        let noise = [0.2, 0.1, -0.3];
        let gumbels = [0.0, 5.0, 0.0];
        let o = opts();
        let (weak, parts) = elbo_weak(&vae, &bank, &seq, &noise, &gumbels, 0.5, &o).unwrap();
        let logits = crate::vae::classify_sequence(&vae, &seq).unwrap();
        let k = gumbel_softmax(&logits, &gumbels, 0.5, true).unwrap().argmax();
        let (sup, _) = elbo_supervised(&vae, &bank, &seq, k, &noise, &o).unwrap();
        let (cat, _) = categorical_kl_uniform(&logits);
        assert!((weak - (sup - cat)).abs() < 1e-12);
        assert_eq!(parts.cat_kl, cat);
    }

    #[test]
    fn loss_terms_sum_to_loss() {
        let (vae, bank) = model(9);
        let seq = sequence(10, vae.image(), 3);
        let o = opts();
        let (_, parts) = elbo_supervised(&vae, &bank, &seq, 0, &[0.0; 3], &o).unwrap();
        let terms = parts.loss_terms(&o);
        assert!((terms.iter().sum::<f64>() - parts.loss(&o)).abs() < 1e-10);
        assert!((parts.loss(&o) - (-parts.elbo(&o) + o.hj_weight * parts.hj)).abs() < 1e-10);
    }

    fn flat(vae: &SeqVae<f64>, bank: &PotentialBank<f64>) -> Vec<f64> {
        vae.named_params("m")
            .into_iter()
            .chain(bank.named_params("b"))
            .flat_map(|(_, a)| a.data().to_vec())
            .collect()
    }

    fn bump(vae: &mut SeqVae<f64>, bank: &mut PotentialBank<f64>, mut i: usize, delta: f64) {
        for (_, a) in vae.named_params_mut("m").into_iter().chain(bank.named_params_mut("b")) {
            if i < a.len() {
                a.data_mut()[i] += delta;
                return;
            }
            i -= a.len();
        }
        panic!("index out of range");
    }

    fn gradient_check(weak: bool, hard: bool) {
        let (vae, bank) = model(11);
        let seqs = vec![sequence(12, vae.image(), 3), sequence(13, vae.image(), 3)];
        let noise = vec![vec![0.3, -0.2, 0.1], vec![-0.5, 0.4, 0.2]];
        let gumbels = vec![vec![0.1, 0.6, -0.2], vec![0.3, -0.4, 0.5]];
        let labels = [2, 0];
        let mut o = opts();
        o.hard_gumbel = hard;
        let sup = if weak {
            Supervision::Weak {
                gumbels: &gumbels,
                tau: 0.8,
            }
        } else {
            Supervision::Labels(&labels)
        };
        let loss = |v: &SeqVae<f64>, bk: &PotentialBank<f64>| {
            batch_objective(v, bk, &seqs, sup, &noise, &o, None).unwrap().loss(&o)
        };
        let mut grads = ModelGrads::zeros(&vae, &bank);
        batch_objective(&vae, &bank, &seqs, sup, &noise, &o, Some(&mut grads)).unwrap();
        let analytic = flat(&grads.vae, &grads.bank);
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        // all flow parameters plus a random subset of the (many) conv parameters
        let n_vae: usize = vae.named_params("m").iter().map(|(_, a)| a.len()).sum();
        let mut idx: Vec<usize> = (n_vae..analytic.len()).collect();
        idx.extend((0..150).map(|_| rng.gen_range(0..n_vae)));
        let mut a_sel = Vec::new();
        let mut n_sel = Vec::new();
        for &i in &idx {
            let (mut vp, mut bp) = (vae.clone(), bank.clone());
            bump(&mut vp, &mut bp, i, h);
            let (mut vm, mut bm) = (vae.clone(), bank.clone());
            bump(&mut vm, &mut bm, i, -h);
            n_sel.push((loss(&vp, &bp) - loss(&vm, &bm)) / (2.0 * h));
            a_sel.push(analytic[i]);
        }
        let err = relative_max_error(&a_sel, &n_sel);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn supervised_gradients_match_finite_differences() {
        gradient_check(false, true);
    }

    #[test]
    fn weak_soft_gradients_match_finite_differences() {
        gradient_check(true, false);
    }

    #[test]
    fn weak_hard_gradients_match_finite_differences_off_classifier() {
        // with hard samples the loss is piecewise constant in the classifier
        // weights through the one-hot path, so only the flow, encoder and decoder
        // gradients (plus the categorical KL) are checked against differences
        let (vae, bank) = model(14);
        let seqs = vec![sequence(15, vae.image(), 3)];
        let noise = vec![vec![0.3, -0.2, 0.1]];
        let gumbels = vec![vec![0.1, 2.0, -0.2]];
        let o = opts();
        let sup = Supervision::Weak {
            gumbels: &gumbels,
            tau: 0.8,
        };
        let mut grads = ModelGrads::zeros(&vae, &bank);
        batch_objective(&vae, &bank, &seqs, sup, &noise, &o, Some(&mut grads)).unwrap();
        let analytic: Vec<f64> = grads
            .bank
            .named_params("b")
            .into_iter()
            .flat_map(|(_, a)| a.data().to_vec())
            .collect();
        let base: Vec<f64> = bank
            .named_params("b")
            .into_iter()
            .flat_map(|(_, a)| a.data().to_vec())
            .collect();
        let h = 1e-5;
        let mut numeric = Vec::new();
        for i in 0..base.len() {
            let eval = |delta: f64| {
                let mut bk = bank.clone();
                let mut seen = 0;
                for (_, a) in bk.named_params_mut("b") {
                    if i < seen + a.len() {
                        a.data_mut()[i - seen] += delta;
                        break;
                    }
                    seen += a.len();
                }
                batch_objective(&vae, &bk, &seqs, sup, &noise, &o, None)
                    .unwrap()
                    .loss(&o)
            };
            numeric.push((eval(h) - eval(-h)) / (2.0 * h));
        }
        assert!(relative_max_error(&analytic, &numeric) < 1e-4);
    }

    #[test]
    fn straight_through_matches_soft_when_sample_is_sharp() {
        // at a low temperature with a dominant perturbed logit soft == hard to
        // machine precision, so both modes give the same gradients
        let (vae, bank) = model(16);
        let seqs = vec![sequence(17, vae.image(), 3)];
        let noise = vec![vec![0.3, -0.2, 0.1]];
        let gumbels = vec![vec![0.0, 40.0, 0.0]];
        let tau = 0.05;
        let mut hard = opts();
        hard.hard_gumbel = true;
        let mut soft = hard;
        soft.hard_gumbel = false;
        let run = |o: &ObjectiveOptions| {
            let mut g = ModelGrads::zeros(&vae, &bank);
            batch_objective(
                &vae,
                &bank,
                &seqs,
                Supervision::Weak { gumbels: &gumbels, tau },
                &noise,
                o,
                Some(&mut g),
            )
            .unwrap();
            flat(&g.vae, &g.bank)
        };
        assert!(relative_max_error(&run(&hard), &run(&soft)) < 1e-10);
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let (vae, bank) = model(18);
        let seqs = vec![sequence(19, vae.image(), 3), sequence(20, vae.image(), 4)];
        let noise = vec![vec![0.0; 3]; 2];
        let o = opts();
        assert!(batch_objective(&vae, &bank, &seqs, Supervision::Labels(&[0, 1]), &noise, &o, None).is_err());
        assert!(batch_objective(
            &vae,
            &bank,
            &seqs[..1],
            Supervision::Labels(&[3]),
            &noise[..1],
            &o,
            None
        )
        .is_err());
        assert!(batch_objective(&vae, &bank, &[], Supervision::Labels(&[]), &[], &o, None).is_err());
    }
}
