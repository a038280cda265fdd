//! Optimizer, configuration, checkpoints and the training loop.

pub mod adam;
pub mod checkpoint;
pub mod config;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{checkpoint_config, load_checkpoint, save_checkpoint};
pub use config::{Mode, Precision, Preset, TrainConfig};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{
    all_pairs, build_sequences, colorize, load_idx, make_toy_dataset, read_cache, standard_transforms, toy_shape,
    SequenceBatch, TransformSpec,
};
use crate::error::{Error, Result};
use crate::flow::FlowClock;
use crate::potential::{BankConfig, PotentialBank};
use crate::real::{lit, Real};
use crate::tensor::{DenseArray, ImageShape, Sequence};
use crate::vae::{
    anneal_tau, batch_objective, sample_gumbels, ConvGeometry, GumbelState, ModelGrads, ObjectiveOptions, SeqVae,
    Supervision, VaeConfig,
};

/// Red tint applied to MNIST digits so that hue rotation is visible.
pub const MNIST_TINT: [f64; 3] = [1.0, 0.0, 0.0];

#[derive(Debug, Clone, PartialEq)]
pub struct Model<R> {
    pub vae: SeqVae<R>,
    pub bank: PotentialBank<R>,
}

impl<R: Real> Model<R> {
    pub fn new(cfg: &TrainConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vae = SeqVae::new(&vae_config(cfg), &mut rng)?;
        let bank = PotentialBank::new(&bank_config(cfg), &mut rng)?;
        Ok(Self { vae, bank })
    }

    pub fn named_params(&self) -> Vec<(String, &DenseArray<R>)> {
        let mut out = self.vae.named_params("vae");
        out.extend(self.bank.named_params("bank"));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut DenseArray<R>)> {
        let mut out = self.vae.named_params_mut("vae");
        out.extend(self.bank.named_params_mut("bank"));
        out
    }
}

pub fn image_shape(cfg: &TrainConfig) -> ImageShape {
    toy_shape(cfg.image_size)
}

pub fn vae_config(cfg: &TrainConfig) -> VaeConfig {
    VaeConfig {
        image: image_shape(cfg),
        latent_dim: cfg.latent_dim,
        num_classes: cfg.num_potentials,
        channels: cfg.channels.clone(),
        classifier_channels: cfg.classifier_channels.clone(),
        geom: ConvGeometry::default(),
    }
}

pub fn bank_config(cfg: &TrainConfig) -> BankConfig {
    BankConfig {
        num_potentials: cfg.num_potentials,
        latent_dim: cfg.latent_dim,
        hidden: cfg.potential_hidden.clone(),
        time_embed_dim: cfg.time_embed_dim,
        potential_output_scale: cfg.potential_output_scale,
        ordinary_hj: cfg.ordinary_hj,
        ..BankConfig::default()
    }
}

pub fn objective_options(cfg: &TrainConfig) -> Result<ObjectiveOptions> {
    Ok(ObjectiveOptions {
        clock: FlowClock::new(cfg.dt)?,
        kl_step_weight: cfg.kl_step_weight,
        hj_weight: cfg.hj_weight,
        hj_initial_weight: cfg.hj_initial_weight,
        hard_gumbel: true,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<R> {
    pub config: TrainConfig,
    pub model: Model<R>,
    pub adam: AdamState<R>,
    pub iteration: u64,
}

impl<R: Real> TrainState<R> {
    pub fn init(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config, config.seed)?;
        let adam = AdamState::new(model.named_params().into_iter().map(|(_, p)| p), AdamConfig::default());
        Ok(Self {
            config: config.clone(),
            model,
            adam,
            iteration: 0,
        })
    }
}

/// Base images for the preset: toy sprites or tinted MNIST digits.
pub fn preset_bases<R: Real>(cfg: &TrainConfig, seed: u64, count: usize, skip: usize) -> Result<Vec<Vec<R>>> {
    match cfg.preset {
        Preset::Toy => Ok(make_toy_dataset::<R>(seed, skip + count, cfg.image_size)?.split_off(skip)),
        Preset::Mnist => {
            let path = cfg
                .mnist_images
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("the mnist preset needs mnist_images = <idx file>".into()))?;
            let images = load_idx::<R>(path)?;
            let (n, h, w) = (images.shape()[0], images.shape()[1], images.shape()[2]);
            if h != cfg.image_size || w != cfg.image_size {
                return Err(Error::shape("MNIST image", cfg.image_size, format!("{h}x{w}")));
            }
            if skip + count > n {
                return Err(Error::InvalidArgument(format!(
                    "IDX file has {n} images, need {}",
                    skip + count
                )));
            }
            Ok(images
                .data()
                .chunks(h * w)
                .skip(skip)
                .take(count)
                .map(|g| colorize(g, MNIST_TINT))
                .collect())
        }
    }
}

/// Where training batches come from.
pub enum TrainData<R> {
    /// Sequences rendered on the fly from base images.
    Generated {
        bases: Vec<Vec<R>>,
        shape: ImageShape,
        transforms: Vec<TransformSpec>,
    },
    /// A labelled dataset cache, grouped by label.
    Cached {
        batch: SequenceBatch<R>,
        by_label: Vec<Vec<usize>>,
    },
}

impl<R: Real> TrainData<R> {
    pub fn from_config(cfg: &TrainConfig) -> Result<Self> {
        match &cfg.dataset {
            Some(path) => {
                let batch = read_cache::<R>(path)?;
                if batch.shape != image_shape(cfg) || batch.steps != cfg.steps {
                    return Err(Error::shape(
                        "dataset cache",
                        format!("{:?} x {} frames", image_shape(cfg), cfg.steps + 1),
                        format!("{:?} x {} frames", batch.shape, batch.steps + 1),
                    ));
                }
                let by_label: Vec<Vec<usize>> = (0..cfg.num_potentials).map(|k| batch.indices_with_label(k)).collect();
                if let Some(k) = by_label.iter().position(|v| v.is_empty()) {
                    return Err(Error::InvalidArgument(format!("dataset has no sequences labelled {k}")));
                }
                Ok(Self::Cached { batch, by_label })
            }
            None => {
                let transforms = standard_transforms(cfg.steps)?;
                if cfg.num_potentials > transforms.len() {
                    return Err(Error::InvalidArgument(format!(
                        "generated data has {} transformations, config asks for {}",
                        transforms.len(),
                        cfg.num_potentials
                    )));
                }
                Ok(Self::Generated {
                    bases: preset_bases(cfg, cfg.data_seed, cfg.train_bases, 0)?,
                    shape: image_shape(cfg),
                    transforms,
                })
            }
        }
    }

    /// `n` sequences under transformation `k`.
    pub fn sample(&self, k: usize, n: usize, rng: &mut impl Rng) -> Result<Vec<Sequence<R>>> {
        match self {
            Self::Generated {
                bases,
                shape,
                transforms,
            } => {
                let pairs: Vec<(usize, usize)> = (0..n).map(|_| (rng.gen_range(0..bases.len()), k)).collect();
                Ok(build_sequences(bases, *shape, transforms, &pairs)?.sequences)
            }
            Self::Cached { batch, by_label } => {
                let pool = &by_label[k];
                Ok((0..n)
                    .map(|_| batch.sequences[pool[rng.gen_range(0..pool.len())]].clone())
                    .collect())
            }
        }
    }
}

/// Held-out sequences: the configured cache, or every transformation applied
/// to bases drawn after the training ones.
pub fn test_set<R: Real>(cfg: &TrainConfig) -> Result<SequenceBatch<R>> {
    if let Some(path) = &cfg.test_dataset {
        return read_cache(path);
    }
    let transforms = standard_transforms(cfg.steps)?;
    let k = cfg.num_potentials.min(transforms.len());
    let bases = match cfg.preset {
        Preset::Toy => preset_bases(cfg, cfg.data_seed.wrapping_add(1), cfg.test_bases, 0)?,
        Preset::Mnist => preset_bases(cfg, 0, cfg.test_bases, cfg.train_bases)?,
    };
    build_sequences(&bases, image_shape(cfg), &transforms[..k], &all_pairs(bases.len(), k))
}

/// One logged iteration. Loss components are the weighted terms, so they sum
/// to `loss`; `recon` is the negative reconstruction log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub loss: f64,
    pub recon: f64,
    pub kl0: f64,
    pub kl_steps: f64,
    pub hj: f64,
    pub cat_kl: f64,
    pub tau: f64,
}

impl LogRow {
    pub const HEADER: &'static str = "iteration,loss,recon,kl0,kl_steps,hj,cat_kl,tau";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.iteration, self.loss, self.recon, self.kl0, self.kl_steps, self.hj, self.cat_kl, self.tau
        )
    }

    pub fn parse_csv_line(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 8 {
            return None;
        }
        let v = |i: usize| f[i].parse::<f64>().ok();
        Some(Self {
            iteration: f[0].parse().ok()?,
            loss: v(1)?,
            recon: v(2)?,
            kl0: v(3)?,
            kl_steps: v(4)?,
            hj: v(5)?,
            cat_kl: v(6)?,
            tau: v(7)?,
        })
    }

    /// The (weighted) ELBO: the loss without the HJ penalty, negated.
    pub fn elbo(&self) -> f64 {
        -(self.recon + self.kl0 + self.kl_steps + self.cat_kl)
    }
}

pub struct TrainOutcome<R> {
    pub state: TrainState<R>,
    pub history: Vec<LogRow>,
}

/// Honour `FFACT_THREADS` for the global worker pool. Returns the pool size.
pub fn configure_threads() -> Result<usize> {
    if let Ok(v) = std::env::var("FFACT_THREADS") {
        let n: usize =
            v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
                Error::InvalidArgument(format!("FFACT_THREADS must be a positive integer, got '{v}'"))
            })?;
        // a second call finds the pool already built; keep the first size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Run the configured number of iterations from a fresh initialization.
///
/// Each iteration draws one transformation index uniformly, a batch of
/// sequences under it, reparameterization noise and (weak mode) Gumbel noise,
/// then takes one Adam step on the batch-mean loss. With `out_dir` set, the log
/// goes to `train_log.csv` and the final state to `checkpoint.ffckpt`.
pub fn train<R: Real>(config: &TrainConfig) -> Result<TrainOutcome<R>> {
    let mut state = TrainState::<R>::init(config)?;
    let data = TrainData::<R>::from_config(config)?;
    let opts = objective_options(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let (k_total, d, b) = (config.num_potentials, config.latent_dim, config.batch_size);

    let mut log = match &config.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let mut w = create(&dir.join("train_log.csv"))?;
            writeln!(w, "{}", LogRow::HEADER).map_err(|e| Error::io(dir, e))?;
            Some(w)
        }
        None => None,
    };
    let mut history = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let k = rng.gen_range(0..k_total);
        let batch = data.sample(k, b, &mut rng)?;
        let noise: Vec<Vec<R>> = (0..b)
            .map(|_| (0..d).map(|_| lit::<R>(StandardNormal.sample(&mut rng))).collect())
            .collect();
        let tau = anneal_tau(&GumbelState::at(it));
        let labels = vec![k; b];
        let gumbels: Vec<Vec<R>>;
        let supervision = match config.mode {
            Mode::Supervised => Supervision::Labels(&labels),
            Mode::Weak => {
                gumbels = (0..b).map(|_| sample_gumbels(k_total, &mut rng)).collect();
                Supervision::Weak {
                    gumbels: &gumbels,
                    tau: lit(tau),
                }
            }
        };
        let mut grads = ModelGrads::zeros(&state.model.vae, &state.model.bank);
        let breakdown = batch_objective(
            &state.model.vae,
            &state.model.bank,
            &batch,
            supervision,
            &noise,
            &opts,
            Some(&mut grads),
        )?;
        let [recon, kl0, kl_steps, hj, cat_kl] = breakdown.loss_terms(&opts);
        let loss = breakdown.loss(&opts);
        if !loss.is_finite() {
            return Err(Error::NanLoss { iteration: it });
        }
        {
            let mut g = grads.vae.named_params("vae");
            g.extend(grads.bank.named_params("bank"));
            let g: Vec<&DenseArray<R>> = g.into_iter().map(|(_, a)| a).collect();
            let mut p: Vec<&mut DenseArray<R>> = state.model.named_params_mut().into_iter().map(|(_, a)| a).collect();
            adam_step(&mut state.adam, &mut p, &g, config.learning_rate)?;
        }
        state.iteration += 1;
        let row = LogRow {
            iteration: it,
            loss,
            recon,
            kl0,
            kl_steps,
            hj,
            cat_kl,
            tau,
        };
        history.push(row);
        if let (Some(w), true) = (log.as_mut(), it % config.log_every == 0) {
            writeln!(w, "{}", row.csv_line()).map_err(|e| Error::io("train_log.csv", e))?;
        }
        if let (Some(dir), true) = (
            &config.out_dir,
            config.checkpoint_every > 0 && (it + 1) % config.checkpoint_every == 0,
        ) {
            save_checkpoint(&state, dir.join(format!("checkpoint_{:06}.ffckpt", it + 1)))?;
        }
    }
    if let Some(dir) = &config.out_dir {
        if let Some(mut w) = log {
            w.flush().map_err(|e| Error::io(dir, e))?;
        }
        save_checkpoint(&state, dir.join("checkpoint.ffckpt"))?;
    }
    Ok(TrainOutcome { state, history })
}

/// Mean of `f` over the first and last `window` rows.
pub fn moving_average_ends(history: &[LogRow], window: usize, f: impl Fn(&LogRow) -> f64) -> Option<(f64, f64)> {
    if window == 0 || history.len() < window {
        return None;
    }
    let mean = |rows: &[LogRow]| rows.iter().map(&f).sum::<f64>() / rows.len() as f64;
    Some((mean(&history[..window]), mean(&history[history.len() - window..])))
}
