//! One potential trained to carry `N(0, 1)` to `N(mu, 1)` on the line over
//! unit time, with the ordinary HJ penalty plus a terminal KL to the target.
//! The optimal transport for this pair is the translation `z + mu`, whose
//! action is `W2^2 / 2 = mu^2 / 2`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::flow::{FlowClock, FlowState, Rollout, RolloutAdjoint, RolloutOptions};
use crate::potential::{BankConfig, PotentialBank};
use crate::train::{adam_step, AdamConfig, AdamState};

use super::{gaussian_w2, transport_cost};

#[derive(Debug, Clone, PartialEq)]
pub struct BbConfig {
    pub target_mean: f64,
    pub steps: usize,
    pub hidden: Vec<usize>,
    pub particles: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub hj_weight: f64,
    pub seed: u64,
}

impl Default for BbConfig {
    fn default() -> Self {
        Self {
            target_mean: 2.0,
            steps: 8,
            hidden: vec![32, 32],
            particles: 64,
            iterations: 1500,
            learning_rate: 3e-3,
            hj_weight: 50.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BbReport {
    pub transport_cost: f64,
    /// `W2(N(0, 1), N(mu, 1))^2 / 2`.
    pub optimal_cost: f64,
    /// Mean squared HJ residual on the evaluation particles before and after training.
    pub initial_hj: f64,
    pub final_hj: f64,
    /// `E[log q_T - log N(z_T; mu, 1)]` after training.
    pub terminal_kl: f64,
}

struct Evaluation {
    hj: f64,
    kl: f64,
    trajectories: Vec<Vec<FlowState<f64>>>,
}

fn log_normal(x: f64, mu: f64) -> f64 {
    -0.5 * (x - mu).powi(2) - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

fn options(cfg: &BbConfig) -> Result<RolloutOptions> {
    Ok(RolloutOptions {
        steps: cfg.steps,
        clock: FlowClock::new(1.0 / cfg.steps as f64)?,
        hj_initial_weight: 0.0,
        compute_hj: true,
    })
}

fn evaluate(bank: &PotentialBank<f64>, cfg: &BbConfig, samples: &[f64]) -> Result<Evaluation> {
    let opts = options(cfg)?;
    let (mut hj, mut kl) = (0.0, 0.0);
    let mut trajectories = Vec::with_capacity(samples.len());
    for &z0 in samples {
        let r = Rollout::run(bank, &[1.0], &[z0], log_normal(z0, 0.0), opts, false)?;
        let last = r.states.last().expect("non-empty");
        hj += r.hj;
        kl += last.log_q - log_normal(last.z[0], cfg.target_mean);
        trajectories.push(r.states);
    }
    let n = samples.len() as f64;
    Ok(Evaluation {
        hj: hj / n,
        kl: kl / n,
        trajectories,
    })
}

/// Train the potential and report its transport cost against the optimum.
pub fn run_bb_demo(cfg: &BbConfig) -> Result<(PotentialBank<f64>, BbReport)> {
    if cfg.steps == 0 || cfg.particles == 0 {
        return Err(Error::InvalidArgument("demo needs positive steps and particles".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bank_cfg = BankConfig {
        num_potentials: 1,
        latent_dim: 1,
        hidden: cfg.hidden.clone(),
        potential_output_scale: 1.0,
        ordinary_hj: true,
        ..BankConfig::default()
    };
    let mut bank = PotentialBank::<f64>::new(&bank_cfg, &mut rng)?;
    let eval_samples: Vec<f64> = (0..512).map(|_| StandardNormal.sample(&mut rng)).collect();
    let initial = evaluate(&bank, cfg, &eval_samples)?;

    let opts = options(cfg)?;
    let mut adam = AdamState::new(
        bank.named_params("bank").into_iter().map(|(_, p)| p),
        AdamConfig::default(),
    );
    let inv_n = 1.0 / cfg.particles as f64;
    for _ in 0..cfg.iterations {
        let mut grads = bank.zeros_like();
        for _ in 0..cfg.particles {
            let z0: f64 = StandardNormal.sample(&mut rng);
            let r = Rollout::run(&bank, &[1.0], &[z0], log_normal(z0, 0.0), opts, false)?;
            let zt = r.states[cfg.steps].z[0];
            let mut adj = RolloutAdjoint::zeros(cfg.steps, 1);
            adj.z[cfg.steps][0] = (zt - cfg.target_mean) * inv_n;
            adj.log_q[cfg.steps] = inv_n;
            adj.hj = cfg.hj_weight * inv_n;
            r.backward(&bank, &adj, &mut grads);
        }
        let g: Vec<_> = grads.named_params("bank").into_iter().map(|(_, g)| g).collect();
        let mut p: Vec<_> = bank.named_params_mut("bank").into_iter().map(|(_, p)| p).collect();
        adam_step(&mut adam, &mut p, &g, cfg.learning_rate)?;
    }

    let last = evaluate(&bank, cfg, &eval_samples)?;
    let clock = opts.clock;
    let report = BbReport {
        transport_cost: transport_cost(&bank, 0, &last.trajectories, clock)?,
        optimal_cost: 0.5 * gaussian_w2(0.0, 1.0, cfg.target_mean, 1.0)?.powi(2),
        initial_hj: initial.hj,
        final_hj: last.hj,
        terminal_kl: last.kl,
    };
    Ok((bank, report))
}
