//! Independent transport oracles: grid solvers for the continuity and heat
//! equations, closed-form Gaussian W2, the Benamou-Brenier action of learned
//! flows, and a small 1D transport experiment.

pub mod bb;
pub mod grid;

pub use bb::{run_bb_demo, BbConfig, BbReport};
pub use grid::{cfl_substeps, grid_advect_density, grid_diffuse_density, DensityGrid};

use crate::error::{Error, Result};
use crate::flow::{evolve_field, BankField, FlowClock, FlowState, GradientField};
use crate::hj::hj_residual;
use crate::potential::PotentialBank;
use crate::real::{to_f64, Real};

/// W2 between `N(mu0, var0)` and `N(mu1, var1)` on the line.
pub fn gaussian_w2(mu0: f64, var0: f64, mu1: f64, var1: f64) -> Result<f64> {
    gaussian_w2_diag(&[mu0], &[var0], &[mu1], &[var1])
}

/// W2 between Gaussians with diagonal covariances; zero variances (point
/// masses along an axis) are allowed.
pub fn gaussian_w2_diag(mu0: &[f64], var0: &[f64], mu1: &[f64], var1: &[f64]) -> Result<f64> {
    let d = mu0.len();
    if var0.len() != d || mu1.len() != d || var1.len() != d {
        return Err(Error::shape(
            "Gaussian parameters",
            d,
            var0.len().min(mu1.len()).min(var1.len()),
        ));
    }
    if let Some(v) = var0.iter().chain(var1).find(|&&v| !(v >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "variances must be non-negative, got {v}"
        )));
    }
    let sq: f64 = (0..d)
        .map(|i| (mu0[i] - mu1[i]).powi(2) + (var0[i].sqrt() - var1[i].sqrt()).powi(2))
        .sum();
    Ok(sq.sqrt())
}

/// Monte-Carlo Benamou-Brenier action: the mean over trajectories of
/// `sum_{t<T} |v(z_t, t dt)|^2 / 2 * dt`. Use `dt = 1 / T` to read flows as
/// paths over unit time.
pub fn transport_cost_field<R: Real>(
    field: &impl GradientField<R>,
    trajectories: &[Vec<FlowState<R>>],
    clock: FlowClock,
) -> Result<f64> {
    if trajectories.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for states in trajectories {
        for s in &states[..states.len().saturating_sub(1)] {
            let v = field.velocity(&s.z, clock.time(s.t))?;
            total += 0.5 * v.iter().map(|&x| to_f64(x * x)).sum::<f64>() * clock.dt;
        }
    }
    Ok(total / trajectories.len() as f64)
}

pub fn transport_cost<R: Real>(
    bank: &PotentialBank<R>,
    k: usize,
    trajectories: &[Vec<FlowState<R>>],
    clock: FlowClock,
) -> Result<f64> {
    bank.check_index(k)?;
    transport_cost_field(&BankField { bank, k }, trajectories, clock)
}

/// Particle-tracked densities against the grid solution after `steps` flow steps.
#[derive(Debug, Clone)]
pub struct FlowGridComparison {
    /// Largest `|q_T(z_T) - rho_grid(z_T)|` over particles.
    pub max_abs_error: f64,
    /// Trapezoid integral of the tracked density over the particle positions.
    pub flow_mass: f64,
    pub grid_mass: f64,
    pub grid: DensityGrid,
    /// Final particle positions and tracked densities.
    pub particles: Vec<(f64, f64)>,
}

/// Push `N(0, 1)` through a 1D field twice: particles with log-det tracking,
/// and the grid continuity equation with the velocity frozen over each step.
pub fn compare_flow_with_grid(
    field: &impl GradientField<f64>,
    steps: usize,
    clock: FlowClock,
    cells: usize,
    domain: (f64, f64),
    particles: usize,
) -> Result<FlowGridComparison> {
    if field.dim() != 1 {
        return Err(Error::shape("field dimension", 1, field.dim()));
    }
    let (lo, hi) = domain;
    let log_n = |x: f64| -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut grid = DensityGrid::from_density_1d(lo, hi, cells, |x| log_n(x).exp())?;
    for t in 0..steps {
        let time = clock.time::<f64>(t);
        let v = |x: &[f64]| field.velocity(x, time).expect("1D velocity");
        let vmax = (0..cells).map(|i| v(&[grid.center(0, i)])[0].abs()).fold(0.0, f64::max);
        let n = grid::cfl_substeps(vmax, grid.h, clock.dt);
        grid = grid_advect_density(&grid, v, clock.dt / n as f64, n)?;
    }
    // particles start on an even lattice covering the bulk of N(0, 1)
    let (a, b) = (lo.max(-6.0), hi.min(6.0));
    let mut finals = Vec::with_capacity(particles);
    for j in 0..particles {
        let x0 = a + (b - a) * (j as f64 + 0.5) / particles as f64;
        let states = evolve_field(field, &[x0], log_n(x0), steps, clock)?;
        let last = states.last().expect("non-empty");
        finals.push((last.z[0], last.log_q.exp()));
    }
    finals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let flow_mass = finals
        .windows(2)
        .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
        .sum();
    let max_abs_error = finals
        .iter()
        .filter(|(x, _)| *x > lo + grid.h && *x < hi - grid.h)
        .map(|&(x, q)| (q - grid.density_at(x)).abs())
        .fold(0.0, f64::max);
    Ok(FlowGridComparison {
        max_abs_error,
        flow_mass,
        grid_mass: grid.total_mass(),
        grid,
        particles: finals,
    })
}

/// Transport diagnostics of one learned flow over a cloud of starting latents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportRow {
    pub k: usize,
    /// Mean discrete action `sum_t |v|^2 dt / 2`.
    pub transport_cost: f64,
    /// `W2^2 / 2` between diagonal Gaussians fitted to the start and end clouds.
    pub gaussian_half_w2: f64,
    /// Mean squared HJ residual at `t = 1..T`.
    pub hj_residual: f64,
}

pub fn latent_transport_report<R: Real>(
    bank: &PotentialBank<R>,
    z0s: &[Vec<R>],
    steps: usize,
    clock: FlowClock,
) -> Result<Vec<TransportRow>> {
    if z0s.len() < 2 {
        return Err(Error::InvalidArgument(
            "transport report needs at least two latents".into(),
        ));
    }
    (0..bank.num_potentials())
        .map(|k| {
            let field = BankField { bank, k };
            let trajs: Vec<Vec<FlowState<R>>> = z0s
                .iter()
                .map(|z| evolve_field(&field, z, R::zero(), steps, clock))
                .collect::<Result<_>>()?;
            let mut hj = 0.0;
            for s in trajs.iter().flat_map(|t| &t[1..]) {
                hj += to_f64(hj_residual(bank, k, &s.z, clock.time(s.t))?).powi(2);
            }
            let (m0, v0) = diag_moments(trajs.iter().map(|t| &t[0].z[..]));
            let (m1, v1) = diag_moments(trajs.iter().map(|t| &t[steps].z[..]));
            let w2 = gaussian_w2_diag(&m0, &v0, &m1, &v1)?;
            Ok(TransportRow {
                k,
                transport_cost: transport_cost_field(&field, &trajs, clock)?,
                gaussian_half_w2: 0.5 * w2 * w2,
                hj_residual: hj / (trajs.len() * steps).max(1) as f64,
            })
        })
        .collect()
}

fn diag_moments<'a, R: Real>(points: impl Iterator<Item = &'a [R]> + Clone) -> (Vec<f64>, Vec<f64>) {
    let n = points.clone().count() as f64;
    let d = points.clone().next().map_or(0, |p| p.len());
    let mut mean = vec![0.0; d];
    for p in points.clone() {
        mean.iter_mut().zip(p).for_each(|(m, &x)| *m += to_f64(x) / n);
    }
    let mut var = vec![0.0; d];
    for p in points {
        var.iter_mut()
            .zip(p)
            .zip(&mean)
            .for_each(|((v, &x), m)| *v += (to_f64(x) - m).powi(2) / n);
    }
    (mean, var)
}
