//! Latent advection `z' = z + dt grad u` with tracked log-density, and the
//! diffused Gaussian prior `N(0, (1 + 2 D t) I)`.

mod rollout;

pub use rollout::{Rollout, RolloutAdjoint, RolloutGradient, RolloutOptions};

use crate::error::{Error, Result};
use crate::linalg::Lu;
use crate::potential::PotentialBank;
use crate::real::{lit, to_f64, Real};

/// Smallest admissible `det(I + dt H)` for a flow step.
pub const MIN_STEP_DETERMINANT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState<R> {
    pub z: Vec<R>,
    pub log_q: R,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrajectory<R> {
    pub states: Vec<FlowState<R>>,
    pub k: usize,
}

impl<R> FlowTrajectory<R> {
    pub fn steps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn last(&self) -> &FlowState<R> {
        self.states.last().expect("trajectory holds at least z_0")
    }
}

/// Maps integer frame indices to the continuous time fed to the potentials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowClock {
    pub dt: f64,
}

impl Default for FlowClock {
    fn default() -> Self {
        Self { dt: 1.0 }
    }
}

impl FlowClock {
    pub fn new(dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!("time step must be > 0, got {dt}")));
        }
        Ok(Self { dt })
    }

    pub fn time<R: Real>(&self, step: usize) -> R {
        lit(step as f64 * self.dt)
    }
}

/// A velocity field `v = grad u` together with its Jacobian `H`.
pub trait GradientField<R: Real> {
    fn dim(&self) -> usize;
    fn velocity(&self, z: &[R], time: R) -> Result<Vec<R>>;
    /// Row-major `d x d`.
    fn jacobian(&self, z: &[R], time: R) -> Result<Vec<R>>;
}

/// Potential `k` of a bank.
#[derive(Debug, Clone, Copy)]
pub struct BankField<'a, R> {
    pub bank: &'a PotentialBank<R>,
    pub k: usize,
}

impl<R: Real> GradientField<R> for BankField<'_, R> {
    fn dim(&self) -> usize {
        self.bank.latent_dim
    }

    fn velocity(&self, z: &[R], time: R) -> Result<Vec<R>> {
        self.bank.potential_grad_z(self.k, z, time)
    }

    fn jacobian(&self, z: &[R], time: R) -> Result<Vec<R>> {
        Ok(self.bank.potential_hessian_z(self.k, z, time)?.into_data())
    }
}

/// Sum of several potentials of one bank; the empty set is the identity flow.
#[derive(Debug, Clone)]
pub struct SuperposedField<'a, R> {
    pub bank: &'a PotentialBank<R>,
    pub ks: Vec<usize>,
}

impl<R: Real> GradientField<R> for SuperposedField<'_, R> {
    fn dim(&self) -> usize {
        self.bank.latent_dim
    }

    fn velocity(&self, z: &[R], time: R) -> Result<Vec<R>> {
        let mut v = vec![R::zero(); z.len()];
        for &k in &self.ks {
            for (a, b) in v.iter_mut().zip(self.bank.potential_grad_z(k, z, time)?) {
                *a += b;
            }
        }
        Ok(v)
    }

    fn jacobian(&self, z: &[R], time: R) -> Result<Vec<R>> {
        let mut h = vec![R::zero(); z.len() * z.len()];
        for &k in &self.ks {
            for (a, b) in h.iter_mut().zip(self.bank.potential_hessian_z(k, z, time)?.data()) {
                *a += *b;
            }
        }
        Ok(h)
    }
}

/// `u(z) = a |z|^2 / 2`: velocity `a z`, Jacobian `a I`.
#[derive(Debug, Clone, Copy)]
pub struct ScalingField<R> {
    pub a: R,
    pub dim: usize,
}

impl<R: Real> GradientField<R> for ScalingField<R> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity(&self, z: &[R], _time: R) -> Result<Vec<R>> {
        Ok(z.iter().map(|&v| self.a * v).collect())
    }

    fn jacobian(&self, _z: &[R], _time: R) -> Result<Vec<R>> {
        let mut h = vec![R::zero(); self.dim * self.dim];
        for i in 0..self.dim {
            h[i * self.dim + i] = self.a;
        }
        Ok(h)
    }
}

/// Spatially uniform velocity with zero Jacobian; `zeros` gives the
/// `grad u = 0` baseline flow.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantField<R> {
    pub velocity: Vec<R>,
}

impl<R: Real> ConstantField<R> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            velocity: vec![R::zero(); dim],
        }
    }
}

impl<R: Real> GradientField<R> for ConstantField<R> {
    fn dim(&self) -> usize {
        self.velocity.len()
    }

    fn velocity(&self, _z: &[R], _time: R) -> Result<Vec<R>> {
        Ok(self.velocity.clone())
    }

    fn jacobian(&self, _z: &[R], _time: R) -> Result<Vec<R>> {
        Ok(vec![R::zero(); self.velocity.len() * self.velocity.len()])
    }
}

/// `log det(I + dt H)`, failing when the determinant is at or below the guard.
pub fn step_log_det<R: Real>(jacobian: &[R], dim: usize, dt: R, step: usize) -> Result<(R, Lu<R>)> {
    let mut m: Vec<R> = jacobian.iter().map(|&h| dt * h).collect();
    for i in 0..dim {
        m[i * dim + i] += R::one();
    }
    let lu = Lu::factor(&m, dim);
    let (sign, log_abs) = lu.log_abs_det();
    let det = to_f64(sign) * to_f64(log_abs).exp();
    if !(det > MIN_STEP_DETERMINANT) {
        return Err(Error::NonInvertibleStep { step, det });
    }
    Ok((log_abs, lu))
}

pub fn advect_field<R: Real>(
    field: &impl GradientField<R>,
    state: &FlowState<R>,
    clock: FlowClock,
) -> Result<FlowState<R>> {
    let d = field.dim();
    if state.z.len() != d {
        return Err(Error::shape("flow state", d, state.z.len()));
    }
    let time = clock.time::<R>(state.t);
    let dt = lit::<R>(clock.dt);
    let v = field.velocity(&state.z, time)?;
    let h = field.jacobian(&state.z, time)?;
    let (log_det, _) = step_log_det(&h, d, dt, state.t)?;
    let z = state.z.iter().zip(&v).map(|(&z, &v)| z + dt * v).collect();
    let log_q = state.log_q - log_det;
    if !log_q.is_finite() {
        return Err(Error::NonFinite(format!("log-density after step {}", state.t)));
    }
    Ok(FlowState {
        z,
        log_q,
        t: state.t + 1,
    })
}

pub fn evolve_field<R: Real>(
    field: &impl GradientField<R>,
    z0: &[R],
    log_q0: R,
    steps: usize,
    clock: FlowClock,
) -> Result<Vec<FlowState<R>>> {
    let mut states = Vec::with_capacity(steps + 1);
    states.push(FlowState {
        z: z0.to_vec(),
        log_q: log_q0,
        t: 0,
    });
    for _ in 0..steps {
        let next = advect_field(field, states.last().expect("non-empty"), clock)?;
        states.push(next);
    }
    Ok(states)
}

pub fn advect<R: Real>(
    bank: &PotentialBank<R>,
    k: usize,
    state: &FlowState<R>,
    clock: FlowClock,
) -> Result<FlowState<R>> {
    bank.check_index(k)?;
    advect_field(&BankField { bank, k }, state, clock)
}

pub fn evolve_posterior<R: Real>(
    bank: &PotentialBank<R>,
    k: usize,
    z0: &[R],
    log_q0: R,
    steps: usize,
    clock: FlowClock,
) -> Result<FlowTrajectory<R>> {
    bank.check_index(k)?;
    Ok(FlowTrajectory {
        states: evolve_field(&BankField { bank, k }, z0, log_q0, steps, clock)?,
        k,
    })
}

/// Log-density of `N(0, (1 + 2 D time) I)` at `z`.
pub fn diffused_gaussian_logpdf<R: Real>(diffusion: R, z: &[R], time: R) -> R {
    let var = R::one() + lit::<R>(2.0) * diffusion * time;
    let sq: R = z.iter().map(|&v| v * v).sum();
    let d = lit::<R>(z.len() as f64);
    -lit::<R>(0.5) * d * (lit::<R>(2.0 * std::f64::consts::PI) * var).ln() - sq / (lit::<R>(2.0) * var)
}

pub fn prior_logpdf<R: Real>(bank: &PotentialBank<R>, k: usize, z: &[R], time: R) -> Result<R> {
    let diffusion = bank.diffusion_coefficient(k)?;
    if z.len() != bank.latent_dim {
        return Err(Error::shape("latent vector", bank.latent_dim, z.len()));
    }
    Ok(diffused_gaussian_logpdf(diffusion, z, time))
}

/// Single-sample estimate `log q(z_t) - log p(z_t)`.
pub fn step_kl_term<R: Real>(bank: &PotentialBank<R>, k: usize, state: &FlowState<R>, clock: FlowClock) -> Result<R> {
    Ok(state.log_q - prior_logpdf(bank, k, &state.z, clock.time(state.t))?)
}

/// Sum of the per-step KL estimates over `t = 1..T` with adjoints.
#[derive(Debug, Clone)]
pub struct StepKl<R> {
    pub value: R,
    pub d_z: Vec<Vec<R>>,
    pub d_log_q: Vec<R>,
    pub d_diffusion: R,
}

pub fn step_kl_sum<R: Real>(states: &[FlowState<R>], diffusion: R, clock: FlowClock) -> StepKl<R> {
    let two = lit::<R>(2.0);
    let mut value = R::zero();
    let mut d_z = Vec::with_capacity(states.len());
    let mut d_log_q = Vec::with_capacity(states.len());
    let mut d_diffusion = R::zero();
    for s in states {
        if s.t == 0 {
            d_z.push(vec![R::zero(); s.z.len()]);
            d_log_q.push(R::zero());
            continue;
        }
        let time = clock.time::<R>(s.t);
        let var = R::one() + two * diffusion * time;
        let sq: R = s.z.iter().map(|&v| v * v).sum();
        let d = lit::<R>(s.z.len() as f64);
        value += s.log_q - diffused_gaussian_logpdf(diffusion, &s.z, time);
        d_z.push(s.z.iter().map(|&v| v / var).collect());
        d_log_q.push(R::one());
        // d(-log p)/dvar = d/(2 var) - |z|^2/(2 var^2), dvar/dD = 2 time
        d_diffusion += (d / (two * var) - sq / (two * var * var)) * two * time;
    }
    StepKl {
        value,
        d_z,
        d_log_q,
        d_diffusion,
    }
}
