//! Differentiable latent rollout under a weighted mixture of potentials.
//!
//! With weights `w` (one-hot in the supervised case) each step uses
//! `v = sum_j w_j grad u^j` and `H = sum_j w_j hess u^j`; the HJ penalty is
//! `sum_j w_j hj_j`. The backward pass is hand-written and returns adjoints for
//! `z_0`, `log q_0`, and the weights, accumulating parameter gradients into a bank.

use crate::error::{Error, Result};
use crate::potential::{dot, FieldAdjoint, FieldPoint, PotentialBank};
use crate::real::{lit, Real};

use super::{step_log_det, FlowClock, FlowState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutOptions {
    pub steps: usize,
    pub clock: FlowClock,
    /// Weight of the `|grad u(z_0, 0)|^2` initial-condition term.
    pub hj_initial_weight: f64,
    pub compute_hj: bool,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self {
            steps: 1,
            clock: FlowClock::default(),
            hj_initial_weight: 1.0,
            compute_hj: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rollout<R> {
    pub weights: Vec<R>,
    pub states: Vec<FlowState<R>>,
    /// Per-potential HJ losses; zero for potentials outside the active set.
    pub hj_parts: Vec<R>,
    /// `sum_j w_j hj_j`.
    pub hj: R,
    options: RolloutOptions,
    active: Vec<usize>,
    points: Vec<Vec<Option<FieldPoint<R>>>>,
    inverses: Vec<Vec<R>>,
}

/// Upstream adjoints of the rollout outputs.
#[derive(Debug, Clone)]
pub struct RolloutAdjoint<R> {
    pub z: Vec<Vec<R>>,
    pub log_q: Vec<R>,
    pub hj: R,
}

impl<R: Real> RolloutAdjoint<R> {
    pub fn zeros(steps: usize, dim: usize) -> Self {
        Self {
            z: vec![vec![R::zero(); dim]; steps + 1],
            log_q: vec![R::zero(); steps + 1],
            hj: R::zero(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RolloutGradient<R> {
    pub z0: Vec<R>,
    pub log_q0: R,
    pub weights: Vec<R>,
}

impl<R: Real> Rollout<R> {
    /// Roll `z0` forward. With `weight_gradients` every potential is evaluated
    /// so that adjoints for all weights are available; otherwise only those
    /// with non-zero weight are.
    pub fn run(
        bank: &PotentialBank<R>,
        weights: &[R],
        z0: &[R],
        log_q0: R,
        options: RolloutOptions,
        weight_gradients: bool,
    ) -> Result<Self> {
        let k_total = bank.num_potentials();
        let d = bank.latent_dim;
        if weights.len() != k_total {
            return Err(Error::shape("mixture weights", k_total, weights.len()));
        }
        if z0.len() != d {
            return Err(Error::shape("initial latent", d, z0.len()));
        }
        let active: Vec<usize> = (0..k_total)
            .filter(|&j| weight_gradients || weights[j] != R::zero())
            .collect();
        let steps = options.steps;
        let clock = options.clock;
        let dt = lit::<R>(clock.dt);
        let mut states = Vec::with_capacity(steps + 1);
        states.push(FlowState {
            z: z0.to_vec(),
            log_q: log_q0,
            t: 0,
        });
        let mut points = Vec::with_capacity(steps + 1);
        let mut inverses = Vec::with_capacity(steps);
        for t in 0..=steps {
            let time = clock.time::<R>(t);
            let need_step = t < steps;
            let need_eval = need_step || options.compute_hj;
            let z = states[t].z.clone();
            let mut row = Vec::with_capacity(active.len());
            for &j in &active {
                row.push(if need_eval {
                    Some(bank.field_point(j, &z, time, need_step, options.compute_hj && t >= 1)?)
                } else {
                    None
                });
            }
            if need_step {
                let mut v = vec![R::zero(); d];
                let mut h = vec![R::zero(); d * d];
                for (p, &j) in row.iter().zip(&active) {
                    let p = p.as_ref().expect("evaluated");
                    let w = weights[j];
                    if w == R::zero() {
                        continue;
                    }
                    for (a, &b) in v.iter_mut().zip(&p.velocity) {
                        *a += w * b;
                    }
                    for (a, &b) in h.iter_mut().zip(p.hessian.as_ref().expect("hessian")) {
                        *a += w * b;
                    }
                }
                let (log_det, lu) = step_log_det(&h, d, dt, t)?;
                inverses.push(lu.inverse());
                let next_z = z.iter().zip(&v).map(|(&a, &b)| a + dt * b).collect();
                let log_q = states[t].log_q - log_det;
                if !log_q.is_finite() {
                    return Err(Error::NonFinite(format!("log-density after step {t}")));
                }
                states.push(FlowState {
                    z: next_z,
                    log_q,
                    t: t + 1,
                });
            }
            points.push(row);
        }

        let mut hj_parts = vec![R::zero(); k_total];
        let mut hj = R::zero();
        if options.compute_hj {
            let w0 = lit::<R>(options.hj_initial_weight);
            for (idx, &j) in active.iter().enumerate() {
                let mut residual_sq = R::zero();
                for row in points.iter().skip(1) {
                    let r = row[idx].as_ref().expect("evaluated").hj_residual();
                    residual_sq += r * r;
                }
                let mut part = if steps > 0 {
                    residual_sq / lit::<R>(steps as f64)
                } else {
                    R::zero()
                };
                let v0 = &points[0][idx].as_ref().expect("evaluated").velocity;
                part += w0 * dot(v0, v0);
                hj_parts[j] = part;
                hj += weights[j] * part;
            }
        }
        Ok(Self {
            weights: weights.to_vec(),
            states,
            hj_parts,
            hj,
            options,
            active,
            points,
            inverses,
        })
    }

    pub fn steps(&self) -> usize {
        self.options.steps
    }

    /// Mixture velocity used for the step leaving frame `t` (`t < T`).
    pub fn velocity(&self, t: usize) -> Vec<R> {
        let d = self.states[0].z.len();
        let mut v = vec![R::zero(); d];
        for (p, &j) in self.points[t].iter().zip(&self.active) {
            if let Some(p) = p {
                for (a, &b) in v.iter_mut().zip(&p.velocity) {
                    *a += self.weights[j] * b;
                }
            }
        }
        v
    }

    pub fn backward(
        &self,
        bank: &PotentialBank<R>,
        adj: &RolloutAdjoint<R>,
        grads: &mut PotentialBank<R>,
    ) -> RolloutGradient<R> {
        let steps = self.options.steps;
        let d = bank.latent_dim;
        let dt = lit::<R>(self.options.clock.dt);
        let two = lit::<R>(2.0);
        let w0 = lit::<R>(self.options.hj_initial_weight);
        let inv_steps = if steps > 0 {
            R::one() / lit::<R>(steps as f64)
        } else {
            R::zero()
        };
        let hj_on = self.options.compute_hj;

        // log q_{t+1} = log q_t - L_t, so the running log q adjoint is a suffix sum
        let mut a_q = vec![R::zero(); steps + 1];
        let mut run = R::zero();
        for t in (0..=steps).rev() {
            run += adj.log_q[t];
            a_q[t] = run;
        }

        let mut d_weights = vec![R::zero(); bank.num_potentials()];
        if hj_on {
            for &j in &self.active {
                d_weights[j] += adj.hj * self.hj_parts[j];
            }
        }

        let mut a_next: Vec<R> = Vec::new();
        for t in (0..=steps).rev() {
            let mut acc = adj.z[t].clone();
            let g_logdet = if t < steps { -a_q[t + 1] } else { R::zero() };
            if t < steps {
                for (a, &b) in acc.iter_mut().zip(&a_next) {
                    *a += b;
                }
            }
            for (idx, &j) in self.active.iter().enumerate() {
                let Some(p) = &self.points[t][idx] else { continue };
                let w = self.weights[j];
                let mut dv = vec![R::zero(); d];
                let mut d_hess: Option<Vec<R>> = None;
                if t < steps {
                    d_weights[j] += dt * dot(&a_next, &p.velocity);
                    for (a, &b) in dv.iter_mut().zip(&a_next) {
                        *a = w * dt * b;
                    }
                    let inv = &self.inverses[t];
                    let h = p.hessian.as_ref().expect("hessian");
                    // d log det(M)/dM = M^{-T}
                    let mut inv_t = vec![R::zero(); d * d];
                    for r in 0..d {
                        for c in 0..d {
                            inv_t[r * d + c] = inv[c * d + r];
                        }
                    }
                    d_weights[j] += dt * g_logdet * dot(&inv_t, h);
                    if w != R::zero() && g_logdet != R::zero() {
                        let s = w * dt * g_logdet;
                        inv_t.iter_mut().for_each(|v| *v *= s);
                        d_hess = Some(inv_t);
                    }
                }
                let mut d_ut = R::zero();
                let mut d_m = R::zero();
                if hj_on && t >= 1 {
                    let c = adj.hj * w * two * inv_steps * p.hj_residual();
                    for (a, &b) in dv.iter_mut().zip(&p.velocity) {
                        *a += c * b;
                    }
                    d_ut = c;
                    // r = u_t + |v|^2/2 + m^2
                    d_m = c * two * p.force_raw;
                }
                if hj_on && t == 0 {
                    let c = adj.hj * w * w0 * two;
                    for (a, &b) in dv.iter_mut().zip(&p.velocity) {
                        *a += c * b;
                    }
                }
                if w == R::zero() {
                    continue;
                }
                let fa = FieldAdjoint {
                    velocity: Some(&dv),
                    hessian: d_hess.as_deref(),
                    potential_dt: d_ut,
                    force_raw: d_m,
                };
                for (a, b) in acc.iter_mut().zip(bank.field_vjp(p, &fa, grads)) {
                    *a += b;
                }
            }
            a_next = acc;
        }
        RolloutGradient {
            z0: a_next,
            log_q0: a_q[0],
            weights: d_weights,
        }
    }
}
