//! Hamilton-Jacobi residual `du/dt + |grad u|^2 / 2 - f` and its collocation loss
//! along posterior trajectories.

use crate::error::{Error, Result};
use crate::flow::{FlowClock, FlowTrajectory};
use crate::potential::{dot, PotentialBank};
use crate::real::{lit, Real};

pub fn hj_residual<R: Real>(bank: &PotentialBank<R>, k: usize, z: &[R], time: R) -> Result<R> {
    Ok(bank.field_point(k, z, time, false, true)?.hj_residual())
}

/// `(1/T) sum_{t=1..T} r(z_t, t)^2 + w0 |grad u(z_0, 0)|^2`.
pub fn hj_loss<R: Real>(
    bank: &PotentialBank<R>,
    k: usize,
    trajectory: &FlowTrajectory<R>,
    clock: FlowClock,
    initial_weight: f64,
) -> Result<R> {
    let steps = trajectory.steps();
    if steps < 1 {
        return Err(Error::InvalidArgument("HJ loss needs a trajectory with T >= 1".into()));
    }
    let mut sum = R::zero();
    for s in &trajectory.states[1..] {
        let r = hj_residual(bank, k, &s.z, clock.time(s.t))?;
        sum += r * r;
    }
    let v0 = bank.potential_grad_z(k, &trajectory.states[0].z, R::zero())?;
    Ok(sum / lit::<R>(steps as f64) + lit::<R>(initial_weight) * dot(&v0, &v0))
}
