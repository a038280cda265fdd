use crate::error::{Error, Result};
use crate::real::{lit, Real};
use crate::tensor::DenseArray;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments, one pair per parameter array, in the order the
/// parameters are passed to [`adam_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<R> {
    pub config: AdamConfig,
    pub m: Vec<DenseArray<R>>,
    pub v: Vec<DenseArray<R>>,
    pub step: u64,
}

impl<R: Real> AdamState<R> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a DenseArray<R>>, config: AdamConfig) -> Self {
        let m: Vec<DenseArray<R>> = params.into_iter().map(|p| p.zeros_like()).collect();
        Self {
            config,
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// `p -= lr * m_hat / (sqrt(v_hat) + eps)` with bias-corrected moments.
pub fn adam_step<R: Real>(
    state: &mut AdamState<R>,
    params: &mut [&mut DenseArray<R>],
    grads: &[&DenseArray<R>],
    lr: f64,
) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != state.m.len() {
        return Err(Error::shape(
            "Adam parameter list",
            state.m.len(),
            params.len().max(grads.len()),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != state.m[i].shape() || g.shape() != state.m[i].shape() {
            return Err(Error::shape(
                format!("Adam parameter {i}"),
                format!("{:?}", state.m[i].shape()),
                format!("{:?} / {:?}", p.shape(), g.shape()),
            ));
        }
    }
    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let (b1, b2) = (lit::<R>(beta1), lit::<R>(beta2));
    let (c1, c2) = (lit::<R>(1.0 - beta1), lit::<R>(1.0 - beta2));
    let bc1 = lit::<R>(1.0 - beta1.powi(t));
    let bc2 = lit::<R>(1.0 - beta2.powi(t));
    let (lr, eps) = (lit::<R>(lr), lit::<R>(eps));
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((p, &g), m), v) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = b1 * *m + c1 * g;
            *v = b2 * *v + c2 * g * g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
        }
    }
    Ok(())
}
