//! The bank of `K` time-dependent potentials `u^k(z, t)`, their external forces
//! `f^k(z, t) = -m^k(z, t)^2`, and the diffusion coefficients `D_k = rho_k^2`.

use rand::Rng;

use crate::autodiff::{Activation, MlpParams, MlpTrace, TimeEmbedding, TraceLevel, DEFAULT_FREQUENCY_BASE};
use crate::error::{Error, Result};
use crate::real::{lit, Real};
use crate::tensor::DenseArray;

#[derive(Debug, Clone, PartialEq)]
pub struct BankConfig {
    pub num_potentials: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub frequency_base: f64,
    /// Scale applied to the initial output layer of every potential net.
    pub potential_output_scale: f64,
    /// Drop the external force (`f == 0`): ordinary rather than generalized HJ.
    pub ordinary_hj: bool,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self {
            num_potentials: 3,
            latent_dim: 16,
            hidden: vec![128, 128],
            time_embed_dim: 8,
            frequency_base: DEFAULT_FREQUENCY_BASE,
            potential_output_scale: 0.1,
            ordinary_hj: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialBank<R> {
    pub potentials: Vec<MlpParams<R>>,
    pub forces: Vec<MlpParams<R>>,
    /// `rho_k`; the diffusion coefficient is `rho_k^2`.
    pub diffusion_pre: DenseArray<R>,
    pub embedding: TimeEmbedding,
    pub latent_dim: usize,
    pub ordinary_hj: bool,
}

/// Everything one state needs from potential `k`: velocity, Hessian,
/// time derivative and force, plus the traces to differentiate them.
#[derive(Debug, Clone)]
pub struct FieldPoint<R> {
    pub k: usize,
    pub time: R,
    pub velocity: Vec<R>,
    /// `d x d`, present when requested.
    pub hessian: Option<Vec<R>>,
    pub potential_dt: R,
    /// Raw force-network output `m`; the force is `-m^2`.
    pub force_raw: R,
    potential_trace: MlpTrace<R>,
    force_trace: Option<MlpTrace<R>>,
    embed_dt: Vec<R>,
}

impl<R: Real> FieldPoint<R> {
    pub fn force(&self) -> R {
        -self.force_raw * self.force_raw
    }

    /// Generalized Hamilton-Jacobi residual `du/dt + |grad u|^2 / 2 - f`.
    pub fn hj_residual(&self) -> R {
        let kinetic: R = self.velocity.iter().map(|&v| v * v).sum::<R>() * lit(0.5);
        self.potential_dt + kinetic - self.force()
    }
}

/// Adjoints flowing into one [`FieldPoint`].
#[derive(Debug, Clone, Default)]
pub struct FieldAdjoint<'a, R> {
    pub velocity: Option<&'a [R]>,
    pub hessian: Option<&'a [R]>,
    pub potential_dt: R,
    pub force_raw: R,
}

impl<R: Real> PotentialBank<R> {
    pub fn new(config: &BankConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.num_potentials == 0 {
            return Err(Error::InvalidArgument("need at least one potential".into()));
        }
        if config.latent_dim == 0 {
            return Err(Error::InvalidArgument("latent dimension must be positive".into()));
        }
        let embedding = TimeEmbedding::new(config.time_embed_dim, config.frequency_base)?;
        let mut sizes = vec![config.latent_dim + config.time_embed_dim];
        sizes.extend_from_slice(&config.hidden);
        sizes.push(1);
        let mut potentials = Vec::with_capacity(config.num_potentials);
        let mut forces = Vec::with_capacity(config.num_potentials);
        for _ in 0..config.num_potentials {
            let mut u = MlpParams::xavier(&sizes, Activation::Tanh, Activation::Identity, rng);
            let scale = lit::<R>(config.potential_output_scale);
            if let Some(last) = u.layers.last_mut() {
                last.weight.data_mut().iter_mut().for_each(|w| *w *= scale);
            }
            potentials.push(u);
            forces.push(MlpParams::xavier(&sizes, Activation::Tanh, Activation::Identity, rng));
        }
        Ok(Self {
            potentials,
            forces,
            diffusion_pre: DenseArray::zeros(&[config.num_potentials]),
            embedding,
            latent_dim: config.latent_dim,
            ordinary_hj: config.ordinary_hj,
        })
    }

    pub fn num_potentials(&self) -> usize {
        self.potentials.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            potentials: self.potentials.iter().map(MlpParams::zeros_like).collect(),
            forces: self.forces.iter().map(MlpParams::zeros_like).collect(),
            diffusion_pre: self.diffusion_pre.zeros_like(),
            embedding: self.embedding,
            latent_dim: self.latent_dim,
            ordinary_hj: self.ordinary_hj,
        }
    }

    pub fn add_scaled(&mut self, other: &Self, scale: R) {
        for (a, b) in self.potentials.iter_mut().zip(&other.potentials) {
            a.add_scaled(b, scale);
        }
        for (a, b) in self.forces.iter_mut().zip(&other.forces) {
            a.add_scaled(b, scale);
        }
        self.diffusion_pre.add_scaled(&other.diffusion_pre, scale);
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &DenseArray<R>)> {
        let mut out = Vec::new();
        for (k, u) in self.potentials.iter().enumerate() {
            out.extend(u.named_params(&format!("{prefix}.potential{k}")));
        }
        for (k, f) in self.forces.iter().enumerate() {
            out.extend(f.named_params(&format!("{prefix}.force{k}")));
        }
        out.push((format!("{prefix}.diffusion_pre"), &self.diffusion_pre));
        out
    }

    pub fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut DenseArray<R>)> {
        let mut out = Vec::new();
        for (k, u) in self.potentials.iter_mut().enumerate() {
            out.extend(u.named_params_mut(&format!("{prefix}.potential{k}")));
        }
        for (k, f) in self.forces.iter_mut().enumerate() {
            out.extend(f.named_params_mut(&format!("{prefix}.force{k}")));
        }
        out.push((format!("{prefix}.diffusion_pre"), &mut self.diffusion_pre));
        out
    }

    pub fn check_index(&self, k: usize) -> Result<()> {
        if k >= self.num_potentials() {
            return Err(Error::Index {
                what: "potential",
                index: k,
                len: self.num_potentials(),
            });
        }
        Ok(())
    }

    fn network_input(&self, z: &[R], time: R) -> Result<Vec<R>> {
        if z.len() != self.latent_dim {
            return Err(Error::shape("latent vector", self.latent_dim, z.len()));
        }
        let mut input = z.to_vec();
        input.extend(self.embedding.embed(time));
        Ok(input)
    }

    pub fn potential_value(&self, k: usize, z: &[R], time: R) -> Result<R> {
        self.check_index(k)?;
        Ok(self.potentials[k].forward(&self.network_input(z, time)?)?[0])
    }

    /// `grad_z u^k`; the time-embedding block is excluded.
    pub fn potential_grad_z(&self, k: usize, z: &[R], time: R) -> Result<Vec<R>> {
        self.check_index(k)?;
        let mut g = self.potentials[k].grad_input(&self.network_input(z, time)?)?;
        g.truncate(self.latent_dim);
        Ok(g)
    }

    pub fn potential_hessian_z(&self, k: usize, z: &[R], time: R) -> Result<DenseArray<R>> {
        self.check_index(k)?;
        self.potentials[k].hessian_block(&self.network_input(z, time)?, self.latent_dim)
    }

    /// `du^k/dt` through the sinusoidal embedding.
    pub fn potential_dt(&self, k: usize, z: &[R], time: R) -> Result<R> {
        self.check_index(k)?;
        let g = self.potentials[k].grad_input(&self.network_input(z, time)?)?;
        Ok(dot(&g[self.latent_dim..], &self.embedding.embed_dt(time)))
    }

    /// Raw force-network output `m`; zero under the ordinary-HJ toggle.
    pub fn force_raw(&self, k: usize, z: &[R], time: R) -> Result<R> {
        self.check_index(k)?;
        if self.ordinary_hj {
            return Ok(R::zero());
        }
        Ok(self.forces[k].forward(&self.network_input(z, time)?)?[0])
    }

    /// `f^k(z, t) = -m^2 <= 0`.
    pub fn force_value(&self, k: usize, z: &[R], time: R) -> Result<R> {
        let m = self.force_raw(k, z, time)?;
        Ok(-m * m)
    }

    pub fn diffusion_coefficient(&self, k: usize) -> Result<R> {
        self.check_index(k)?;
        let rho = self.diffusion_pre.data()[k];
        Ok(rho * rho)
    }

    /// `dD_k / d rho_k = 2 rho_k`.
    pub fn diffusion_derivative(&self, k: usize) -> Result<R> {
        self.check_index(k)?;
        Ok(lit::<R>(2.0) * self.diffusion_pre.data()[k])
    }

    /// Evaluate everything a flow step or HJ residual needs at `(z, time)`.
    pub fn field_point(&self, k: usize, z: &[R], time: R, hessian: bool, force: bool) -> Result<FieldPoint<R>> {
        self.check_index(k)?;
        let input = self.network_input(z, time)?;
        let level = if hessian {
            TraceLevel::Hessian(self.latent_dim)
        } else {
            TraceLevel::Gradient
        };
        let potential_trace = self.potentials[k].trace(&input, level)?;
        let embed_dt = self.embedding.embed_dt(time);
        let potential_dt = dot(&potential_trace.grad[self.latent_dim..], &embed_dt);
        let velocity = potential_trace.grad[..self.latent_dim].to_vec();
        let force_trace = if force && !self.ordinary_hj {
            Some(self.forces[k].trace(&input, TraceLevel::Value)?)
        } else {
            None
        };
        let force_raw = force_trace.as_ref().map_or(R::zero(), |t| t.output[0]);
        Ok(FieldPoint {
            k,
            time,
            velocity,
            hessian: hessian.then(|| potential_trace.hessian.clone()),
            potential_dt,
            force_raw,
            potential_trace,
            force_trace,
            embed_dt,
        })
    }

    /// Pull adjoints of a [`FieldPoint`]'s outputs back to `grads` and return `dL/dz`.
    pub fn field_vjp(&self, point: &FieldPoint<R>, adj: &FieldAdjoint<'_, R>, grads: &mut Self) -> Vec<R> {
        let d = self.latent_dim;
        let k = point.k;
        let mut d_input = vec![R::zero(); d + self.embedding.dim()];
        if let Some(v) = adj.velocity {
            d_input[..d].copy_from_slice(v);
        }
        for (dst, &e) in d_input[d..].iter_mut().zip(&point.embed_dt) {
            *dst = adj.potential_dt * e;
        }
        let touches_grad = adj.velocity.is_some() || adj.potential_dt != R::zero();
        let mut d_z = if touches_grad || adj.hessian.is_some() {
            let g = point.potential_trace.vjp(
                &self.potentials[k],
                &[R::zero()],
                Some(&d_input),
                adj.hessian,
                &mut grads.potentials[k],
            );
            g[..d].to_vec()
        } else {
            vec![R::zero(); d]
        };
        if let Some(ft) = &point.force_trace {
            if adj.force_raw != R::zero() {
                let g = ft.vjp(&self.forces[k], &[adj.force_raw], None, None, &mut grads.forces[k]);
                for (a, b) in d_z.iter_mut().zip(&g[..d]) {
                    *a += *b;
                }
            }
        }
        d_z
    }
}

pub(crate) fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::{central_difference, relative_max_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bank(seed: u64) -> PotentialBank<f64> {
        let cfg = BankConfig {
            num_potentials: 2,
            latent_dim: 3,
            hidden: vec![7, 5],
            time_embed_dim: 4,
            potential_output_scale: 1.0,
            ..BankConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = PotentialBank::new(&cfg, &mut rng).unwrap();
        for net in b.potentials.iter_mut().chain(b.forces.iter_mut()) {
            for l in &mut net.layers {
                l.bias.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3));
            }
        }
        b
    }

    fn zero_nets(b: &mut PotentialBank<f64>) {
        for net in b.potentials.iter_mut().chain(b.forces.iter_mut()) {
            for l in &mut net.layers {
                l.weight.fill(0.0);
                l.bias.fill(0.0);
            }
        }
    }

    #[test]
    fn zero_nets_give_zero_everything() {
        let mut b = bank(1);
        zero_nets(&mut b);
        let z = [0.3, -0.2, 1.1];
        assert_eq!(b.potential_value(0, &z, 2.0).unwrap(), 0.0);
        assert_eq!(b.potential_grad_z(0, &z, 2.0).unwrap(), vec![0.0; 3]);
        assert!(b
            .potential_hessian_z(1, &z, 2.0)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        assert_eq!(b.potential_dt(1, &z, 2.0).unwrap(), 0.0);
        assert_eq!(b.force_value(0, &z, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn index_out_of_range_is_error() {
        let b = bank(2);
        assert!(matches!(
            b.potential_value(2, &[0.0; 3], 0.0),
            Err(Error::Index { index: 2, len: 2, .. })
        ));
    }

    #[test]
    fn evaluation_is_deterministic() {
        let b = bank(3);
        let z = [0.1, 0.2, 0.3];
        let a = b.potential_value(0, &z, 1.0).unwrap();
        let c = b.potential_value(0, &z, 1.0).unwrap();
        assert_eq!(a.to_bits(), c.to_bits());
    }

    #[test]
    fn gradient_ignores_time_when_z_pathway_is_zero() {
        let mut b = bank(4);
        // zero first-layer columns reading z
        let net = &mut b.potentials[0];
        let n_in = net.layers[0].in_dim();
        for i in 0..net.layers[0].out_dim() {
            for j in 0..3 {
                net.layers[0].weight.data_mut()[i * n_in + j] = 0.0;
            }
        }
        let z = [0.4, -0.6, 0.2];
        assert_eq!(b.potential_grad_z(0, &z, 0.0).unwrap(), vec![0.0; 3]);
        assert_eq!(b.potential_grad_z(0, &z, 5.5).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn z_gradient_matches_finite_differences() {
        let b = bank(5);
        let z = [0.2, -0.5, 0.7];
        let g = b.potential_grad_z(1, &z, 3.0).unwrap();
        let fd: Vec<f64> = (0..3)
            .map(|i| {
                central_difference(
                    |s| {
                        let mut zz = z;
                        zz[i] = s;
                        b.potential_value(1, &zz, 3.0).unwrap()
                    },
                    z[i],
                    1e-5,
                )
            })
            .collect();
        assert!(relative_max_error(&g, &fd) < 1e-6);
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let b = bank(6);
        let z = [0.2, -0.5, 0.7];
        let h = b.potential_hessian_z(0, &z, 1.0).unwrap();
        for j in 0..3 {
            let mut zp = z;
            let mut zm = z;
            zp[j] += 1e-5;
            zm[j] -= 1e-5;
            let gp = b.potential_grad_z(0, &zp, 1.0).unwrap();
            let gm = b.potential_grad_z(0, &zm, 1.0).unwrap();
            for i in 0..3 {
                assert!((h.at(&[i, j]) - (gp[i] - gm[i]) / 2e-5).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn time_derivative_matches_finite_differences() {
        let b = bank(7);
        let z = [0.9, 0.1, -0.3];
        for &t in &[0.5, 2.0, 7.0] {
            let dt = b.potential_dt(0, &z, t).unwrap();
            let fd = central_difference(|s| b.potential_value(0, &z, s).unwrap(), t, 1e-5);
            assert!((dt - fd).abs() <= 1e-6 * fd.abs().max(1e-3), "{dt} vs {fd}");
        }
    }

    #[test]
    fn cosine_only_net_has_zero_time_derivative_at_origin() {
        let mut b = bank(8);
        let net = &mut b.potentials[0];
        let n_in = net.layers[0].in_dim();
        for i in 0..net.layers[0].out_dim() {
            for j in 0..n_in {
                // keep only cosine channels (odd offsets in the embedding block)
                let keep = j >= 3 && (j - 3) % 2 == 1;
                if !keep {
                    net.layers[0].weight.data_mut()[i * n_in + j] = 0.0;
                }
            }
        }
        assert_eq!(b.potential_dt(0, &[0.3, 0.2, 0.1], 0.0).unwrap(), 0.0);
    }

    #[test]
    fn force_is_negative_square_of_raw_output() {
        let mut b = bank(9);
        zero_nets(&mut b);
        // raw output m = bias of the last layer
        b.forces[1].layers.last_mut().unwrap().bias.data_mut()[0] = 3.0;
        assert_eq!(b.force_value(1, &[0.0; 3], 0.0).unwrap(), -9.0);
        b.ordinary_hj = true;
        assert_eq!(b.force_value(1, &[0.0; 3], 0.0).unwrap(), 0.0);
    }

    #[test]
    fn diffusion_starts_at_zero_and_squares() {
        let mut b = bank(10);
        assert_eq!(b.diffusion_coefficient(0).unwrap(), 0.0);
        assert_eq!(b.diffusion_coefficient(1).unwrap(), 0.0);
        b.diffusion_pre.data_mut()[0] = 0.5;
        assert_eq!(b.diffusion_coefficient(0).unwrap(), 0.25);
        let fd = central_difference(
            |r| {
                let mut bb = b.clone();
                bb.diffusion_pre.data_mut()[0] = r;
                bb.diffusion_coefficient(0).unwrap()
            },
            0.5,
            1e-5,
        );
        assert!((b.diffusion_derivative(0).unwrap() - fd).abs() < 1e-9);
    }

    #[test]
    fn field_point_residual_is_consistent() {
        let b = bank(11);
        let z = [0.3, 0.3, -0.1];
        let p = b.field_point(0, &z, 2.0, true, true).unwrap();
        let v = b.potential_grad_z(0, &z, 2.0).unwrap();
        let expect = b.potential_dt(0, &z, 2.0).unwrap() + 0.5 * dot(&v, &v) - b.force_value(0, &z, 2.0).unwrap();
        assert!((p.hj_residual() - expect).abs() < 1e-14);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn force_never_positive(seed in 0u64..1000, z in prop::collection::vec(-5.0f64..5.0, 3), t in 0.0f64..50.0) {
                let b = bank(seed);
                for k in 0..2 {
                    prop_assert!(b.force_value(k, &z, t).unwrap() <= 0.0);
                }
            }

            #[test]
            fn hessian_exactly_symmetric(seed in 0u64..1000, z in prop::collection::vec(-3.0f64..3.0, 3), t in 0.0f64..10.0) {
                let b = bank(seed);
                let h = b.potential_hessian_z(0, &z, t).unwrap();
                for i in 0..3 {
                    for j in 0..3 {
                        prop_assert!((h.at(&[i, j]) - h.at(&[j, i])).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
