//! Small feed-forward networks with exact analytic derivatives.
//!
//! Besides the usual value and parameter gradients, a [`MlpTrace`] exposes the
//! input gradient and the input Hessian of a scalar-output network, and can
//! pull adjoints of *those* quantities back to the parameters. This is what the
//! flow needs: its step uses `grad u` and `log det(I + Hess u)`, and the
//! Hamilton-Jacobi residual uses `du/dt` and `|grad u|^2`.
//!
//! Notation inside this file: `a_l` pre-activations, `h_l` activations,
//! `s_l, q_l, p_l` the first three activation derivatives at `a_l`,
//! `gamma_l = du/dh_l`, `delta_l = du/da_l`, and `J_l = da_l/dx[..d]`.
//! The Hessian is `sum_l J_l^T diag(gamma_l * q_l) J_l`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::real::{lit, Real};
use crate::tensor::DenseArray;

/// Largest Hessian block the library will form.
pub const MAX_HESSIAN_DIM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }

    /// Value and first three derivatives.
    #[inline]
    fn eval<R: Real>(self, a: R) -> [R; 4] {
        match self {
            Activation::Tanh => {
                let h = a.tanh();
                let s = R::one() - h * h;
                let two = lit::<R>(2.0);
                let q = -two * h * s;
                let p = -two * s * s + lit::<R>(4.0) * h * h * s;
                [h, s, q, p]
            }
            Activation::Identity => [a, R::one(), R::zero(), R::zero()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<R> {
    /// `[out, in]`, row-major.
    pub weight: DenseArray<R>,
    pub bias: DenseArray<R>,
    pub activation: Activation,
}

impl<R: Real> Layer<R> {
    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    fn affine(&self, input: &[R]) -> Vec<R> {
        let (n_out, n_in) = (self.out_dim(), self.in_dim());
        let w = self.weight.data();
        let b = self.bias.data();
        (0..n_out)
            .map(|i| {
                let row = &w[i * n_in..(i + 1) * n_in];
                row.iter().zip(input).fold(b[i], |acc, (&wi, &xi)| acc + wi * xi)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<R> {
    pub layers: Vec<Layer<R>>,
}

/// Which derivative intermediates a trace keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceLevel {
    Value,
    Gradient,
    /// Gradient plus the Hessian over the first `n` inputs.
    Hessian(usize),
}

impl<R: Real> MlpParams<R> {
    /// Build from explicit layers, checking that consecutive widths agree.
    pub fn from_layers(layers: Vec<Layer<R>>) -> Result<Self> {
        let mlp = Self { layers };
        mlp.validate()?;
        Ok(mlp)
    }

    /// Xavier-uniform weights, zero biases. `sizes` lists every width including
    /// input and output; hidden layers use `hidden`, the last layer `output`.
    pub fn xavier(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least one layer");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (n_in, n_out) = (w[0], w[1]);
                let limit = (6.0 / (n_in + n_out) as f64).sqrt();
                let data = (0..n_in * n_out)
                    .map(|_| lit::<R>(rng.gen_range(-limit..limit)))
                    .collect();
                Layer {
                    weight: DenseArray::from_vec(&[n_out, n_in], data).expect("sized"),
                    bias: DenseArray::zeros(&[n_out]),
                    activation: if i + 2 == sizes.len() { output } else { hidden },
                }
            })
            .collect();
        Self { layers }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("MLP has no layers".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let ws = layer.weight.shape();
            if ws.len() != 2 || layer.bias.shape() != [ws[0]] {
                return Err(Error::shape(
                    format!("MLP layer {i} parameters"),
                    format!("weight [out,in] with bias [out]"),
                    format!("{:?} / {:?}", ws, layer.bias.shape()),
                ));
            }
            if i > 0 && self.layers[i - 1].out_dim() != layer.in_dim() {
                return Err(Error::LayerDimension {
                    network: "mlp".into(),
                    layer: i,
                    expected: self.layers[i - 1].out_dim(),
                    actual: layer.in_dim(),
                });
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Layer::out_dim).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: l.weight.zeros_like(),
                    bias: l.bias.zeros_like(),
                    activation: l.activation,
                })
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Self, scale: R) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.add_scaled(&b.weight, scale);
            a.bias.add_scaled(&b.bias, scale);
        }
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &DenseArray<R>)> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.layer{i}.weight"), &l.weight));
            out.push((format!("{prefix}.layer{i}.bias"), &l.bias));
        }
        out
    }

    pub fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut DenseArray<R>)> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("{prefix}.layer{i}.weight"), &mut l.weight));
            out.push((format!("{prefix}.layer{i}.bias"), &mut l.bias));
        }
        out
    }

    fn check_input(&self, input: &[R]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::LayerDimension {
                network: "mlp".into(),
                layer: 0,
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        Ok(())
    }

    fn check_scalar(&self) -> Result<()> {
        if self.output_dim() != 1 {
            return Err(Error::InvalidArgument(format!(
                "input derivatives need a scalar-output network, this one has {} outputs",
                self.output_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[R]) -> Result<Vec<R>> {
        self.check_input(input)?;
        let mut h = input.to_vec();
        for layer in &self.layers {
            h = layer
                .affine(&h)
                .into_iter()
                .map(|a| layer.activation.eval(a)[0])
                .collect();
        }
        Ok(h)
    }

    /// Exact `d output / d input` of a scalar-output network.
    pub fn grad_input(&self, input: &[R]) -> Result<Vec<R>> {
        Ok(self.trace(input, TraceLevel::Gradient)?.grad)
    }

    /// Full input Hessian (`n x n`, `n = input_dim`).
    pub fn hessian_input(&self, input: &[R]) -> Result<DenseArray<R>> {
        self.hessian_block(input, self.input_dim())
    }

    /// Hessian restricted to the first `dim` inputs.
    pub fn hessian_block(&self, input: &[R], dim: usize) -> Result<DenseArray<R>> {
        let trace = self.trace(input, TraceLevel::Hessian(dim))?;
        DenseArray::from_vec(&[dim, dim], trace.hessian)
    }

    /// Reverse-mode parameter gradients of `upstream . output`.
    pub fn param_gradients(&self, input: &[R], upstream: &[R]) -> Result<MlpParams<R>> {
        if upstream.len() != self.output_dim() {
            return Err(Error::shape("mlp upstream gradient", self.output_dim(), upstream.len()));
        }
        let trace = self.trace(input, TraceLevel::Value)?;
        let mut grads = self.zeros_like();
        trace.vjp(self, upstream, None, None, &mut grads);
        Ok(grads)
    }

    pub fn trace(&self, input: &[R], level: TraceLevel) -> Result<MlpTrace<R>> {
        self.check_input(input)?;
        if level != TraceLevel::Value {
            self.check_scalar()?;
        }
        if let TraceLevel::Hessian(d) = level {
            if d > MAX_HESSIAN_DIM || d > self.input_dim() {
                return Err(Error::InvalidArgument(format!(
                    "Hessian block of size {d} exceeds the guard ({MAX_HESSIAN_DIM}) or input width {}",
                    self.input_dim()
                )));
            }
        }
        let n_layers = self.layers.len();
        let mut pre = Vec::with_capacity(n_layers);
        let mut post: Vec<Vec<R>> = Vec::with_capacity(n_layers);
        let mut d1 = Vec::with_capacity(n_layers);
        let mut d2 = Vec::with_capacity(n_layers);
        let mut d3 = Vec::with_capacity(n_layers);
        for (l, layer) in self.layers.iter().enumerate() {
            let a = layer.affine(if l == 0 { input } else { &post[l - 1] });
            let n = a.len();
            let (mut h, mut s, mut q, mut p) = (
                Vec::with_capacity(n),
                Vec::with_capacity(n),
                Vec::with_capacity(n),
                Vec::with_capacity(n),
            );
            for &ai in &a {
                let [hv, sv, qv, pv] = layer.activation.eval(ai);
                h.push(hv);
                s.push(sv);
                q.push(qv);
                p.push(pv);
            }
            pre.push(a);
            post.push(h);
            d1.push(s);
            d2.push(q);
            d3.push(p);
        }

        let mut trace = MlpTrace {
            input: input.to_vec(),
            output: post[n_layers - 1].clone(),
            post,
            d1,
            d2,
            d3,
            gamma: Vec::new(),
            delta: Vec::new(),
            jac: Vec::new(),
            hess_dim: 0,
            grad: Vec::new(),
            hessian: Vec::new(),
        };
        drop(pre);
        if level == TraceLevel::Value {
            return Ok(trace);
        }

        // Backward sweep for du/dh_l and du/da_l.
        let mut gamma = vec![Vec::new(); n_layers];
        let mut delta = vec![Vec::new(); n_layers];
        gamma[n_layers - 1] = vec![R::one()];
        for l in (0..n_layers).rev() {
            let d: Vec<R> = gamma[l].iter().zip(&trace.d1[l]).map(|(&g, &s)| g * s).collect();
            let layer = &self.layers[l];
            let n_in = layer.in_dim();
            let w = layer.weight.data();
            let mut below = vec![R::zero(); n_in];
            for (i, &di) in d.iter().enumerate() {
                for (j, b) in below.iter_mut().enumerate() {
                    *b += w[i * n_in + j] * di;
                }
            }
            delta[l] = d;
            if l > 0 {
                gamma[l - 1] = below;
            } else {
                trace.grad = below;
            }
        }
        trace.gamma = gamma;
        trace.delta = delta;

        if let TraceLevel::Hessian(dim) = level {
            trace.hess_dim = dim;
            let mut jac: Vec<Vec<R>> = Vec::with_capacity(n_layers);
            for (l, layer) in self.layers.iter().enumerate() {
                let (n_out, n_in) = (layer.out_dim(), layer.in_dim());
                let w = layer.weight.data();
                let mut j_l = vec![R::zero(); n_out * dim];
                if l == 0 {
                    for i in 0..n_out {
                        j_l[i * dim..(i + 1) * dim].copy_from_slice(&w[i * n_in..i * n_in + dim]);
                    }
                } else {
                    let prev = &jac[l - 1];
                    let s_prev = &trace.d1[l - 1];
                    for i in 0..n_out {
                        let row = &mut j_l[i * dim..(i + 1) * dim];
                        for m in 0..n_in {
                            let coef = w[i * n_in + m] * s_prev[m];
                            if coef == R::zero() {
                                continue;
                            }
                            for (r, &pj) in row.iter_mut().zip(&prev[m * dim..(m + 1) * dim]) {
                                *r += coef * pj;
                            }
                        }
                    }
                }
                jac.push(j_l);
            }
            let mut hess = vec![R::zero(); dim * dim];
            for l in 0..n_layers {
                let j_l = &jac[l];
                for (i, (&g, &q)) in trace.gamma[l].iter().zip(&trace.d2[l]).enumerate() {
                    let c = g * q;
                    if c == R::zero() {
                        continue;
                    }
                    let row = &j_l[i * dim..(i + 1) * dim];
                    for a in 0..dim {
                        let ca = c * row[a];
                        for b in 0..dim {
                            hess[a * dim + b] += ca * row[b];
                        }
                    }
                }
            }
            // Exact symmetry regardless of summation order.
            for a in 0..dim {
                for b in a + 1..dim {
                    let avg = (hess[a * dim + b] + hess[b * dim + a]) * lit::<R>(0.5);
                    hess[a * dim + b] = avg;
                    hess[b * dim + a] = avg;
                }
            }
            trace.jac = jac;
            trace.hessian = hess;
        }
        Ok(trace)
    }
}

/// Forward intermediates of one evaluation, sufficient to pull adjoints of
/// the output, the input gradient, and the input Hessian back to parameters.
#[derive(Debug, Clone)]
pub struct MlpTrace<R> {
    input: Vec<R>,
    post: Vec<Vec<R>>,
    d1: Vec<Vec<R>>,
    d2: Vec<Vec<R>>,
    d3: Vec<Vec<R>>,
    gamma: Vec<Vec<R>>,
    delta: Vec<Vec<R>>,
    jac: Vec<Vec<R>>,
    hess_dim: usize,
    pub output: Vec<R>,
    /// Input gradient (scalar-output traces only).
    pub grad: Vec<R>,
    /// Row-major `hess_dim x hess_dim` block (Hessian traces only).
    pub hessian: Vec<R>,
}

impl<R: Real> MlpTrace<R> {
    pub fn hess_dim(&self) -> usize {
        self.hess_dim
    }

    /// Accumulate into `grads` the parameter gradient of
    /// `<d_out, output> + <d_grad, grad> + <d_hess, hessian>`
    /// and return its gradient with respect to the input.
    pub fn vjp(
        &self,
        params: &MlpParams<R>,
        d_out: &[R],
        d_grad: Option<&[R]>,
        d_hess: Option<&[R]>,
        grads: &mut MlpParams<R>,
    ) -> Vec<R> {
        let n_layers = params.layers.len();
        let widths: Vec<usize> = params.layers.iter().map(Layer::out_dim).collect();
        let mut g_a: Vec<Vec<R>> = widths.iter().map(|&n| vec![R::zero(); n]).collect();
        let mut g_s: Vec<Vec<R>> = widths.iter().map(|&n| vec![R::zero(); n]).collect();
        let mut g_gamma: Vec<Vec<R>> = widths.iter().map(|&n| vec![R::zero(); n]).collect();
        let uses_chain = d_grad.is_some() || d_hess.is_some();
        if uses_chain {
            assert!(!self.gamma.is_empty(), "trace lacks gradient intermediates");
        }

        if let Some(d_hess) = d_hess {
            let dim = self.hess_dim;
            assert!(
                dim > 0 && d_hess.len() == dim * dim,
                "trace lacks Hessian intermediates"
            );
            let half = lit::<R>(0.5);
            let mut sym = vec![R::zero(); dim * dim];
            for a in 0..dim {
                for b in 0..dim {
                    sym[a * dim + b] = (d_hess[a * dim + b] + d_hess[b * dim + a]) * half;
                }
            }
            let two = lit::<R>(2.0);
            let mut g_jac: Vec<Vec<R>> = Vec::with_capacity(n_layers);
            for l in 0..n_layers {
                let j_l = &self.jac[l];
                let mut g_j = vec![R::zero(); widths[l] * dim];
                for i in 0..widths[l] {
                    let row = &j_l[i * dim..(i + 1) * dim];
                    // (J S)[i, :]
                    let mut js = vec![R::zero(); dim];
                    for (a, &ra) in row.iter().enumerate() {
                        if ra == R::zero() {
                            continue;
                        }
                        for (b, v) in js.iter_mut().enumerate() {
                            *v += ra * sym[a * dim + b];
                        }
                    }
                    let g_c: R = js.iter().zip(row).map(|(&x, &y)| x * y).sum();
                    let c = self.gamma[l][i] * self.d2[l][i];
                    for (dst, &v) in g_j[i * dim..(i + 1) * dim].iter_mut().zip(&js) {
                        *dst = two * c * v;
                    }
                    g_gamma[l][i] += g_c * self.d2[l][i];
                    g_a[l][i] += g_c * self.gamma[l][i] * self.d3[l][i];
                }
                g_jac.push(g_j);
            }
            // J_l = W_l diag(s_{l-1}) J_{l-1}
            for l in (1..n_layers).rev() {
                let layer = &params.layers[l];
                let (n_out, n_in) = (layer.out_dim(), layer.in_dim());
                let w = layer.weight.data();
                let gw = grads.layers[l].weight.data_mut();
                let j_prev = &self.jac[l - 1];
                let s_prev = &self.d1[l - 1];
                let mut m_adj = vec![R::zero(); n_in * dim];
                for i in 0..n_out {
                    let g_row = &g_jac[l][i * dim..(i + 1) * dim];
                    for m in 0..n_in {
                        let jp = &j_prev[m * dim..(m + 1) * dim];
                        let dot: R = g_row.iter().zip(jp).map(|(&x, &y)| x * y).sum();
                        gw[i * n_in + m] += dot * s_prev[m];
                        let wim = w[i * n_in + m];
                        if wim != R::zero() {
                            for (dst, &g) in m_adj[m * dim..(m + 1) * dim].iter_mut().zip(g_row) {
                                *dst += wim * g;
                            }
                        }
                    }
                }
                let (lower, _) = g_jac.split_at_mut(l);
                let g_prev = &mut lower[l - 1];
                for m in 0..n_in {
                    let mrow = &m_adj[m * dim..(m + 1) * dim];
                    let jp = &j_prev[m * dim..(m + 1) * dim];
                    g_s[l - 1][m] += mrow.iter().zip(jp).map(|(&x, &y)| x * y).sum::<R>();
                    for (dst, &v) in g_prev[m * dim..(m + 1) * dim].iter_mut().zip(mrow) {
                        *dst += s_prev[m] * v;
                    }
                }
            }
            let n_in0 = params.layers[0].in_dim();
            let gw0 = grads.layers[0].weight.data_mut();
            for i in 0..widths[0] {
                for b in 0..dim {
                    gw0[i * n_in0 + b] += g_jac[0][i * dim + b];
                }
            }
        }

        if uses_chain {
            // grad = W_0^T delta_0, gamma_l = W_{l+1}^T delta_{l+1}, delta_l = s_l * gamma_l
            let mut g_delta: Vec<Vec<R>> = widths.iter().map(|&n| vec![R::zero(); n]).collect();
            if let Some(d_grad) = d_grad {
                let layer = &params.layers[0];
                let n_in = layer.in_dim();
                let w = layer.weight.data();
                let gw = grads.layers[0].weight.data_mut();
                for i in 0..widths[0] {
                    let mut acc = R::zero();
                    for j in 0..n_in {
                        gw[i * n_in + j] += self.delta[0][i] * d_grad[j];
                        acc += w[i * n_in + j] * d_grad[j];
                    }
                    g_delta[0][i] += acc;
                }
            }
            for l in 0..n_layers {
                for i in 0..widths[l] {
                    g_s[l][i] += g_delta[l][i] * self.gamma[l][i];
                    g_gamma[l][i] += g_delta[l][i] * self.d1[l][i];
                }
                if l + 1 < n_layers {
                    let layer = &params.layers[l + 1];
                    let n_in = layer.in_dim();
                    let w = layer.weight.data();
                    let gw = grads.layers[l + 1].weight.data_mut();
                    for i in 0..widths[l + 1] {
                        let mut acc = R::zero();
                        for j in 0..n_in {
                            gw[i * n_in + j] += self.delta[l + 1][i] * g_gamma[l][j];
                            acc += w[i * n_in + j] * g_gamma[l][j];
                        }
                        g_delta[l + 1][i] += acc;
                    }
                }
            }
            for l in 0..n_layers {
                for i in 0..widths[l] {
                    g_a[l][i] += g_s[l][i] * self.d2[l][i];
                }
            }
        }

        // Ordinary reverse sweep along the forward path.
        let mut g_h = d_out.to_vec();
        for l in (0..n_layers).rev() {
            let layer = &params.layers[l];
            let n_in = layer.in_dim();
            let w = layer.weight.data();
            let input = if l == 0 { &self.input } else { &self.post[l - 1] };
            for i in 0..widths[l] {
                g_a[l][i] += g_h[i] * self.d1[l][i];
            }
            let grad_layer = &mut grads.layers[l];
            {
                let gw = grad_layer.weight.data_mut();
                for i in 0..widths[l] {
                    let gi = g_a[l][i];
                    if gi == R::zero() {
                        continue;
                    }
                    for (dst, &x) in gw[i * n_in..(i + 1) * n_in].iter_mut().zip(input) {
                        *dst += gi * x;
                    }
                }
            }
            for (dst, &g) in grad_layer.bias.data_mut().iter_mut().zip(&g_a[l]) {
                *dst += g;
            }
            let mut below = vec![R::zero(); n_in];
            for i in 0..widths[l] {
                let gi = g_a[l][i];
                if gi == R::zero() {
                    continue;
                }
                for (b, &wij) in below.iter_mut().zip(&w[i * n_in..(i + 1) * n_in]) {
                    *b += wij * gi;
                }
            }
            g_h = below;
        }
        g_h
    }
}

/// Free-function forms mirroring the module's public operations.
pub fn mlp_forward<R: Real>(params: &MlpParams<R>, input: &DenseArray<R>) -> Result<DenseArray<R>> {
    input.check_finite("mlp_forward input")?;
    Ok(DenseArray::vector(params.forward(input.data())?))
}

pub fn mlp_grad_input<R: Real>(params: &MlpParams<R>, input: &DenseArray<R>) -> Result<DenseArray<R>> {
    input.check_finite("mlp_grad_input input")?;
    Ok(DenseArray::vector(params.grad_input(input.data())?))
}

pub fn mlp_hessian_input<R: Real>(params: &MlpParams<R>, input: &DenseArray<R>) -> Result<DenseArray<R>> {
    input.check_finite("mlp_hessian_input input")?;
    params.hessian_input(input.data())
}

pub fn mlp_param_gradients<R: Real>(
    params: &MlpParams<R>,
    input: &DenseArray<R>,
    upstream: &DenseArray<R>,
) -> Result<MlpParams<R>> {
    input.check_finite("mlp_param_gradients input")?;
    params.param_gradients(input.data(), upstream.data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::relative_max_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_net(sizes: &[usize], seed: u64) -> MlpParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = MlpParams::xavier(sizes, Activation::Tanh, Activation::Identity, &mut rng);
        for l in &mut net.layers {
            for b in l.bias.data_mut() {
                *b = rng.gen_range(-0.5..0.5);
            }
        }
        net
    }

    /// Straight-line re-evaluation of a one-hidden-layer tanh net.
    fn straight_line(net: &MlpParams<f64>, x: &[f64]) -> f64 {
        let l0 = &net.layers[0];
        let l1 = &net.layers[1];
        let mut out = l1.bias.data()[0];
        for i in 0..l0.out_dim() {
            let mut a = l0.bias.data()[i];
            for j in 0..x.len() {
                a += l0.weight.at(&[i, j]) * x[j];
            }
            out += l1.weight.at(&[0, i]) * a.tanh();
        }
        out
    }

    #[test]
    fn identity_layer_is_identity() {
        let layer = Layer {
            weight: DenseArray::<f64>::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap(),
            bias: DenseArray::zeros(&[2]),
            activation: Activation::Identity,
        };
        let net = MlpParams::from_layers(vec![layer]).unwrap();
        assert_eq!(net.forward(&[1.5, -2.0]).unwrap(), vec![1.5, -2.0]);
    }

    #[test]
    fn zero_tanh_layer_outputs_zero() {
        let mut net = random_net(&[3, 4], 1);
        net.layers[0].activation = Activation::Tanh;
        for l in &mut net.layers {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
        assert_eq!(net.forward(&[0.3, -7.0, 2.0]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn forward_matches_straight_line_evaluation() {
        let net = random_net(&[2, 8, 1], 7);
        let got = net.forward(&[0.3, 0.7]).unwrap()[0];
        assert!((got - straight_line(&net, &[0.3, 0.7])).abs() < 1e-14);
    }

    #[test]
    fn dimension_mismatch_names_layer() {
        let net = random_net(&[2, 8, 1], 7);
        match net.forward(&[1.0, 2.0, 3.0]) {
            Err(Error::LayerDimension {
                layer: 0,
                expected: 2,
                actual: 3,
                ..
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let mut bad = net.clone();
        bad.layers[1].weight = DenseArray::zeros(&[1, 5]);
        assert!(matches!(bad.validate(), Err(Error::LayerDimension { layer: 1, .. })));
    }

    #[test]
    fn linear_gradient_is_weight_vector() {
        let layer = Layer {
            weight: DenseArray::<f64>::from_f64(&[1, 2], &[2.0, 3.0]).unwrap(),
            bias: DenseArray::zeros(&[1]),
            activation: Activation::Identity,
        };
        let net = MlpParams::from_layers(vec![layer]).unwrap();
        assert_eq!(net.grad_input(&[-4.0, 9.0]).unwrap(), vec![2.0, 3.0]);
    }

    #[test]
    fn non_scalar_gradient_rejected() {
        let net = random_net(&[3, 4, 2], 3);
        assert!(net.grad_input(&[0.0; 3]).is_err());
        assert!(net.hessian_input(&[0.0; 3]).is_err());
    }

    #[test]
    fn zero_final_layer_gives_zero_gradient() {
        let mut net = random_net(&[3, 5, 1], 9);
        net.layers[1].weight.fill(0.0);
        assert!(net.grad_input(&[0.4, 0.1, -0.2]).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn hessian_zero_cases() {
        let mut net = random_net(&[3, 5, 1], 11);
        net.layers[0].weight.fill(0.0);
        assert!(net
            .hessian_input(&[0.2, 0.1, 0.9])
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));

        let layers = vec![
            Layer {
                weight: DenseArray::<f64>::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap(),
                bias: DenseArray::zeros(&[2]),
                activation: Activation::Tanh,
            },
            Layer {
                weight: DenseArray::<f64>::from_f64(&[1, 2], &[1.0, 1.0]).unwrap(),
                bias: DenseArray::zeros(&[1]),
                activation: Activation::Identity,
            },
        ];
        let net = MlpParams::from_layers(layers).unwrap();
        assert!(net.hessian_input(&[0.0, 0.0]).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_hidden_layer_hessian_matches_closed_form() {
        let net = random_net(&[3, 6, 1], 5);
        let x = [0.2, -0.4, 0.9];
        let h = net.hessian_input(&x).unwrap();
        let l0 = &net.layers[0];
        let w2 = net.layers[1].weight.data();
        let mut closed = [0.0; 9];
        for i in 0..6 {
            let mut a = l0.bias.data()[i];
            for j in 0..3 {
                a += l0.weight.at(&[i, j]) * x[j];
            }
            let t = a.tanh();
            let curv = w2[i] * (-2.0 * t * (1.0 - t * t));
            for p in 0..3 {
                for q in 0..3 {
                    closed[p * 3 + q] += l0.weight.at(&[i, p]) * curv * l0.weight.at(&[i, q]);
                }
            }
        }
        for (a, b) in h.data().iter().zip(&closed) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn deep_hessian_matches_gradient_differences() {
        let net = random_net(&[4, 7, 5, 1], 21);
        let x = [0.3, -0.1, 0.5, 0.8];
        let h = net.hessian_input(&x).unwrap();
        let eps = 1e-5;
        for j in 0..4 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += eps;
            xm[j] -= eps;
            let gp = net.grad_input(&xp).unwrap();
            let gm = net.grad_input(&xm).unwrap();
            for i in 0..4 {
                let fd = (gp[i] - gm[i]) / (2.0 * eps);
                assert!((h.at(&[i, j]) - fd).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn linear_param_gradient_is_outer_product() {
        let layer = Layer {
            weight: DenseArray::<f64>::from_f64(&[2, 3], &[0.5; 6]).unwrap(),
            bias: DenseArray::zeros(&[2]),
            activation: Activation::Identity,
        };
        let net = MlpParams::from_layers(vec![layer]).unwrap();
        let x = DenseArray::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap();
        let g = DenseArray::from_f64(&[2], &[-1.0, 4.0]).unwrap();
        let grads = mlp_param_gradients(&net, &x, &g).unwrap();
        assert_eq!(grads.layers[0].weight.data(), &[-1.0, -2.0, -3.0, 4.0, 8.0, 12.0]);
        assert_eq!(grads.layers[0].bias.data(), &[-1.0, 4.0]);

        let zero = mlp_param_gradients(&net, &x, &DenseArray::zeros(&[2])).unwrap();
        assert!(zero.layers[0].weight.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn upstream_shape_checked() {
        let net = random_net(&[2, 3, 2], 1);
        assert!(net.param_gradients(&[0.0, 0.0], &[1.0]).is_err());
    }

    /// Gradient of `<A, H> + <b, grad> + c * u` w.r.t. every parameter and the input,
    /// checked against central differences of the same scalar.
    #[test]
    fn second_order_vjp_matches_finite_differences() {
        let net = random_net(&[5, 6, 4, 1], 33);
        let d = 3;
        let x = vec![0.1, -0.3, 0.6, 0.25, -0.8];
        let a: Vec<f64> = (0..d * d).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect();
        let b: Vec<f64> = vec![0.4, -1.1, 0.7, 0.2, -0.5];
        let c = 0.9;
        let scalar = |net: &MlpParams<f64>, x: &[f64]| {
            let tr = net.trace(x, TraceLevel::Hessian(d)).unwrap();
            let h: f64 = tr.hessian.iter().zip(&a).map(|(p, q)| p * q).sum();
            let g: f64 = tr.grad.iter().zip(&b).map(|(p, q)| p * q).sum();
            h + g + c * tr.output[0]
        };
        let tr = net.trace(&x, TraceLevel::Hessian(d)).unwrap();
        let mut grads = net.zeros_like();
        let gx = tr.vjp(&net, &[c], Some(&b), Some(&a), &mut grads);

        let eps = 1e-6;
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for l in 0..net.layers.len() {
            for which in 0..2 {
                let n = if which == 0 {
                    net.layers[l].weight.len()
                } else {
                    net.layers[l].bias.len()
                };
                for i in 0..n {
                    let mut p = net.clone();
                    let mut m = net.clone();
                    let (pp, mm) = if which == 0 {
                        (&mut p.layers[l].weight, &mut m.layers[l].weight)
                    } else {
                        (&mut p.layers[l].bias, &mut m.layers[l].bias)
                    };
                    pp.data_mut()[i] += eps;
                    mm.data_mut()[i] -= eps;
                    numeric.push((scalar(&p, &x) - scalar(&m, &x)) / (2.0 * eps));
                    let g = if which == 0 {
                        &grads.layers[l].weight
                    } else {
                        &grads.layers[l].bias
                    };
                    analytic.push(g.data()[i]);
                }
            }
        }
        assert!(
            relative_max_error(&analytic, &numeric) < 1e-6,
            "{}",
            relative_max_error(&analytic, &numeric)
        );

        let fd_x: Vec<f64> = (0..x.len())
            .map(|j| {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += eps;
                xm[j] -= eps;
                (scalar(&net, &xp) - scalar(&net, &xm)) / (2.0 * eps)
            })
            .collect();
        assert!(relative_max_error(&gx, &fd_x) < 1e-6);
    }
}
