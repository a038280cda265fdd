use rand::Rng;

use crate::error::{Error, Result};
use crate::real::{lit, Real};

pub const TAU_MIN: f64 = 0.05;
pub const TAU_ANNEAL_RATE: f64 = 3e-5;

/// Temperature schedule `max(tau_min, exp(-rate * iteration))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GumbelState {
    pub iteration: usize,
    pub rate: f64,
    pub tau_min: f64,
}

impl Default for GumbelState {
    fn default() -> Self {
        Self {
            iteration: 0,
            rate: TAU_ANNEAL_RATE,
            tau_min: TAU_MIN,
        }
    }
}

impl GumbelState {
    pub fn at(iteration: usize) -> Self {
        Self {
            iteration,
            ..Self::default()
        }
    }
}

pub fn anneal_tau(state: &GumbelState) -> f64 {
    state.tau_min.max((-state.rate * state.iteration as f64).exp())
}

/// A relaxed categorical draw: `value` is what the forward pass uses (one-hot
/// when hard), `soft` is what gradients flow through.
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelSample<R> {
    pub soft: Vec<R>,
    pub value: Vec<R>,
    pub tau: R,
}

impl<R: Real> GumbelSample<R> {
    pub fn argmax(&self) -> usize {
        argmax(&self.soft)
    }

    /// Pull `dL/dvalue` back to the logits through the soft sample.
    pub fn backward(&self, d_value: &[R]) -> Vec<R> {
        let inner: R = self.soft.iter().zip(d_value).map(|(&s, &g)| s * g).sum();
        self.soft
            .iter()
            .zip(d_value)
            .map(|(&s, &g)| s * (g - inner) / self.tau)
            .collect()
    }
}

pub fn argmax<R: Real>(values: &[R]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn softmax<R: Real>(logits: &[R]) -> Vec<R> {
    let max = logits.iter().copied().fold(R::neg_infinity(), R::max);
    let exps: Vec<R> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: R = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax<R: Real>(logits: &[R]) -> Vec<R> {
    let max = logits.iter().copied().fold(R::neg_infinity(), R::max);
    let total: R = logits.iter().map(|&l| (l - max).exp()).sum();
    let log_z = max + total.ln();
    logits.iter().map(|&l| l - log_z).collect()
}

pub fn gumbel_softmax<R: Real>(logits: &[R], gumbels: &[R], tau: R, hard: bool) -> Result<GumbelSample<R>> {
    if !(tau > R::zero()) {
        return Err(Error::InvalidArgument(format!(
            "Gumbel-Softmax temperature must be > 0, got {tau}"
        )));
    }
    if logits.is_empty() || logits.len() != gumbels.len() {
        return Err(Error::shape("Gumbel noise", logits.len(), gumbels.len()));
    }
    let scaled: Vec<R> = logits.iter().zip(gumbels).map(|(&l, &g)| (l + g) / tau).collect();
    let soft = softmax(&scaled);
    let value = if hard {
        let k = argmax(&soft);
        (0..soft.len())
            .map(|i| if i == k { R::one() } else { R::zero() })
            .collect()
    } else {
        soft.clone()
    };
    Ok(GumbelSample { soft, value, tau })
}

/// Standard Gumbel draws `-log(-log U)`.
pub fn sample_gumbels<R: Real>(k: usize, rng: &mut impl Rng) -> Vec<R> {
    (0..k)
        .map(|_| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            lit(-(-u.ln()).ln())
        })
        .collect()
}

/// `KL(q || uniform)` for `q = softmax(logits)` and its gradient in the logits.
pub fn categorical_kl_uniform<R: Real>(logits: &[R]) -> (R, Vec<R>) {
    let log_q = log_softmax(logits);
    let q: Vec<R> = log_q.iter().map(|&l| l.exp()).collect();
    let log_k = lit::<R>(logits.len() as f64).ln();
    let neg_entropy: R = q.iter().zip(&log_q).map(|(&p, &l)| p * l).sum();
    let grad = q.iter().zip(&log_q).map(|(&p, &l)| p * (l - neg_entropy)).collect();
    (neg_entropy + log_k, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::central_difference;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_logits_give_uniform() {
        for tau in [0.05, 0.5, 1.0] {
            let s = gumbel_softmax(&[0.3f64; 4], &[0.0; 4], tau, false).unwrap();
            for v in s.value {
                assert!((v - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn dominant_logit_saturates() {
        let s = gumbel_softmax(&[10.0f64, 0.0, 0.0], &[0.0; 3], 0.05, false).unwrap();
        assert!((s.soft[0] - 1.0).abs() < 1e-20);
        assert!(s.soft[1] < 1e-20 && s.soft[2] < 1e-20);
    }

    #[test]
    fn nonpositive_temperature_rejected() {
        assert!(gumbel_softmax(&[1.0f64], &[0.0], 0.0, true).is_err());
        assert!(gumbel_softmax(&[1.0f64], &[0.0], -1.0, true).is_err());
    }

    #[test]
    fn hard_sample_is_exact_one_hot() {
        let s = gumbel_softmax(&[0.1f64, 0.7, 0.2], &[0.0, 0.0, 0.9], 0.5, true).unwrap();
        assert_eq!(s.value, vec![0.0, 0.0, 1.0]);
        assert_eq!(s.argmax(), 2);
    }

    #[test]
    fn anneal_schedule_endpoints() {
        assert_eq!(anneal_tau(&GumbelState::at(0)), 1.0);
        assert_eq!(anneal_tau(&GumbelState::at(100_000)), 0.05);
        assert!((-3.0f64).exp() < 0.05);
        assert_eq!(anneal_tau(&GumbelState::at(usize::MAX)), 0.05);
        assert!((anneal_tau(&GumbelState::at(1000)) - (-0.03f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn categorical_kl_of_known_distribution() {
        let q: [f64; 3] = [0.7, 0.2, 0.1];
        let logits: Vec<f64> = q.iter().map(|p| p.ln()).collect();
        let (kl, _) = categorical_kl_uniform(&logits);
        let direct: f64 = q.iter().map(|p| p * (3.0 * p).ln()).sum();
        assert!((kl - direct).abs() < 1e-14);
        assert!((kl - 0.29679).abs() < 1e-5);
        let (zero, g) = categorical_kl_uniform(&[0.4f64; 3]);
        assert!(zero.abs() < 1e-15);
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn categorical_kl_gradient_matches_finite_differences() {
        let logits = [0.3f64, -1.2, 0.8, 0.1];
        let (_, g) = categorical_kl_uniform(&logits);
        for i in 0..4 {
            let fd = central_difference(
                |x| {
                    let mut l = logits;
                    l[i] = x;
                    categorical_kl_uniform(&l).0
                },
                logits[i],
                1e-6,
            );
            assert!((g[i] - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn straight_through_backward_matches_soft_jacobian() {
        let logits = [0.3f64, -0.2, 0.5];
        let gumbels = [0.1, 0.4, -0.3];
        let tau = 0.7;
        let up = [1.0, -2.0, 0.5];
        let s = gumbel_softmax(&logits, &gumbels, tau, true).unwrap();
        let g = s.backward(&up);
        for i in 0..3 {
            let fd = central_difference(
                |x| {
                    let mut l = logits;
                    l[i] = x;
                    let soft = gumbel_softmax(&l, &gumbels, tau, false).unwrap().value;
                    soft.iter().zip(&up).map(|(a, b)| a * b).sum()
                },
                logits[i],
                1e-6,
            );
            assert!((g[i] - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn hard_frequencies_follow_softmax() {
        let logits = [1.0f64, 0.0, -0.5];
        let probs = softmax(&logits);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let g = sample_gumbels::<f64>(3, &mut rng);
            counts[gumbel_softmax(&logits, &g, 1.0, true).unwrap().argmax()] += 1;
        }
        for k in 0..3 {
            assert!((counts[k] as f64 / n as f64 - probs[k]).abs() < 0.01);
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn output_on_simplex(
                logits in prop::collection::vec(-20.0f64..20.0, 1..6),
                tau in 0.01f64..2.0,
                seed in 0u64..1000,
            ) {
                let g = sample_gumbels::<f64>(logits.len(), &mut ChaCha8Rng::seed_from_u64(seed));
                let s = gumbel_softmax(&logits, &g, tau, false).unwrap();
                prop_assert!(s.soft.iter().all(|&v| v >= 0.0));
                prop_assert!((s.soft.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
