//! Equivariance metrics, schedule-driven traversals and image-grid export.
//!
//! Metrics are deterministic: `z_0` is the encoder mean and latents follow
//! `z_{t+1} = z_t + dt * grad u(z_t, t dt)` without sampling.

pub mod grid;
pub mod traverse;

pub use grid::{encode_grid, export_grid, read_ppm, PpmImage};
pub use traverse::{traverse, traverse_latent, Schedule, Segment, Traversal};

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::data::SequenceBatch;
use crate::error::{Error, Result};
use crate::flow::{BankField, ConstantField, FlowClock, GradientField};
use crate::potential::PotentialBank;
use crate::real::{lit, to_f64, Real};
use crate::tensor::Sequence;
use crate::vae::{classify_sequence, decode_batch, elbo_supervised, encode_batch, gumbel, ObjectiveOptions, SeqVae};

/// The deterministic encode/decode pair the metrics need.
pub trait LatentModel<R: Real>: Sync {
    fn latent_dim(&self) -> usize;
    /// Encoder means for `batch` images stored back to back.
    fn encode_mean(&self, images: &[R], batch: usize) -> Result<Vec<Vec<R>>>;
    /// Decoded pixel means, one image per latent.
    fn decode(&self, zs: &[Vec<R>]) -> Result<Vec<Vec<R>>>;
}

impl<R: Real> LatentModel<R> for SeqVae<R> {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn encode_mean(&self, images: &[R], batch: usize) -> Result<Vec<Vec<R>>> {
        Ok(encode_batch(self, images, batch)?.0)
    }

    fn decode(&self, zs: &[Vec<R>]) -> Result<Vec<Vec<R>>> {
        decode_batch(self, zs)
    }
}

/// Velocity-only rollout `z_0 .. z_steps`.
pub fn latent_path<R: Real>(
    field: &impl GradientField<R>,
    z0: &[R],
    steps: usize,
    clock: FlowClock,
) -> Result<Vec<Vec<R>>> {
    if z0.len() != field.dim() {
        return Err(Error::shape("initial latent", field.dim(), z0.len()));
    }
    let dt = lit::<R>(clock.dt);
    let mut path = Vec::with_capacity(steps + 1);
    path.push(z0.to_vec());
    for t in 0..steps {
        let z = &path[t];
        let v = field.velocity(z, clock.time(t))?;
        let next = z.iter().zip(&v).map(|(&z, &v)| z + dt * v).collect();
        path.push(next);
    }
    Ok(path)
}

pub fn l1_distance<R: Real>(a: &[R], b: &[R]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| to_f64((x - y).abs())).sum()
}

/// `sum_{t=1..T} |x_t - Decode(z_t)|` for latents driven by `field`.
pub fn output_error_along<R: Real>(
    model: &impl LatentModel<R>,
    field: &impl GradientField<R>,
    seq: &Sequence<R>,
    clock: FlowClock,
) -> Result<f64> {
    let z0 = model.encode_mean(seq.frame(0), 1)?.remove(0);
    let path = latent_path(field, &z0, seq.steps(), clock)?;
    let decoded = model.decode(&path[1..])?;
    Ok((1..=seq.steps())
        .map(|t| l1_distance(seq.frame(t), &decoded[t - 1]))
        .sum())
}

/// `sum_{t=1..T} |Encode(x_t) - z_t|` with encoder means as targets.
pub fn latent_error_along<R: Real>(
    model: &impl LatentModel<R>,
    field: &impl GradientField<R>,
    seq: &Sequence<R>,
    clock: FlowClock,
) -> Result<f64> {
    let targets = model.encode_mean(&seq.frames, seq.num_frames())?;
    let path = latent_path(field, &targets[0], seq.steps(), clock)?;
    Ok((1..=seq.steps()).map(|t| l1_distance(&targets[t], &path[t])).sum())
}

pub fn equivariance_error_output<R: Real>(
    vae: &SeqVae<R>,
    bank: &PotentialBank<R>,
    seq: &Sequence<R>,
    k: usize,
    clock: FlowClock,
) -> Result<f64> {
    bank.check_index(k)?;
    output_error_along(vae, &BankField { bank, k }, seq, clock)
}

pub fn equivariance_error_latent<R: Real>(
    vae: &SeqVae<R>,
    bank: &PotentialBank<R>,
    seq: &Sequence<R>,
    k: usize,
    clock: FlowClock,
) -> Result<f64> {
    bank.check_index(k)?;
    latent_error_along(vae, &BankField { bank, k }, seq, clock)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Output-space equivariance error.
    EquivOut,
    /// Output-space error with `grad u = 0`, the reconstruction-only baseline.
    EquivOutBaseline,
    EquivLatent,
    /// Supervised ELBO with fixed-seed reparameterization noise.
    Elbo,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::EquivOut => "equiv-out",
            Metric::EquivOutBaseline => "equiv-out-baseline",
            Metric::EquivLatent => "equiv-latent",
            Metric::Elbo => "elbo",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [
            Metric::EquivOut,
            Metric::EquivOutBaseline,
            Metric::EquivLatent,
            Metric::Elbo,
        ]
        .into_iter()
        .find(|m| m.name() == name)
    }
}

/// One CSV row; `k = None` is the mean over all sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: &'static str,
    pub k: Option<usize>,
    pub value: f64,
    pub n_sequences: usize,
}

/// Per-sequence metric values for a labelled batch, in batch order.
pub fn per_sequence<R: Real>(
    vae: &SeqVae<R>,
    bank: &PotentialBank<R>,
    batch: &SequenceBatch<R>,
    metric: Metric,
    opts: &ObjectiveOptions,
) -> Result<Vec<f64>> {
    let labels = batch
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("evaluation needs labelled sequences".into()))?;
    let clock = opts.clock;
    let zero = ConstantField::zeros(vae.latent_dim);
    (0..batch.len())
        .into_par_iter()
        .map(|i| {
            let (seq, k) = (&batch.sequences[i], labels[i]);
            match metric {
                Metric::EquivOut => equivariance_error_output(vae, bank, seq, k, clock),
                Metric::EquivOutBaseline => output_error_along(vae, &zero, seq, clock),
                Metric::EquivLatent => equivariance_error_latent(vae, bank, seq, k, clock),
                Metric::Elbo => {
                    let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
                    let noise: Vec<R> = (0..vae.latent_dim)
                        .map(|_| lit(StandardNormal.sample(&mut rng)))
                        .collect();
                    Ok(elbo_supervised(vae, bank, seq, k, &noise, opts)?.0)
                }
            }
        })
        .collect()
}

/// Means per transformation index followed by the overall mean.
pub fn summarize(metric: Metric, values: &[f64], labels: &[usize], num_classes: usize) -> Vec<MetricRow> {
    let mut rows: Vec<MetricRow> = (0..num_classes)
        .map(|k| {
            let vals: Vec<f64> = values
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == k)
                .map(|(&v, _)| v)
                .collect();
            MetricRow {
                metric: metric.name(),
                k: Some(k),
                value: mean(&vals),
                n_sequences: vals.len(),
            }
        })
        .collect();
    rows.push(MetricRow {
        metric: metric.name(),
        k: None,
        value: mean(values),
        n_sequences: values.len(),
    });
    rows
}

pub fn evaluate<R: Real>(
    vae: &SeqVae<R>,
    bank: &PotentialBank<R>,
    batch: &SequenceBatch<R>,
    metric: Metric,
    opts: &ObjectiveOptions,
) -> Result<Vec<MetricRow>> {
    let values = per_sequence(vae, bank, batch, metric, opts)?;
    let labels = batch.labels.as_deref().unwrap_or_default();
    Ok(summarize(metric, &values, labels, bank.num_potentials()))
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Classifier accuracy on a labelled batch under the label-to-class
/// assignment that maximizes it. Weakly supervised runs learn the classes up
/// to a permutation, so `mapping[label]` is the matching class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Accuracy {
    pub accuracy: f64,
    pub mapping: Vec<usize>,
    pub confusion: Vec<Vec<usize>>,
}

pub fn classifier_accuracy<R: Real>(vae: &SeqVae<R>, batch: &SequenceBatch<R>) -> Result<Accuracy> {
    let labels = batch
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("accuracy needs labelled sequences".into()))?;
    let k = vae.num_classes();
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Index {
            what: "sequence label",
            index: bad,
            len: k,
        });
    }
    let predicted: Vec<usize> = batch
        .sequences
        .par_iter()
        .map(|s| classify_sequence(vae, s).map(|l| gumbel::argmax(&l)))
        .collect::<Result<_>>()?;
    let mut confusion = vec![vec![0usize; k]; k];
    for (&l, &p) in labels.iter().zip(&predicted) {
        confusion[l][p] += 1;
    }
    let mut best = (0, (0..k).collect::<Vec<_>>());
    let mut perm: Vec<usize> = (0..k).collect();
    permutations(&mut perm, 0, &mut |p| {
        let hits = (0..k).map(|l| confusion[l][p[l]]).sum::<usize>();
        if hits > best.0 {
            best = (hits, p.to_vec());
        }
    });
    Ok(Accuracy {
        accuracy: best.0 as f64 / labels.len().max(1) as f64,
        mapping: best.1,
        confusion,
    })
}

fn permutations(p: &mut Vec<usize>, start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == p.len() {
        visit(p);
        return;
    }
    for i in start..p.len() {
        p.swap(start, i);
        permutations(p, start + 1, visit);
        p.swap(start, i);
    }
}

/// The batch with every label `l` replaced by `mapping[l]`.
pub fn relabel<R: Clone>(batch: &SequenceBatch<R>, mapping: &[usize]) -> SequenceBatch<R> {
    SequenceBatch {
        labels: batch.labels.as_ref().map(|ls| ls.iter().map(|&l| mapping[l]).collect()),
        ..batch.clone()
    }
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("metric,k,value,n_sequences\n");
    for r in rows {
        let k = r.k.map_or_else(|| "all".to_string(), |k| k.to_string());
        let _ = writeln!(out, "{},{},{},{}", r.metric, k, r.value, r.n_sequences);
    }
    out
}

pub fn write_metrics_csv(rows: &[MetricRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, metrics_csv(rows)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ImageShape;

    /// Encoder reads the first `d` pixels; decoder writes `z` back into them.
    struct PixelModel {
        d: usize,
        pixels: usize,
    }

    impl LatentModel<f64> for PixelModel {
        fn latent_dim(&self) -> usize {
            self.d
        }

        fn encode_mean(&self, images: &[f64], batch: usize) -> Result<Vec<Vec<f64>>> {
            Ok(images
                .chunks(self.pixels)
                .take(batch)
                .map(|x| x[..self.d].to_vec())
                .collect())
        }

        fn decode(&self, zs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
            Ok(zs
                .iter()
                .map(|z| {
                    let mut x = vec![0.0; self.pixels];
                    x[..self.d].copy_from_slice(z);
                    x
                })
                .collect())
        }
    }

    /// Wraps a model and field so latent coordinates are permuted by `perm`.
    struct Permuted<'a, M, F> {
        model: &'a M,
        field: &'a F,
        perm: Vec<usize>,
    }

    impl<M, F> Permuted<'_, M, F> {
        fn forward(&self, z: &[f64]) -> Vec<f64> {
            self.perm.iter().map(|&p| z[p]).collect()
        }

        fn backward(&self, y: &[f64]) -> Vec<f64> {
            let mut z = vec![0.0; y.len()];
            for (i, &p) in self.perm.iter().enumerate() {
                z[p] = y[i];
            }
            z
        }
    }

    impl<M: LatentModel<f64>, F: GradientField<f64> + Sync> LatentModel<f64> for Permuted<'_, M, F> {
        fn latent_dim(&self) -> usize {
            self.model.latent_dim()
        }

        fn encode_mean(&self, images: &[f64], batch: usize) -> Result<Vec<Vec<f64>>> {
            Ok(self
                .model
                .encode_mean(images, batch)?
                .iter()
                .map(|z| self.forward(z))
                .collect())
        }

        fn decode(&self, zs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
            self.model
                .decode(&zs.iter().map(|y| self.backward(y)).collect::<Vec<_>>())
        }
    }

    impl<M: LatentModel<f64>, F: GradientField<f64> + Sync> GradientField<f64> for Permuted<'_, M, F> {
        fn dim(&self) -> usize {
            self.field.dim()
        }

        fn velocity(&self, y: &[f64], time: f64) -> Result<Vec<f64>> {
            Ok(self.forward(&self.field.velocity(&self.backward(y), time)?))
        }

        fn jacobian(&self, _y: &[f64], _time: f64) -> Result<Vec<f64>> {
            unimplemented!("metrics only use velocities")
        }
    }

    /// Nonlinear, coordinate-coupled test field.
    struct Swirl;

    impl GradientField<f64> for Swirl {
        fn dim(&self) -> usize {
            3
        }

        fn velocity(&self, z: &[f64], time: f64) -> Result<Vec<f64>> {
            Ok(vec![
                0.1 * z[1] + 0.05 * time,
                (0.2 * z[2]).sin(),
                0.3 - 0.1 * z[0] * z[1],
            ])
        }

        fn jacobian(&self, _z: &[f64], _time: f64) -> Result<Vec<f64>> {
            unimplemented!()
        }
    }

    fn sequence(frames: &[[f64; 4]]) -> Sequence<f64> {
        Sequence::new(ImageShape::new(1, 2, 2), frames.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn stationary_sequence_under_zero_field_is_exact() {
        let model = PixelModel { d: 4, pixels: 4 };
        let seq = sequence(&[[0.1, 0.2, 0.3, 0.4]; 5]);
        let zero = ConstantField::zeros(4);
        assert_eq!(
            output_error_along(&model, &zero, &seq, FlowClock::default()).unwrap(),
            0.0
        );
        assert_eq!(
            latent_error_along(&model, &zero, &seq, FlowClock::default()).unwrap(),
            0.0
        );
    }

    #[test]
    fn two_pixel_case_by_hand() {
        // the decoder writes the two latent coordinates into pixels 0 and 1
        let model = PixelModel { d: 2, pixels: 4 };
        let field = ConstantField {
            velocity: vec![0.1, -0.2],
        };
        let seq = sequence(&[[0.5, 0.5, 0.0, 0.0], [0.6, 0.2, 0.1, 0.0], [0.8, 0.1, 0.0, 0.3]]);
        // z1 = (0.6, 0.3), z2 = (0.7, 0.1)
        let expected = (0.0 + 0.1 + 0.1 + 0.0) + (0.1 + 0.0 + 0.0 + 0.3);
        let got = output_error_along(&model, &field, &seq, FlowClock::default()).unwrap();
        assert!((got - expected).abs() < 1e-12);
        // latent targets (0.6, 0.2), (0.8, 0.1)
        let got = latent_error_along(&model, &field, &seq, FlowClock::default()).unwrap();
        assert!((got - 0.1 - 0.1).abs() < 1e-12);
    }

    #[test]
    fn baseline_is_distance_to_the_first_reconstruction() {
        let model = PixelModel { d: 2, pixels: 4 };
        let seq = sequence(&[[0.5, 0.5, 0.0, 0.0], [0.6, 0.2, 0.1, 0.0], [0.8, 0.1, 0.0, 0.3]]);
        let x0_hat = [0.5, 0.5, 0.0, 0.0];
        let expected: f64 = (1..3).map(|t| l1_distance(seq.frame(t), &x0_hat)).sum();
        let got = output_error_along(&model, &ConstantField::zeros(2), &seq, FlowClock::default()).unwrap();
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn latent_error_one_step_by_hand() {
        let model = PixelModel { d: 3, pixels: 4 };
        let seq = sequence(&[[0.1, 0.2, 0.3, 0.0], [0.3, 0.1, 0.4, 0.0]]);
        let v = Swirl.velocity(&[0.1, 0.2, 0.3], 0.0).unwrap();
        let expected = (0.3f64 - 0.1 - v[0]).abs() + (0.1f64 - 0.2 - v[1]).abs() + (0.4f64 - 0.3 - v[2]).abs();
        let got = latent_error_along(&model, &Swirl, &seq, FlowClock::default()).unwrap();
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn errors_invariant_under_consistent_latent_permutation() {
        let model = PixelModel { d: 3, pixels: 4 };
        let seq = sequence(&[
            [0.1, 0.2, 0.3, 0.9],
            [0.3, 0.1, 0.4, 0.5],
            [0.2, 0.6, 0.4, 0.1],
            [0.7, 0.6, 0.2, 0.0],
        ]);
        let clock = FlowClock::new(0.5).unwrap();
        let base_out = output_error_along(&model, &Swirl, &seq, clock).unwrap();
        let base_lat = latent_error_along(&model, &Swirl, &seq, clock).unwrap();
        let wrapped = Permuted {
            model: &model,
            field: &Swirl,
            perm: vec![2, 0, 1],
        };
        assert!((output_error_along(&wrapped, &wrapped, &seq, clock).unwrap() - base_out).abs() < 1e-15);
        assert!((latent_error_along(&wrapped, &wrapped, &seq, clock).unwrap() - base_lat).abs() < 1e-15);
    }

    #[test]
    fn summary_groups_by_label() {
        let rows = summarize(Metric::EquivOut, &[1.0, 2.0, 3.0, 6.0], &[0, 1, 0, 1], 3);
        assert_eq!(rows.len(), 4);
        assert_eq!((rows[0].value, rows[0].n_sequences), (2.0, 2));
        assert_eq!((rows[1].value, rows[1].n_sequences), (4.0, 2));
        assert!(rows[2].value.is_nan() && rows[2].n_sequences == 0);
        assert_eq!((rows[3].k, rows[3].value), (None, 3.0));
        let csv = metrics_csv(&rows[..1]);
        assert_eq!(csv, "metric,k,value,n_sequences\nequiv-out,0,2,2\n");
        assert_eq!(Metric::from_name("equiv-latent"), Some(Metric::EquivLatent));
        assert_eq!(Metric::from_name("nope"), None);
    }
}
