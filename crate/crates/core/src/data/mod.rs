//! Transformation sequences: synthetic generation, IDX ingestion, the toy
//! sprite set and the on-disk dataset cache.

pub mod cache;
pub mod idx;
pub mod toy;
pub mod transform;

pub use cache::{read_cache, write_cache};
pub use idx::{load_idx, load_idx_labels};
pub use toy::{make_toy_dataset, toy_shape};
pub use transform::{generate_sequence, TransformKind, TransformSpec};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::real::{lit, Real};
use crate::tensor::{ImageShape, Sequence};

/// A batch of equal-length sequences, optionally labelled with the index of
/// the transformation that produced each one.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch<R> {
    pub shape: ImageShape,
    pub steps: usize,
    pub sequences: Vec<Sequence<R>>,
    pub labels: Option<Vec<usize>>,
}

impl<R: Real> SequenceBatch<R> {
    pub fn new(
        shape: ImageShape,
        steps: usize,
        sequences: Vec<Sequence<R>>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        for s in &sequences {
            if s.shape != shape {
                return Err(Error::shape(
                    "sequence frame",
                    format!("{shape:?}"),
                    format!("{:?}", s.shape),
                ));
            }
            if s.steps() != steps {
                return Err(Error::shape("sequence length", steps + 1, s.num_frames()));
            }
        }
        if let Some(l) = &labels {
            if l.len() != sequences.len() {
                return Err(Error::shape("labels", sequences.len(), l.len()));
            }
        }
        Ok(Self {
            shape,
            steps,
            sequences,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Indices of the sequences carrying label `k`.
    pub fn indices_with_label(&self, k: usize) -> Vec<usize> {
        match &self.labels {
            Some(l) => (0..l.len()).filter(|&i| l[i] == k).collect(),
            None => Vec::new(),
        }
    }
}

/// The three transformations used by the toy and MNIST presets, indexed by `k`:
/// zoom to 1.8x, rotate by 80 degrees, rotate hue by 340 degrees.
pub fn standard_transforms(steps: usize) -> Result<Vec<TransformSpec>> {
    Ok(vec![
        TransformSpec::new(TransformKind::Scale, steps, 1.8)?,
        TransformSpec::new(TransformKind::Rotate, steps, 80.0)?,
        TransformSpec::new(TransformKind::Hue, steps, 340.0)?,
    ])
}

/// Render one labelled sequence per `(base index, transformation index)` pair.
pub fn build_sequences<R: Real>(
    bases: &[Vec<R>],
    shape: ImageShape,
    transforms: &[TransformSpec],
    pairs: &[(usize, usize)],
) -> Result<SequenceBatch<R>> {
    let steps = transforms.first().map(|t| t.steps).unwrap_or(0);
    if transforms.iter().any(|t| t.steps != steps) {
        return Err(Error::InvalidArgument(
            "all transformations must share one sequence length".into(),
        ));
    }
    let sequences = pairs
        .par_iter()
        .map(|&(i, k)| {
            let base = bases.get(i).ok_or(Error::Index {
                what: "base image",
                index: i,
                len: bases.len(),
            })?;
            let spec = transforms.get(k).ok_or(Error::Index {
                what: "transformation",
                index: k,
                len: transforms.len(),
            })?;
            generate_sequence(base, shape, spec)
        })
        .collect::<Result<Vec<_>>>()?;
    SequenceBatch::new(shape, steps, sequences, Some(pairs.iter().map(|p| p.1).collect()))
}

/// Every base under every transformation, base-major.
pub fn all_pairs(num_bases: usize, num_transforms: usize) -> Vec<(usize, usize)> {
    (0..num_bases)
        .flat_map(|i| (0..num_transforms).map(move |k| (i, k)))
        .collect()
}

/// Tint a grey image `[n, h, w]` into RGB frames so hue rotation is visible.
pub fn colorize<R: Real>(gray: &[R], rgb: [f64; 3]) -> Vec<R> {
    rgb.iter()
        .flat_map(|&c| gray.iter().map(move |&g| g * lit::<R>(c)))
        .collect()
}
