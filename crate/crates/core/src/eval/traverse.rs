use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::flow::{evolve_field, FlowClock, FlowState, SuperposedField};
use crate::potential::PotentialBank;
use crate::real::Real;
use crate::vae::{decode_batch, encode, SeqVae};

/// A run of `steps` flow steps driven by the sum of the potentials in `ks`.
/// One index is a plain traversal, several superpose, none holds still.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub ks: Vec<usize>,
    pub steps: usize,
}

/// Segments applied in order. Each segment starts its potentials' clock at 0,
/// so switching to `k` mid-way replays `k` exactly as a fresh traversal would
/// from the current latent.
///
/// Text form: comma-separated `ks:steps` with `+` joining superposed indices
/// and `-` for the empty set, e.g. `0:4,1:4` or `0+2:8`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub segments: Vec<Segment>,
}

impl Schedule {
    pub fn single(k: usize, steps: usize) -> Self {
        Self {
            segments: vec![Segment { ks: vec![k], steps }],
        }
    }

    pub fn total_steps(&self) -> usize {
        self.segments.iter().map(|s| s.steps).sum()
    }

    pub fn validate(&self, num_potentials: usize) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::InvalidArgument("empty traversal schedule".into()));
        }
        for seg in &self.segments {
            if let Some(&k) = seg.ks.iter().find(|&&k| k >= num_potentials) {
                return Err(Error::Index {
                    what: "potential",
                    index: k,
                    len: num_potentials,
                });
            }
        }
        Ok(())
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |part: &str| Error::InvalidArgument(format!("bad schedule segment '{part}', expected ks:steps"));
        let segments = s
            .split(',')
            .map(|part| {
                let part = part.trim();
                let (ks, steps) = part.split_once(':').ok_or_else(|| bad(part))?;
                let steps = steps.trim().parse().map_err(|_| bad(part))?;
                let ks = match ks.trim() {
                    "-" => Vec::new(),
                    list => list
                        .split('+')
                        .map(|k| k.trim().parse().map_err(|_| bad(part)))
                        .collect::<Result<Vec<usize>>>()?,
                };
                Ok(Segment { ks, steps })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { segments })
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, seg) in self.segments.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            if seg.ks.is_empty() {
                f.write_str("-")?;
            } else {
                let ks: Vec<String> = seg.ks.iter().map(|k| k.to_string()).collect();
                f.write_str(&ks.join("+"))?;
            }
            write!(f, ":{}", seg.steps)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Traversal<R> {
    /// `z_0 .. z_T` with tracked log-densities; `t` counts from the schedule start.
    pub states: Vec<FlowState<R>>,
    /// Decoded means of every state, `T + 1` frames.
    pub frames: Vec<Vec<R>>,
}

/// Roll `z0` through the schedule with log-density tracking.
pub fn traverse_latent<R: Real>(
    bank: &PotentialBank<R>,
    z0: &[R],
    schedule: &Schedule,
    clock: FlowClock,
) -> Result<Vec<FlowState<R>>> {
    schedule.validate(bank.num_potentials())?;
    let mut states = vec![FlowState {
        z: z0.to_vec(),
        log_q: R::zero(),
        t: 0,
    }];
    for seg in &schedule.segments {
        let start = states.last().expect("non-empty").clone();
        let field = SuperposedField {
            bank,
            ks: seg.ks.clone(),
        };
        let run = evolve_field(&field, &start.z, start.log_q, seg.steps, clock)?;
        states.extend(run.into_iter().skip(1).map(|mut s| {
            s.t += start.t;
            s
        }));
    }
    Ok(states)
}

/// Decode the schedule's rollout from the encoder mean of `x0`.
pub fn traverse<R: Real>(
    vae: &SeqVae<R>,
    bank: &PotentialBank<R>,
    x0: &[R],
    schedule: &Schedule,
    clock: FlowClock,
) -> Result<Traversal<R>> {
    let (mu, _) = encode(vae, x0)?;
    let states = traverse_latent(bank, &mu, schedule, clock)?;
    let zs: Vec<Vec<R>> = states.iter().map(|s| s.z.clone()).collect();
    let frames = decode_batch(vae, &zs)?;
    Ok(Traversal { states, frames })
}
