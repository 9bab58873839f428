// SPDX-License-Identifier: MIT OR Apache-2.0

//! Piecewise-stationary Gaussian streams with known changepoints.
//!
//! Randomness comes from ChaCha20 (`rand_chacha`) seeded with the generator's
//! 64-bit seed, so a `SyntheticSpec` reproduces the same stream on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::ChangepointSet;
use crate::preprocess::Observation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "law", content = "value")]
pub enum SegmentLength {
    Fixed(usize),
    /// Geometric on `{1, 2, ...}` with the given mean.
    Geometric(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub d: usize,
    pub segment_count: usize,
    pub segment_length: SegmentLength,
    /// Mean jump per dimension at each changepoint, in units of `noise_sigma`.
    pub mean_shift: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("d must be at least 1".into()));
        }
        if self.segment_count == 0 {
            return Err(Error::Config("segment_count must be at least 1".into()));
        }
        match self.segment_length {
            SegmentLength::Fixed(0) => return Err(Error::Config("fixed segment length must be >= 1".into())),
            SegmentLength::Geometric(l) if !(l.is_finite() && l >= 1.0) => {
                return Err(Error::Config(format!("geometric mean length must be >= 1, got {l}")))
            }
            _ => {}
        }
        if !self.mean_shift.is_finite() {
            return Err(Error::Config("mean_shift must be finite".into()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma > 0.0) {
            return Err(Error::Config(format!("noise_sigma must be > 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledStream {
    pub observations: Vec<Observation>,
    pub truth: ChangepointSet,
    pub spec: SyntheticSpec,
}

pub fn generate(spec: &SyntheticSpec) -> Result<LabeledStream> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let geometric = match spec.segment_length {
        SegmentLength::Geometric(mean) => Some(
            Geometric::new(1.0 / mean).map_err(|e| Error::Config(format!("geometric law: {e}")))?,
        ),
        SegmentLength::Fixed(_) => None,
    };
    let jump = spec.mean_shift * spec.noise_sigma;
    let mut mean = vec![0.0; spec.d];
    let mut observations = Vec::new();
    let mut truth = Vec::new();
    for segment in 0..spec.segment_count {
        let len = match (spec.segment_length, &geometric) {
            (SegmentLength::Fixed(n), _) => n,
            (_, Some(g)) => g.sample(&mut rng) as usize + 1,
            (SegmentLength::Geometric(_), None) => unreachable!(),
        };
        if segment > 0 {
            truth.push(observations.len() as i64 + 1);
            for m in &mut mean {
                *m += if rng.random_bool(0.5) { jump } else { -jump };
            }
        }
        for _ in 0..len {
            let t = observations.len() as i64 + 1;
            let values = mean
                .iter()
                .map(|m| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    m + spec.noise_sigma * e
                })
                .collect();
            observations.push(Observation::new(t, values));
        }
    }
    Ok(LabeledStream {
        observations,
        truth: ChangepointSet::new(truth)?,
        spec: spec.clone(),
    })
}
