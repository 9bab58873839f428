// SPDX-License-Identifier: MIT OR Apache-2.0

//! Differencing and frozen-statistics standardization of raw series.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One multivariate sample at an integer time index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub t: i64,
    pub values: Vec<f64>,
}

impl Observation {
    pub fn new(t: i64, values: Vec<f64>) -> Self {
        Self { t, values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// First differences `z[i+1] - z[i]`, stamped with the later time index.
pub fn difference(stream: &[Observation]) -> Result<Vec<Observation>> {
    if stream.len() < 2 {
        return Err(Error::Degenerate(format!(
            "differencing needs at least 2 observations, got {}",
            stream.len()
        )));
    }
    let d = stream[0].dim();
    stream
        .windows(2)
        .map(|w| {
            if w[1].dim() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: w[1].dim(),
                });
            }
            let values = w[1].values.iter().zip(&w[0].values).map(|(b, a)| b - a).collect();
            Ok(Observation::new(w[1].t, values))
        })
        .collect()
}

/// How fitted statistics rescale an observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// `(z - mean) / std`
    #[default]
    ZScore,
    /// `(z - mean) / variance`, the centering formula read literally.
    Literal,
    /// Identity.
    None,
}

/// Per-dimension mean and population variance of a calibration window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub count: usize,
}

pub fn standardize_fit(stream: &[Observation]) -> Result<SeriesStats> {
    if stream.len() < 2 {
        return Err(Error::Degenerate(format!(
            "standardization needs at least 2 observations, got {}",
            stream.len()
        )));
    }
    let d = stream[0].dim();
    let n = stream.len() as f64;
    let mut mean = vec![0.0; d];
    for obs in stream {
        if obs.dim() != d {
            return Err(Error::Dimension {
                expected: d,
                got: obs.dim(),
            });
        }
        for (m, v) in mean.iter_mut().zip(&obs.values) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut variance = vec![0.0; d];
    for obs in stream {
        for ((s, v), m) in variance.iter_mut().zip(&obs.values).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    variance.iter_mut().for_each(|s| *s /= n);
    if let Some(dim) = variance.iter().position(|&v| v <= 0.0 || !v.is_finite()) {
        return Err(Error::Degenerate(format!("dimension {dim} has zero variance")));
    }
    Ok(SeriesStats {
        mean,
        variance,
        count: stream.len(),
    })
}

impl SeriesStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, z: &Observation) -> Result<()> {
        if z.dim() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: z.dim(),
            });
        }
        Ok(())
    }

    pub fn apply(&self, z: &Observation, scaling: Scaling) -> Result<Observation> {
        self.check(z)?;
        let values = z
            .values
            .iter()
            .zip(self.mean.iter().zip(&self.variance))
            .map(|(v, (m, var))| match scaling {
                Scaling::ZScore => (v - m) / var.sqrt(),
                Scaling::Literal => (v - m) / var,
                Scaling::None => *v,
            })
            .collect();
        Ok(Observation::new(z.t, values))
    }

    /// Undo [`SeriesStats::apply`].
    pub fn invert(&self, z: &Observation, scaling: Scaling) -> Result<Observation> {
        self.check(z)?;
        let values = z
            .values
            .iter()
            .zip(self.mean.iter().zip(&self.variance))
            .map(|(v, (m, var))| match scaling {
                Scaling::ZScore => v * var.sqrt() + m,
                Scaling::Literal => v * var + m,
                Scaling::None => *v,
            })
            .collect();
        Ok(Observation::new(z.t, values))
    }
}

pub fn standardize_apply(stats: &SeriesStats, z: &Observation) -> Result<Observation> {
    stats.apply(z, Scaling::ZScore)
}

/// Pipeline settings for turning a raw series into the engine's input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub difference: bool,
    pub scaling: Scaling,
    /// Leading fraction of the (differenced) stream used to fit the statistics.
    pub calibration_fraction: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            difference: false,
            scaling: Scaling::ZScore,
            calibration_fraction: 0.5,
        }
    }
}

/// Difference (optionally), fit statistics on the calibration prefix, and
/// apply them to the whole stream.
pub fn prepare(stream: &[Observation], config: &PreprocessConfig) -> Result<Vec<Observation>> {
    if !(config.calibration_fraction > 0.0 && config.calibration_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "calibration_fraction must be in (0, 1], got {}",
            config.calibration_fraction
        )));
    }
    let diffed;
    let base = if config.difference {
        diffed = difference(stream)?;
        &diffed[..]
    } else {
        stream
    };
    if config.scaling == Scaling::None {
        return Ok(base.to_vec());
    }
    let n_cal = ((base.len() as f64 * config.calibration_fraction).floor() as usize).max(2);
    let stats = standardize_fit(&base[..n_cal.min(base.len())])?;
    base.iter().map(|z| stats.apply(z, config.scaling)).collect()
}
