// SPDX-License-Identifier: MIT OR Apache-2.0

//! Prediction-error detector: forecast the next `k` steps from the last `k`,
//! score the worst per-step Euclidean error, and flag threshold exceedances.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::ChangepointSet;
use crate::preprocess::Observation;

/// `k` consecutive inputs followed by the next `k` targets.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPair<'a> {
    pub input: &'a [Observation],
    pub target: &'a [Observation],
}

/// All `T - 2k + 1` overlapping input/target window pairs.
pub fn make_window_pairs(stream: &[Observation], k: usize) -> Result<Vec<WindowPair<'_>>> {
    if k == 0 {
        return Err(Error::Config("window size k must be at least 1".into()));
    }
    if stream.len() < 2 * k {
        return Err(Error::Degenerate(format!(
            "stream of length {} is shorter than 2k = {}",
            stream.len(),
            2 * k
        )));
    }
    Ok((0..=stream.len() - 2 * k)
        .map(|i| WindowPair {
            input: &stream[i..i + k],
            target: &stream[i + k..i + 2 * k],
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PredictorKind {
    Persistence,
    LinearAr { order: usize },
    External { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSpec {
    #[serde(flatten)]
    pub kind: PredictorKind,
    pub window_k: usize,
}

/// A fitted forecaster.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    Persistence,
    /// Per dimension: intercept followed by lag coefficients (lag 1 first).
    LinearAr { order: usize, coefficients: Vec<Vec<f64>> },
    External { predictions: BTreeMap<i64, Vec<f64>> },
}

impl Predictor {
    /// Forecast the `k` steps that follow `input`.
    pub fn forecast(&self, input: &[Observation], k: usize) -> Result<Vec<Vec<f64>>> {
        let last = input
            .last()
            .ok_or_else(|| Error::Degenerate("forecast needs a non-empty input window".into()))?;
        match self {
            Self::Persistence => Ok(vec![last.values.clone(); k]),
            Self::LinearAr { order, coefficients } => {
                if input.len() < *order {
                    return Err(Error::Degenerate(format!(
                        "input window of {} is shorter than AR order {order}",
                        input.len()
                    )));
                }
                let d = coefficients.len();
                if last.dim() != d {
                    return Err(Error::Dimension {
                        expected: d,
                        got: last.dim(),
                    });
                }
                // Most recent first; predictions are pushed to the front.
                let mut history: Vec<Vec<f64>> = input.iter().rev().take(*order).map(|o| o.values.clone()).collect();
                let mut out = Vec::with_capacity(k);
                for _ in 0..k {
                    let next: Vec<f64> = (0..d)
                        .map(|i| {
                            let c = &coefficients[i];
                            c[0] + history.iter().zip(&c[1..]).map(|(h, a)| a * h[i]).sum::<f64>()
                        })
                        .collect();
                    history.insert(0, next.clone());
                    history.truncate(*order);
                    out.push(next);
                }
                Ok(out)
            }
            Self::External { predictions } => (1..=k as i64)
                .map(|j| {
                    let t = last.t + j;
                    predictions.get(&t).cloned().ok_or(Error::MissingPrediction(t))
                })
                .collect(),
        }
    }
}

pub fn fit_predictor(spec: &PredictorSpec, calibration: &[Observation]) -> Result<Predictor> {
    if spec.window_k == 0 {
        return Err(Error::Config("window size k must be at least 1".into()));
    }
    match &spec.kind {
        PredictorKind::Persistence => Ok(Predictor::Persistence),
        PredictorKind::LinearAr { order } => fit_ar(*order, calibration),
        PredictorKind::External { path } => Ok(Predictor::External {
            predictions: read_predictions(path)?,
        }),
    }
}

/// Least-squares AR(p) with intercept, fit independently per dimension.
fn fit_ar(order: usize, calibration: &[Observation]) -> Result<Predictor> {
    if order == 0 {
        return Err(Error::Config("AR order must be at least 1".into()));
    }
    if calibration.len() < order + 2 {
        return Err(Error::Fit(format!(
            "AR({order}) needs at least {} calibration points, got {}",
            order + 2,
            calibration.len()
        )));
    }
    let d = calibration[0].dim();
    let rows = calibration.len() - order;
    let mut coefficients = Vec::with_capacity(d);
    for dim in 0..d {
        let design = DMatrix::from_fn(rows, order + 1, |row, col| {
            if col == 0 {
                1.0
            } else {
                calibration[row + order - col].values[dim]
            }
        });
        let target = DVector::from_fn(rows, |row, _| calibration[row + order].values[dim]);
        let svd = design.svd(true, true);
        let max_sv = svd.singular_values.max();
        let min_sv = svd.singular_values.min();
        if !(max_sv > 0.0) || min_sv <= max_sv * 1e-10 {
            return Err(Error::Fit(format!(
                "AR({order}) design for dimension {dim} is rank deficient"
            )));
        }
        let beta = svd
            .solve(&target, 0.0)
            .map_err(|e| Error::Fit(format!("AR solve failed for dimension {dim}: {e}")))?;
        coefficients.push(beta.iter().copied().collect());
    }
    Ok(Predictor::LinearAr {
        order,
        coefficients,
    })
}

/// Read `t,dim_0,...` prediction rows keyed by time.
pub fn read_predictions(path: &Path) -> Result<BTreeMap<i64, Vec<f64>>> {
    let stream = crate::io::read_series(path, crate::io::SeriesFormat::Csv)?;
    Ok(stream.into_iter().map(|o| (o.t, o.values)).collect())
}

/// Worst per-step prediction error, stamped with the last target time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScore {
    pub value: f64,
    pub at_t: i64,
}

pub fn anomaly_score(predicted: &[Vec<f64>], actual: &[Observation]) -> Result<AnomalyScore> {
    if predicted.len() != actual.len() {
        return Err(Error::Dimension {
            expected: actual.len(),
            got: predicted.len(),
        });
    }
    let last = actual
        .last()
        .ok_or_else(|| Error::Degenerate("anomaly score needs a non-empty window".into()))?;
    let mut value: f64 = 0.0;
    for (p, a) in predicted.iter().zip(actual) {
        if p.len() != a.dim() {
            return Err(Error::Dimension {
                expected: a.dim(),
                got: p.len(),
            });
        }
        let norm = p
            .iter()
            .zip(&a.values)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        value = value.max(norm);
    }
    Ok(AnomalyScore {
        value,
        at_t: last.t,
    })
}

/// Score every window pair of `stream` with `predictor`.
pub fn score_stream(predictor: &Predictor, stream: &[Observation], k: usize) -> Result<Vec<AnomalyScore>> {
    make_window_pairs(stream, k)?
        .iter()
        .map(|pair| anomaly_score(&predictor.forecast(pair.input, k)?, pair.target))
        .collect()
}

/// Flag every score strictly above `thr`, skipping any that fall within
/// `refractory` steps of the previous flag.
pub fn detect_by_threshold(scores: &[AnomalyScore], thr: f64, refractory: usize) -> ChangepointSet {
    let mut flags: Vec<i64> = Vec::new();
    for s in scores {
        if s.value > thr {
            match flags.last() {
                Some(&prev) if s.at_t - prev <= refractory as i64 => {}
                _ => flags.push(s.at_t),
            }
        }
    }
    ChangepointSet::from_unsorted(flags)
}
