// SPDX-License-Identifier: MIT OR Apache-2.0

//! Margin-tolerant precision/recall/F-score and hyperparameter grid search.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conjugate::{NiwParams, NormalGammaParams};
use crate::engine::{BocdEngine, EngineConfig, HazardSpec, ModelSpec, Scheme};
use crate::error::{Error, Result};
use crate::preprocess::Observation;

/// Strictly increasing changepoint times, all `>= 1`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<i64>", into = "Vec<i64>")]
pub struct ChangepointSet(Vec<i64>);

impl ChangepointSet {
    pub fn new(times: Vec<i64>) -> Result<Self> {
        if let Some(&t) = times.iter().find(|&&t| t < 1) {
            return Err(Error::Domain(format!("changepoint time {t} is below 1")));
        }
        if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Domain(format!(
                "changepoint times must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self(times))
    }

    /// Sort, deduplicate and drop times below 1.
    pub fn from_unsorted(mut times: Vec<i64>) -> Self {
        times.retain(|&t| t >= 1);
        times.sort_unstable();
        times.dedup();
        Self(times)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn times(&self) -> &[i64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Check every time lies in `[1, horizon]`.
    pub fn check_horizon(&self, horizon: i64) -> Result<()> {
        match self.0.last() {
            Some(&t) if t > horizon => Err(Error::Domain(format!(
                "changepoint time {t} exceeds horizon {horizon}"
            ))),
            _ => Ok(()),
        }
    }
}

impl TryFrom<Vec<i64>> for ChangepointSet {
    type Error = Error;

    fn try_from(v: Vec<i64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ChangepointSet> for Vec<i64> {
    fn from(s: ChangepointSet) -> Self {
        s.0
    }
}

/// Shift every time back by `c`, dropping anything that leaves `[1, inf)`.
pub fn apply_delay(detected: &ChangepointSet, c: usize) -> ChangepointSet {
    let c = c as i64;
    ChangepointSet(detected.0.iter().map(|t| t - c).filter(|&t| t >= 1).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub margin: usize,
    /// `(truth, detected)` pairs of the one-to-one matching.
    pub matches: Vec<(i64, i64)>,
}

impl EvalReport {
    pub fn true_positives(&self) -> usize {
        self.matches.len()
    }

    /// JSON with six-decimal fixed-point rates for stable golden files.
    pub fn to_json(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{{\"precision\":{:.6},\"recall\":{:.6},\"f_score\":{:.6},\"margin\":{},\"matches\":[",
            self.precision, self.recall, self.f_score, self.margin
        );
        for (i, (a, b)) in self.matches.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "[{a},{b}]");
        }
        s.push_str("]}");
        s
    }
}

/// Maximum one-to-one matching under `|truth - detected| <= margin`.
///
/// Both inputs are sorted, so a two-pointer sweep that matches whenever the
/// current pair is compatible and otherwise discards the smaller element is
/// optimal.
pub fn match_within_margin(truth: &[i64], detected: &[i64], margin: usize) -> Vec<(i64, i64)> {
    let m = margin as i64;
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < truth.len() && j < detected.len() {
        let (a, b) = (truth[i], detected[j]);
        if (a - b).abs() <= m {
            out.push((a, b));
            i += 1;
            j += 1;
        } else if b < a {
            j += 1;
        } else {
            i += 1;
        }
    }
    out
}

pub fn margin_f_score(truth: &ChangepointSet, detected: &ChangepointSet, margin: usize) -> EvalReport {
    let matches = match_within_margin(truth.times(), detected.times(), margin);
    let (precision, recall) = match (truth.is_empty(), detected.is_empty()) {
        (true, true) => (1.0, 1.0),
        (_, true) | (true, _) => (0.0, 0.0),
        (false, false) => {
            let tp = matches.len() as f64;
            (tp / detected.len() as f64, tp / truth.len() as f64)
        }
    };
    let f_score = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    EvalReport {
        precision,
        recall,
        f_score,
        margin,
        matches,
    }
}

pub fn classical_f_score(truth: &ChangepointSet, detected: &ChangepointSet) -> EvalReport {
    margin_f_score(truth, detected, 0)
}

/// Which conjugate family each grid cell uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Factorized,
    Multivariate,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Factorized => "factorized",
            Self::Multivariate => "multivariate",
        }
    }

    /// Build a model from Normal-Gamma hyperparameters. The joint model uses
    /// the matching Normal-Inverse-Wishart prior `nu = 2 alpha + d - 1`,
    /// `psi = 2 beta I`, which reduces to the same prior when `d = 1`.
    pub fn build(&self, d: usize, mu0: f64, kappa0: f64, alpha0: f64, beta0: f64) -> Result<ModelSpec> {
        let ng = NormalGammaParams::new(mu0, kappa0, alpha0, beta0)?;
        Ok(match self {
            Self::Factorized => ModelSpec::factorized(d, ng),
            Self::Multivariate => {
                let mut psi = vec![0.0; d * d];
                for i in 0..d {
                    psi[i * d + i] = 2.0 * beta0;
                }
                ModelSpec::Multivariate(NiwParams::from_slices(
                    &vec![mu0; d],
                    kappa0,
                    2.0 * alpha0 + d as f64 - 1.0,
                    &psi,
                )?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lambda_values: Vec<f64>,
    pub alpha0_values: Vec<f64>,
    pub beta0_values: Vec<f64>,
    pub delay_c_values: Vec<usize>,
    pub mu0: f64,
    pub kappa0: f64,
    pub model: ModelKind,
    pub truncation: usize,
    pub scheme: Scheme,
    pub dedup_margin: usize,
}

impl GridSpec {
    /// The lambda / alpha0 / beta0 value sets from the reference experiments.
    pub fn reference() -> Self {
        Self {
            lambda_values: vec![5.0, 10.0, 50.0, 100.0],
            alpha0_values: vec![0.01, 0.1, 1.0, 10.0],
            beta0_values: vec![0.01, 0.1, 1.0, 10.0],
            delay_c_values: vec![0],
            mu0: 0.0,
            kappa0: 1.0,
            model: ModelKind::Factorized,
            truncation: 500,
            scheme: Scheme::MapSet,
            dedup_margin: 5,
        }
    }

    pub fn cells(&self) -> Vec<GridCell> {
        let mut out = Vec::new();
        for &lambda in &self.lambda_values {
            for &alpha0 in &self.alpha0_values {
                for &beta0 in &self.beta0_values {
                    for &delay_c in &self.delay_c_values {
                        out.push(GridCell {
                            lambda,
                            alpha0,
                            beta0,
                            delay_c,
                        });
                    }
                }
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        if self.lambda_values.is_empty()
            || self.alpha0_values.is_empty()
            || self.beta0_values.is_empty()
            || self.delay_c_values.is_empty()
        {
            return Err(Error::Config("grid value sets must be non-empty".into()));
        }
        Ok(())
    }

    pub fn engine_config(&self, cell: &GridCell, d: usize) -> Result<EngineConfig> {
        let model = self.model.build(d, self.mu0, self.kappa0, cell.alpha0, cell.beta0)?;
        Ok(EngineConfig::new(
            model,
            HazardSpec::new(cell.lambda)?,
            self.truncation,
            self.scheme,
            cell.delay_c,
        )?
        .with_dedup_margin(self.dedup_margin))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lambda: f64,
    pub alpha0: f64,
    pub beta0: f64,
    pub delay_c: usize,
}

#[derive(Debug)]
pub struct GridResult {
    pub cell: GridCell,
    pub outcome: Result<EvalReport>,
}

impl GridResult {
    pub fn f_score(&self) -> f64 {
        self.outcome.as_ref().map_or(f64::NEG_INFINITY, |r| r.f_score)
    }

    fn precision(&self) -> f64 {
        self.outcome.as_ref().map_or(f64::NEG_INFINITY, |r| r.precision)
    }
}

/// Run the engine over `stream` and score its located changepoints.
pub fn evaluate_config(
    config: EngineConfig,
    stream: &[Observation],
    truth: &ChangepointSet,
    margin: usize,
) -> Result<EvalReport> {
    let mut engine = BocdEngine::new(config)?;
    let detections = engine.run(stream)?;
    let detected = ChangepointSet::from_unsorted(detections.iter().map(|d| d.located_at).collect());
    Ok(margin_f_score(truth, &detected, margin))
}

/// Evaluate every grid cell and rank by F-score (then precision, then smaller
/// lambda, alpha0, beta0, delay). A failing cell is reported, not fatal.
pub fn grid_search(
    grid: &GridSpec,
    stream: &[Observation],
    truth: &ChangepointSet,
    margin: usize,
) -> Result<Vec<GridResult>> {
    grid.validate()?;
    let d = stream
        .first()
        .map(Observation::dim)
        .ok_or_else(|| Error::Degenerate("grid search needs a non-empty stream".into()))?;
    if let Some(last) = stream.last() {
        truth.check_horizon(last.t)?;
    }
    let mut results: Vec<GridResult> = grid
        .cells()
        .into_par_iter()
        .map(|cell| GridResult {
            cell,
            outcome: grid
                .engine_config(&cell, d)
                .and_then(|cfg| evaluate_config(cfg, stream, truth, margin)),
        })
        .collect();
    results.sort_by(|a, b| {
        b.f_score()
            .total_cmp(&a.f_score())
            .then(b.precision().total_cmp(&a.precision()))
            .then(a.cell.lambda.total_cmp(&b.cell.lambda))
            .then(a.cell.alpha0.total_cmp(&b.cell.alpha0))
            .then(a.cell.beta0.total_cmp(&b.cell.beta0))
            .then(a.cell.delay_c.cmp(&b.cell.delay_c))
    });
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[i64]) -> ChangepointSet {
        ChangepointSet::new(v.to_vec()).unwrap()
    }

    #[test]
    fn worked_example() {
        let r = margin_f_score(&set(&[10, 20]), &set(&[12, 30]), 5);
        assert_eq!(r.matches, vec![(10, 12)]);
        assert_eq!((r.precision, r.recall, r.f_score), (0.5, 0.5, 0.5));
    }

    #[test]
    fn one_detection_matches_one_truth() {
        let r = margin_f_score(&set(&[10, 14]), &set(&[12]), 5);
        assert_eq!(r.true_positives(), 1);
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.recall, 0.5);
        assert!((r.f_score - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn identity_and_empty_conventions() {
        let s = set(&[3, 9, 27]);
        for m in [0, 1, 5] {
            assert_eq!(margin_f_score(&s, &s, m).f_score, 1.0);
        }
        let e = ChangepointSet::empty();
        let both = margin_f_score(&e, &e, 5);
        assert_eq!((both.precision, both.recall, both.f_score), (1.0, 1.0, 1.0));
        let silent = margin_f_score(&s, &e, 5);
        assert_eq!((silent.precision, silent.recall, silent.f_score), (0.0, 0.0, 0.0));
        let spurious = margin_f_score(&e, &s, 5);
        assert_eq!(spurious.f_score, 0.0);
    }

    #[test]
    fn classical_examples() {
        assert_eq!(classical_f_score(&set(&[5]), &set(&[5])).f_score, 1.0);
        assert_eq!(classical_f_score(&set(&[5]), &set(&[6])).f_score, 0.0);
    }

    #[test]
    fn delay_examples() {
        assert_eq!(apply_delay(&set(&[10, 20]), 3), set(&[7, 17]));
        assert_eq!(apply_delay(&set(&[10, 20]), 0), set(&[10, 20]));
        assert_eq!(apply_delay(&set(&[2]), 3), ChangepointSet::empty());
    }

    #[test]
    fn set_validation() {
        assert!(ChangepointSet::new(vec![3, 3]).is_err());
        assert!(ChangepointSet::new(vec![5, 2]).is_err());
        assert!(ChangepointSet::new(vec![0]).is_err());
        assert_eq!(ChangepointSet::from_unsorted(vec![5, -1, 2, 5]), set(&[2, 5]));
        assert!(set(&[4, 9]).check_horizon(8).is_err());
    }

    #[test]
    fn report_json_is_fixed_point() {
        let r = margin_f_score(&set(&[10, 20]), &set(&[12, 30]), 5);
        assert_eq!(
            r.to_json(),
            r#"{"precision":0.500000,"recall":0.500000,"f_score":0.500000,"margin":5,"matches":[[10,12]]}"#
        );
    }

    #[test]
    fn reference_grid_has_64_cells() {
        assert_eq!(GridSpec::reference().cells().len(), 64);
    }

    #[test]
    fn empty_grid_is_rejected() {
        let mut g = GridSpec::reference();
        g.beta0_values.clear();
        let stream = vec![Observation::new(1, vec![0.0])];
        assert!(grid_search(&g, &stream, &ChangepointSet::empty(), 5).is_err());
    }
}
