// SPDX-License-Identifier: MIT OR Apache-2.0

//! Online run-length recursion.
//!
//! After observing `z_t`, run length `r` means the current segment consists of
//! the last `r` observations; `r = 0` means a boundary falls right after `z_t`.
//! Hypothesis `r` in the bank has absorbed exactly those `r` observations.
//!
//! Every step evaluates each hypothesis' predictive log-density, grows each
//! hypothesis by one with weight `1 - h`, collects the changepoint mass with
//! weight `h` at `r = 0`, normalizes, updates the bank and truncates the tail.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::conjugate::{NiwParams, NormalGammaParams};
use crate::error::{Error, Result};
use crate::math::{argmax, ln_gamma, log_add_exp, log_sum_exp, LN_PI};
use crate::preprocess::Observation;

/// Steps at the start of a stream that never emit a detection.
pub const STARTUP_STEPS: usize = 5;

/// Constant hazard `h = 1 / lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HazardSpec {
    rate: f64,
}

impl HazardSpec {
    pub fn new(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 1.0 {
            return Err(Error::Config(format!("hazard lambda must be finite and >= 1, got {lambda}")));
        }
        Ok(Self { rate: 1.0 / lambda })
    }

    /// Zero hazard: no changepoint is ever possible.
    #[cfg(test)]
    pub(crate) fn never() -> Self {
        Self { rate: 0.0 }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn lambda(&self) -> f64 {
        1.0 / self.rate
    }
}

/// Observation model shared by every run-length hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    /// Independent dimensions, one Normal-Gamma prior per dimension.
    Factorized(Vec<NormalGammaParams>),
    /// Joint Gaussian with unknown covariance.
    Multivariate(NiwParams),
}

impl ModelSpec {
    pub fn factorized(d: usize, prior: NormalGammaParams) -> Self {
        Self::Factorized(vec![prior; d])
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Factorized(p) => p.len(),
            Self::Multivariate(p) => p.dim(),
        }
    }
}

/// How a run-length estimate is read off each step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "p")]
pub enum Scheme {
    /// Smallest run length whose probability exceeds `p`.
    Threshold(f64),
    /// Most probable run length.
    MaxProb,
    /// Most probable changepoint set.
    MapSet,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Threshold(_) => "threshold",
            Self::MaxProb => "max_prob",
            Self::MapSet => "map_set",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub model: ModelSpec,
    pub hazard: HazardSpec,
    /// Largest run length kept after each step.
    pub truncation: usize,
    pub scheme: Scheme,
    /// Backward shift applied to every located changepoint.
    pub delay_c: usize,
    /// Candidates within this many steps of an earlier event are dropped.
    pub dedup_margin: usize,
}

impl EngineConfig {
    pub fn new(
        model: ModelSpec,
        hazard: HazardSpec,
        truncation: usize,
        scheme: Scheme,
        delay_c: usize,
    ) -> Result<Self> {
        let config = Self {
            model,
            hazard,
            truncation,
            scheme,
            delay_c,
            dedup_margin: 5,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_dedup_margin(mut self, margin: usize) -> Self {
        self.dedup_margin = margin;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.truncation < 2 {
            return Err(Error::Config(format!(
                "truncation must be at least 2, got {}",
                self.truncation
            )));
        }
        if let Scheme::Threshold(p) = self.scheme {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!("threshold must be in (0, 1), got {p}")));
            }
        }
        match &self.model {
            ModelSpec::Factorized(priors) => {
                if priors.is_empty() {
                    return Err(Error::Config("factorized model needs at least one dimension".into()));
                }
                priors.iter().try_for_each(NormalGammaParams::validate)
            }
            ModelSpec::Multivariate(_) => Ok(()),
        }
    }
}

/// Normalized log-domain distribution over run lengths at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLengthPosterior {
    pub t: i64,
    pub log_probs: Vec<f64>,
}

impl RunLengthPosterior {
    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn prob(&self, r: usize) -> f64 {
        self.log_probs.get(r).map_or(0.0, |lp| lp.exp())
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|lp| lp.exp()).collect()
    }

    pub fn log_normalizer(&self) -> f64 {
        log_sum_exp(&self.log_probs)
    }

    /// Build from linear-domain probabilities (mainly for tests and tools).
    pub fn from_probs(t: i64, probs: &[f64]) -> Self {
        Self {
            t,
            log_probs: probs.iter().map(|p| p.ln()).collect(),
        }
    }
}

/// Smallest run length with probability strictly above `p`.
pub fn extract_threshold(posterior: &RunLengthPosterior, p: f64) -> Option<usize> {
    let log_p = p.ln();
    posterior.log_probs.iter().position(|&lp| lp > log_p)
}

/// Most probable run length; ties go to the shorter run.
pub fn extract_max_prob(posterior: &RunLengthPosterior) -> usize {
    argmax(&posterior.log_probs).unwrap_or(0)
}

/// Running scores of the most probable changepoint set.
///
/// `best_log_score[s]` is the best adjusted score recorded after step `s - 1`;
/// the list starts as `[0, 0]` so that step `n` can look back to any run length
/// `r <= n` through `best_log_score[n - r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapTracker {
    pub best_log_score: Vec<f64>,
    pub argmax_runlength: Option<usize>,
}

/// Result of one most-probable-set update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapDecision {
    /// Run length maximizing the adjusted score.
    pub run_length: usize,
    pub score: f64,
}

impl MapDecision {
    /// The best set places a changepoint at the current step.
    pub fn at_current_step(&self) -> bool {
        self.run_length == 0
    }
}

impl Default for MapTracker {
    fn default() -> Self {
        Self::new()
    }
}

impl MapTracker {
    pub fn new() -> Self {
        Self {
            best_log_score: vec![0.0, 0.0],
            argmax_runlength: None,
        }
    }

    pub fn steps(&self) -> usize {
        self.best_log_score.len() - 2
    }

    /// Adjusted score of each run length for the step about to be recorded.
    pub fn adjusted_scores(&self, posterior: &RunLengthPosterior) -> Vec<f64> {
        let n = self.best_log_score.len() - 1;
        posterior
            .log_probs
            .iter()
            .enumerate()
            .map(|(r, lp)| match n.checked_sub(r) {
                Some(idx) => lp + self.best_log_score[idx],
                None => f64::NEG_INFINITY,
            })
            .collect()
    }

    pub fn extract_map_set(&mut self, posterior: &RunLengthPosterior) -> MapDecision {
        let n = self.best_log_score.len() - 1;
        let (mut r, mut score) = (0, f64::NEG_INFINITY);
        for (i, lp) in posterior.log_probs.iter().enumerate().take(n + 1) {
            let s = lp + self.best_log_score[n - i];
            if s > score {
                (r, score) = (i, s);
            }
        }
        self.best_log_score.push(score);
        self.argmax_runlength = Some(r);
        MapDecision {
            run_length: r,
            score,
        }
    }
}

/// A changepoint emitted by the engine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub flagged_at: i64,
    pub located_at: i64,
    pub scheme: String,
}

/// Factorized hypothesis bank in structure-of-arrays layout: entry `r * d + i`
/// of each column is dimension `i` of run length `r`.
///
/// When every dimension shares kappa and alpha (the usual case), a hypothesis
/// costs one logarithm per step. With `q_i = (x_i - mu_i)^2 / spread_i` the
/// tail term is `ln prod(1 + q_i)`, and the update multiplies each `beta_i`
/// by exactly `1 + q_i`, so the same logarithm advances a running
/// `sum_i ln beta_i` that the spread term needs.
#[derive(Debug, Clone)]
struct FactorizedBank {
    priors: Vec<NormalGammaParams>,
    shared: bool,
    cols: [Vec<f64>; 4],
    scratch: [Vec<f64>; 4],
    /// `lnG(alpha + 1/2) - lnG(alpha)` by entry; alpha depends only on the
    /// prior and `r`, so this only grows.
    gamma: Vec<f64>,
    /// Shared mode: `sum_i ln beta_i` by run length.
    log_beta: Vec<f64>,
    prior_log_beta: f64,
    next_log_beta: Vec<f64>,
    /// Shared mode: `ln prod(1 + q_i)` from the latest predictive pass, NaN
    /// where the product left the normal range.
    log_tail: Vec<f64>,
    /// Shared mode, by run length: `2 (kappa + 1) / kappa`, its log times
    /// `d`, and `1 / (kappa + 1)`.
    row_consts: Vec<RowConsts>,
}

#[derive(Debug, Clone, Copy)]
struct RowConsts {
    ratio: f64,
    log_ratio: f64,
    inv_next: f64,
}

const MU: usize = 0;
const KAPPA: usize = 1;
const ALPHA: usize = 2;
const BETA: usize = 3;

impl FactorizedBank {
    fn new(priors: &[NormalGammaParams]) -> Self {
        let mut bank = Self {
            priors: priors.to_vec(),
            shared: priors
                .iter()
                .all(|p| p.kappa() == priors[0].kappa() && p.alpha() == priors[0].alpha()),
            cols: Default::default(),
            scratch: Default::default(),
            gamma: Vec::new(),
            log_beta: Vec::new(),
            next_log_beta: Vec::new(),
            log_tail: Vec::new(),
            row_consts: Vec::new(),
            prior_log_beta: priors.iter().map(|p| p.beta().ln()).sum(),
        };
        Self::push_priors(&mut bank.cols, priors);
        if bank.shared {
            bank.log_beta.push(bank.prior_log_beta);
        }
        bank
    }

    fn push_priors(cols: &mut [Vec<f64>; 4], priors: &[NormalGammaParams]) {
        for p in priors {
            cols[MU].push(p.mu());
            cols[KAPPA].push(p.kappa());
            cols[ALPHA].push(p.alpha());
            cols[BETA].push(p.beta());
        }
    }

    fn d(&self) -> usize {
        self.priors.len()
    }

    fn len(&self) -> usize {
        self.cols[MU].len() / self.d()
    }

    fn entry(&self, j: usize) -> NormalGammaParams {
        NormalGammaParams::from_parts(
            self.cols[MU][j],
            self.cols[KAPPA][j],
            self.cols[ALPHA][j],
            self.cols[BETA][j],
        )
    }

    fn state(&self, r: usize) -> Option<Vec<NormalGammaParams>> {
        let d = self.d();
        (r < self.len()).then(|| (r * d..(r + 1) * d).map(|j| self.entry(j)).collect())
    }

    fn predictive(&mut self, x: &[f64], out: &mut Vec<f64>) {
        let d = self.d();
        let x = &x[..d];
        let rows = self.len();
        while self.gamma.len() < rows * d {
            let a = self.cols[ALPHA][self.gamma.len()];
            self.gamma.push(ln_gamma(a + 0.5) - ln_gamma(a));
        }
        if !self.shared {
            out.extend((0..rows * d).step_by(d).map(|o| {
                (0..d)
                    .map(|i| self.entry(o + i).predictive_logpdf_with(x[i], self.gamma[o + i]))
                    .sum::<f64>()
            }));
            return;
        }
        while self.row_consts.len() < rows {
            let k = self.cols[KAPPA][self.row_consts.len() * d];
            let ratio = 2.0 * (k + 1.0) / k;
            self.row_consts.push(RowConsts {
                ratio,
                log_ratio: d as f64 * ratio.ln(),
                inv_next: 1.0 / (k + 1.0),
            });
        }
        let base = -0.5 * d as f64 * LN_PI;
        let [mu, _, alpha, beta] = &self.cols;
        self.log_tail.clear();
        for r in 0..rows {
            let o = r * d;
            let (mu, beta) = (&mu[o..o + d], &beta[o..o + d]);
            let ratio = self.row_consts[r].ratio;
            let (mut spread, mut tail) = (1.0, 1.0);
            for ((&b, &m), &xi) in beta.iter().zip(mu).zip(x) {
                let sp = b * ratio;
                let dev = xi - m;
                spread *= sp;
                tail *= sp + dev * dev;
            }
            let lt = if spread.is_normal() && tail.is_normal() {
                (tail / spread).ln()
            } else {
                f64::NAN
            };
            self.log_tail.push(lt);
            out.push(if lt.is_nan() {
                (0..d)
                    .map(|i| self.entry(o + i).predictive_logpdf_with(x[i], self.gamma[o + i]))
                    .sum()
            } else {
                let log_spread = self.log_beta[r] + self.row_consts[r].log_ratio;
                d as f64 * self.gamma[o] + base - 0.5 * log_spread - (alpha[o] + 0.5) * lt
            });
        }
    }

    /// Must follow `predictive` with the same `x`.
    fn advance(&mut self, x: &[f64], keep: usize) {
        let d = self.d();
        let x = &x[..d];
        let survivors = self.len().min(keep - 1);
        let m = survivors * d;
        for c in &mut self.scratch {
            c.clear();
        }
        Self::push_priors(&mut self.scratch, &self.priors);
        for c in &mut self.scratch {
            c.resize(m + d, 0.0);
        }
        let [mu, kappa, alpha, beta] = &self.cols;
        let [nmu, nkappa, nalpha, nbeta] = &mut self.scratch;
        for (n, &k) in nkappa[d..].iter_mut().zip(&kappa[..m]) {
            *n = k + 1.0;
        }
        for (n, &a) in nalpha[d..].iter_mut().zip(&alpha[..m]) {
            *n = a + 0.5;
        }
        for r in 0..survivors {
            let (o, no) = (r * d, (r + 1) * d);
            let (mu, beta) = (&mu[o..o + d], &beta[o..o + d]);
            let (nmu, nbeta) = (&mut nmu[no..no + d], &mut nbeta[no..no + d]);
            if self.shared {
                let k = kappa[o];
                let inv = self.row_consts[r].inv_next;
                let half_k_inv = 0.5 * k * inv;
                let cells = nmu.iter_mut().zip(nbeta.iter_mut()).zip(mu.iter().zip(beta)).zip(x);
                for (((nm, nb), (&m, &b)), &xi) in cells {
                    let dev = xi - m;
                    *nm = m + dev * inv;
                    *nb = b + half_k_inv * dev * dev;
                }
            } else {
                for i in 0..d {
                    let next = NormalGammaParams::from_parts(mu[i], kappa[o + i], 1.0, beta[i])
                        .update_unchecked(x[i]);
                    nmu[i] = next.mu();
                    nbeta[i] = next.beta();
                }
            }
        }
        if self.shared {
            self.next_log_beta.clear();
            self.next_log_beta.push(self.prior_log_beta);
            for r in 0..survivors {
                let lt = self.log_tail[r];
                self.next_log_beta.push(if lt.is_nan() {
                    nbeta[(r + 1) * d..(r + 2) * d].iter().map(|b| b.ln()).sum()
                } else {
                    self.log_beta[r] + lt
                });
            }
            std::mem::swap(&mut self.log_beta, &mut self.next_log_beta);
        }
        std::mem::swap(&mut self.cols, &mut self.scratch);
    }
}

#[derive(Debug, Clone)]
enum Bank {
    Factorized(FactorizedBank),
    Multivariate {
        prior: NiwParams,
        states: Vec<NiwParams>,
        /// Gamma-function term by run length; nu depends only on `r`.
        gamma: Vec<f64>,
    },
}

impl Bank {
    fn new(model: &ModelSpec) -> Self {
        match model {
            ModelSpec::Factorized(priors) => Self::Factorized(FactorizedBank::new(priors)),
            ModelSpec::Multivariate(prior) => Self::Multivariate {
                prior: prior.clone(),
                states: vec![prior.clone()],
                gamma: Vec::new(),
            },
        }
    }

    fn len(&self) -> usize {
        match self {
            Self::Factorized(bank) => bank.len(),
            Self::Multivariate { states, .. } => states.len(),
        }
    }

    /// Predictive log-density of `x` under every hypothesis, written to `out`.
    fn predictive(&mut self, x: &[f64], out: &mut Vec<f64>) -> Result<()> {
        out.clear();
        match self {
            Self::Factorized(bank) => bank.predictive(x, out),
            Self::Multivariate { states, gamma, .. } => {
                while gamma.len() < states.len() {
                    gamma.push(states[gamma.len()].gamma_term());
                }
                for (s, &g) in states.iter().zip(gamma.iter()) {
                    out.push(s.predictive_logpdf_with(x, g)?);
                }
            }
        }
        Ok(())
    }

    /// Fresh prior at `r = 0`, every surviving hypothesis absorbs `x`, and at
    /// most `keep` hypotheses are retained.
    fn advance(&mut self, x: &[f64], keep: usize) {
        match self {
            Self::Factorized(bank) => bank.advance(x, keep),
            Self::Multivariate { prior, states, .. } => {
                let survivors = states.len().min(keep - 1);
                let mut next = Vec::with_capacity(survivors + 1);
                next.push(prior.clone());
                next.extend(states.iter().take(survivors).map(|s| s.update_unchecked(x)));
                *states = next;
            }
        }
    }
}

/// Sequential run-length filter with changepoint extraction.
#[derive(Debug, Clone)]
pub struct BocdEngine {
    config: EngineConfig,
    posterior: RunLengthPosterior,
    bank: Bank,
    tracker: MapTracker,
    steps: usize,
    last_t: Option<i64>,
    /// Raw (undelayed) changepoint locations already reported, plus the stream origin.
    flagged: BTreeSet<i64>,
    log_hazard: f64,
    log_survival: f64,
    pred: Vec<f64>,
    next: Vec<f64>,
}

impl BocdEngine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hazard.rate();
        Ok(Self {
            bank: Bank::new(&config.model),
            posterior: RunLengthPosterior {
                t: 0,
                log_probs: vec![0.0],
            },
            tracker: MapTracker::new(),
            steps: 0,
            last_t: None,
            flagged: BTreeSet::new(),
            log_hazard: h.ln(),
            log_survival: (-h).ln_1p(),
            pred: Vec::new(),
            next: Vec::new(),
            config,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn posterior(&self) -> &RunLengthPosterior {
        &self.posterior
    }

    pub fn tracker(&self) -> &MapTracker {
        &self.tracker
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn hypothesis_count(&self) -> usize {
        self.bank.len()
    }

    /// Per-dimension state of hypothesis `r` (factorized model only).
    pub fn factorized_state(&self, r: usize) -> Option<Vec<NormalGammaParams>> {
        match &self.bank {
            Bank::Factorized(bank) => bank.state(r),
            Bank::Multivariate { .. } => None,
        }
    }

    /// Joint state of hypothesis `r` (multivariate model only).
    pub fn multivariate_state(&self, r: usize) -> Option<&NiwParams> {
        match &self.bank {
            Bank::Multivariate { states, .. } => states.get(r),
            Bank::Factorized(_) => None,
        }
    }

    /// Ingest one observation; returns a detection when the scheme reports a
    /// changepoint location not seen before.
    pub fn step(&mut self, z: &Observation) -> Result<Option<Detection>> {
        let d = self.config.model.dim();
        if z.dim() != d {
            return Err(Error::Dimension {
                expected: d,
                got: z.dim(),
            });
        }
        if let Some(i) = z.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "observation at t={} has non-finite component {i}",
                z.t
            )));
        }
        if let Some(prev) = self.last_t {
            if z.t != prev + 1 {
                return Err(Error::TimeOrder {
                    previous: prev,
                    got: z.t,
                });
            }
        } else {
            self.flagged.insert(z.t - 1);
        }

        self.bank.predictive(&z.values, &mut self.pred)?;

        let old = &self.posterior.log_probs;
        let keep = self.config.truncation + 1;
        self.next.clear();
        self.next.push(f64::NEG_INFINITY);
        self.next.extend(old.iter().zip(&self.pred).map(|(lp, pi)| lp + pi));
        // One exponential pass gives both the changepoint mass (all growth
        // terms) and the normalizer (growth terms that survive truncation).
        let growth = &self.next[1..];
        let peak = growth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mut total, mut kept) = (0.0, 0.0);
        if peak.is_finite() {
            let split = growth.len().min(keep - 1);
            for v in &growth[..split] {
                kept += (v - peak).exp();
            }
            total = kept;
            for v in &growth[split..] {
                total += (v - peak).exp();
            }
        }
        let log_total = peak + total.ln();
        let changepoint = log_total + self.log_hazard;
        let norm = log_add_exp(changepoint, peak + kept.ln() + self.log_survival);
        if !norm.is_finite() {
            return Err(Error::Domain(format!(
                "run-length evidence is not finite at t={}",
                z.t
            )));
        }
        self.next.truncate(keep);
        self.next[0] = changepoint;
        let shift = self.log_survival - norm;
        self.next[0] -= norm;
        for v in &mut self.next[1..] {
            *v += shift;
        }
        std::mem::swap(&mut self.posterior.log_probs, &mut self.next);
        self.posterior.t = z.t;
        self.bank.advance(&z.values, keep);

        self.steps += 1;
        self.last_t = Some(z.t);

        let map = self.tracker.extract_map_set(&self.posterior);
        let run_length = match self.config.scheme {
            Scheme::Threshold(p) => extract_threshold(&self.posterior, p),
            Scheme::MaxProb => Some(extract_max_prob(&self.posterior)),
            Scheme::MapSet => Some(map.run_length),
        };
        Ok(run_length.and_then(|r| self.emit(z.t, r)))
    }

    fn emit(&mut self, t: i64, run_length: usize) -> Option<Detection> {
        if self.steps <= STARTUP_STEPS.max(self.config.delay_c) {
            return None;
        }
        let raw = t - run_length as i64;
        let m = self.config.dedup_margin as i64;
        if self.flagged.range(raw - m..=raw + m).next().is_some() {
            return None;
        }
        self.flagged.insert(raw);
        Some(Detection {
            flagged_at: t,
            located_at: raw - self.config.delay_c as i64,
            scheme: self.config.scheme.name().to_string(),
        })
    }

    /// Run a whole stream, returning every detection in emission order.
    pub fn run(&mut self, stream: &[Observation]) -> Result<Vec<Detection>> {
        let mut out = Vec::new();
        for z in stream {
            if let Some(det) = self.step(z)? {
                out.push(det);
            }
        }
        Ok(out)
    }
}

/// Build an engine in one call.
pub fn engine_init(
    model: ModelSpec,
    hazard: HazardSpec,
    truncation: usize,
    scheme: Scheme,
    delay_c: usize,
) -> Result<BocdEngine> {
    BocdEngine::new(EngineConfig::new(model, hazard, truncation, scheme, delay_c)?)
}
