// SPDX-License-Identifier: MIT OR Apache-2.0

//! Conjugate Gaussian models: scalar Normal-Gamma and joint Normal-Inverse-Wishart.
//!
//! Both families are value types. Updates return a new parameter set and never
//! touch the receiver; predictive densities are natural-log Student-t densities.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{ln_gamma, LN_PI};

const SYMMETRY_TOL: f64 = 1e-12;

/// Natural-log density of an observation under a posterior predictive.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PredictiveLogDensity(pub f64);

impl PredictiveLogDensity {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Normal-Gamma prior/posterior over an unknown mean and precision.
///
/// The mean is `N(mu, 1 / (kappa * tau))` given precision `tau`, and
/// `tau ~ Gamma(shape = alpha, rate = beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalGammaParams {
    mu: f64,
    kappa: f64,
    alpha: f64,
    beta: f64,
}

impl NormalGammaParams {
    pub fn new(mu: f64, kappa: f64, alpha: f64, beta: f64) -> Result<Self> {
        let p = Self {
            mu,
            kappa,
            alpha,
            beta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(Error::Domain(format!("mu must be finite, got {}", self.mu)));
        }
        for (name, v) in [("kappa", self.kappa), ("alpha", self.alpha), ("beta", self.beta)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Domain(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Unvalidated constructor for state the engine already knows is valid.
    #[inline]
    pub(crate) fn from_parts(mu: f64, kappa: f64, alpha: f64, beta: f64) -> Self {
        Self { mu, kappa, alpha, beta }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Degrees of freedom, location and scale of the Student-t predictive.
    pub fn student_t(&self) -> (f64, f64, f64) {
        let scale2 = self.beta * (self.kappa + 1.0) / (self.alpha * self.kappa);
        (2.0 * self.alpha, self.mu, scale2.sqrt())
    }

    /// Log density of `x` under the posterior predictive.
    pub fn predictive_logpdf(&self, x: f64) -> Result<PredictiveLogDensity> {
        self.validate()?;
        if !x.is_finite() {
            return Err(Error::Domain(format!("observation must be finite, got {x}")));
        }
        let norm = ln_gamma(self.alpha + 0.5) - ln_gamma(self.alpha);
        Ok(PredictiveLogDensity(self.predictive_logpdf_with(x, norm)))
    }

    /// Hot-path predictive: `gamma_term` is `lnG(alpha + 1/2) - lnG(alpha)`.
    #[inline]
    pub(crate) fn predictive_logpdf_with(&self, x: f64, gamma_term: f64) -> f64 {
        let spread = 2.0 * self.beta * (self.kappa + 1.0) / self.kappa;
        let dev = x - self.mu;
        gamma_term
            - 0.5 * (LN_PI + spread.ln())
            - (self.alpha + 0.5) * (dev * dev / spread).ln_1p()
    }

    /// Posterior after absorbing one observation.
    pub fn update(&self, x: f64) -> Result<Self> {
        self.validate()?;
        if !x.is_finite() {
            return Err(Error::Domain(format!("observation must be finite, got {x}")));
        }
        Ok(self.update_unchecked(x))
    }

    #[inline]
    pub(crate) fn update_unchecked(&self, x: f64) -> Self {
        let kappa = self.kappa + 1.0;
        let dev = x - self.mu;
        Self {
            mu: (self.kappa * self.mu + x) / kappa,
            kappa,
            alpha: self.alpha + 0.5,
            beta: self.beta + self.kappa * dev * dev / (2.0 * kappa),
        }
    }
}

pub fn ng_posterior_predictive_logpdf(
    params: &NormalGammaParams,
    x: f64,
) -> Result<PredictiveLogDensity> {
    params.predictive_logpdf(x)
}

pub fn ng_update(params: &NormalGammaParams, x: f64) -> Result<NormalGammaParams> {
    params.update(x)
}

/// Normal-Inverse-Wishart prior/posterior over a mean vector and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct NiwParams {
    mu: DVector<f64>,
    kappa: f64,
    nu: f64,
    psi: DMatrix<f64>,
}

impl NiwParams {
    pub fn new(mu: DVector<f64>, kappa: f64, nu: f64, psi: DMatrix<f64>) -> Result<Self> {
        let d = mu.len();
        if d == 0 {
            return Err(Error::Domain("NIW dimension must be at least 1".into()));
        }
        if psi.nrows() != d || psi.ncols() != d {
            return Err(Error::Dimension {
                expected: d,
                got: psi.nrows().max(psi.ncols()),
            });
        }
        if mu.iter().any(|v| !v.is_finite()) || psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("NIW mu and psi must be finite".into()));
        }
        if !kappa.is_finite() || kappa <= 0.0 {
            return Err(Error::Domain(format!("kappa must be finite and > 0, got {kappa}")));
        }
        if !nu.is_finite() || nu <= d as f64 - 1.0 {
            return Err(Error::Domain(format!("nu must exceed d - 1 = {}, got {nu}", d - 1)));
        }
        for i in 0..d {
            for j in 0..i {
                if (psi[(i, j)] - psi[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::Domain(format!("psi is not symmetric at ({i}, {j})")));
                }
            }
        }
        if psi.clone().cholesky().is_none() {
            return Err(Error::Domain("psi is not positive definite".into()));
        }
        Ok(Self { mu, kappa, nu, psi })
    }

    /// Convenience constructor from row-major slices.
    pub fn from_slices(mu: &[f64], kappa: f64, nu: f64, psi_rows: &[f64]) -> Result<Self> {
        let d = mu.len();
        if psi_rows.len() != d * d {
            return Err(Error::Dimension {
                expected: d * d,
                got: psi_rows.len(),
            });
        }
        Self::new(
            DVector::from_column_slice(mu),
            kappa,
            nu,
            DMatrix::from_row_slice(d, d, psi_rows),
        )
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    fn check_obs(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("observation must be finite".into()));
        }
        Ok(())
    }

    /// `lnG((nu' + d) / 2) - lnG(nu' / 2)` with `nu' = nu - d + 1`.
    pub(crate) fn gamma_term(&self) -> f64 {
        let d = self.dim() as f64;
        let df = self.nu - d + 1.0;
        ln_gamma(0.5 * (df + d)) - ln_gamma(0.5 * df)
    }

    /// Log density of `x` under the multivariate Student-t predictive.
    pub fn predictive_logpdf(&self, x: &[f64]) -> Result<PredictiveLogDensity> {
        self.check_obs(x)?;
        self.predictive_logpdf_with(x, self.gamma_term())
            .map(PredictiveLogDensity)
    }

    pub(crate) fn predictive_logpdf_with(&self, x: &[f64], gamma_term: f64) -> Result<f64> {
        let d = self.dim();
        let df = self.nu - d as f64 + 1.0;
        let chol = self
            .psi
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Domain("psi is not positive definite".into()))?;
        // Scale matrix is c * psi.
        let c = (self.kappa + 1.0) / (self.kappa * df);
        let dev = DVector::from_iterator(d, x.iter().zip(self.mu.iter()).map(|(a, m)| a - m));
        let solved = chol.solve(&dev);
        let maha = dev.dot(&solved) / c;
        let log_det_psi: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_det = d as f64 * c.ln() + log_det_psi;
        let df_d = df + d as f64;
        Ok(gamma_term
            - 0.5 * d as f64 * (df.ln() + LN_PI)
            - 0.5 * log_det
            - 0.5 * df_d * (maha / df).ln_1p())
    }

    /// Posterior after absorbing one observation (rank-one scale update).
    pub fn update(&self, x: &[f64]) -> Result<Self> {
        self.check_obs(x)?;
        Ok(self.update_unchecked(x))
    }

    pub(crate) fn update_unchecked(&self, x: &[f64]) -> Self {
        let d = self.dim();
        let kappa = self.kappa + 1.0;
        let dev = DVector::from_iterator(d, x.iter().zip(self.mu.iter()).map(|(a, m)| a - m));
        let w = self.kappa / kappa;
        let mut psi = self.psi.clone();
        for i in 0..d {
            for j in 0..d {
                psi[(i, j)] += w * (dev[i] * dev[j]);
            }
        }
        let mu = DVector::from_iterator(
            d,
            x.iter()
                .zip(self.mu.iter())
                .map(|(a, m)| (self.kappa * m + a) / kappa),
        );
        Self {
            mu,
            kappa,
            nu: self.nu + 1.0,
            psi,
        }
    }
}

pub fn niw_posterior_predictive_logpdf(
    params: &NiwParams,
    x: &[f64],
) -> Result<PredictiveLogDensity> {
    params.predictive_logpdf(x)
}

pub fn niw_update(params: &NiwParams, x: &[f64]) -> Result<NiwParams> {
    params.update(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> NormalGammaParams {
        NormalGammaParams::new(0.0, 1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn ng_update_at_prior_mean() {
        let p = unit().update(0.0).unwrap();
        assert_eq!(p, NormalGammaParams::new(0.0, 2.0, 1.5, 1.0).unwrap());
    }

    #[test]
    fn ng_update_off_mean() {
        let p = unit().update(2.0).unwrap();
        assert_eq!(p, NormalGammaParams::new(1.0, 2.0, 1.5, 2.0).unwrap());
    }

    #[test]
    fn ng_update_is_pure() {
        let p = unit();
        let a = p.update(0.7).unwrap();
        let b = p.update(0.7).unwrap();
        assert_eq!(p, unit());
        assert_eq!(a.mu().to_bits(), b.mu().to_bits());
        assert_eq!(a.beta().to_bits(), b.beta().to_bits());
    }

    #[test]
    fn ng_predictive_at_zero() {
        // df=2, scale^2=2: f(0) = G(1.5) / (G(1) sqrt(4 pi)) = 1/4
        let lp = unit().predictive_logpdf(0.0).unwrap().value();
        assert!((lp - 0.25f64.ln()).abs() < 1e-14, "{lp}");
    }

    #[test]
    fn ng_predictive_symmetric() {
        let p = NormalGammaParams::new(1.3, 2.5, 3.0, 0.4).unwrap();
        for c in [0.1, 1.0, 7.5] {
            let a = p.predictive_logpdf(1.3 + c).unwrap();
            let b = p.predictive_logpdf(1.3 - c).unwrap();
            assert!((a.value() - b.value()).abs() < 1e-13);
        }
    }

    #[test]
    fn ng_rejects_bad_inputs() {
        assert!(NormalGammaParams::new(0.0, 0.0, 1.0, 1.0).is_err());
        assert!(NormalGammaParams::new(0.0, 1.0, -1.0, 1.0).is_err());
        assert!(NormalGammaParams::new(f64::NAN, 1.0, 1.0, 1.0).is_err());
        assert!(NormalGammaParams::new(0.0, 1.0, 1.0, f64::INFINITY).is_err());
        assert!(unit().predictive_logpdf(f64::NAN).is_err());
        assert!(unit().update(f64::INFINITY).is_err());
    }

    #[test]
    fn niw_validation() {
        assert!(NiwParams::from_slices(&[0.0, 0.0], 1.0, 1.0 + 1e-9, &[1.0, 0.0, 0.0, 1.0]).is_ok());
        // nu must exceed d - 1
        assert!(NiwParams::from_slices(&[0.0, 0.0], 1.0, 1.0 - 1e-9, &[1.0, 0.0, 0.0, 1.0]).is_err());
        // asymmetric
        assert!(NiwParams::from_slices(&[0.0, 0.0], 1.0, 3.0, &[1.0, 0.1, 0.0, 1.0]).is_err());
        // indefinite
        assert!(NiwParams::from_slices(&[0.0, 0.0], 1.0, 3.0, &[1.0, 2.0, 2.0, 1.0]).is_err());
        assert!(NiwParams::from_slices(&[0.0, 0.0], 1.0, 3.0, &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn niw_update_at_mean_keeps_psi() {
        let p = NiwParams::from_slices(&[0.5, -1.0], 2.0, 4.0, &[2.0, 0.3, 0.3, 1.0]).unwrap();
        let q = p.update(&[0.5, -1.0]).unwrap();
        assert_eq!(q.psi(), p.psi());
        assert_eq!(q.mu(), p.mu());
        assert_eq!(q.kappa(), 3.0);
        assert_eq!(q.nu(), 5.0);
    }

    #[test]
    fn niw_dimension_mismatch() {
        let p = NiwParams::from_slices(&[0.0, 0.0], 1.0, 3.0, &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(
            p.predictive_logpdf(&[1.0]),
            Err(Error::Dimension { expected: 2, got: 1 })
        ));
        assert!(p.update(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn niw_symmetric_predictive() {
        let p = NiwParams::from_slices(&[0.5, -1.0], 2.0, 4.0, &[2.0, 0.3, 0.3, 1.0]).unwrap();
        let a = p.predictive_logpdf(&[0.5 + 0.7, -1.0 - 0.2]).unwrap();
        let b = p.predictive_logpdf(&[0.5 - 0.7, -1.0 + 0.2]).unwrap();
        assert!((a.value() - b.value()).abs() < 1e-13);
    }
}
