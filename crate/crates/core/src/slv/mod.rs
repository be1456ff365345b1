//! Stochastic-local-volatility extension: square-root variance processes
//! with leverage functions calibrated through the marginal-matching
//! relations `eta^2(t,s) = l_s^2(t,s) E[v_t | s]` (and the FX analogue).

mod calibrate;

pub use calibrate::{calibrate_leverage, LeverageCalibConfig};

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};
use crate::localvol::LocalVolSurface;

/// Leverage functions share the local-vol node/interpolation scheme.
pub type LeverageSurface = LocalVolSurface;

/// Square-root (CIR-type) variance process parameters for one factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceSpec {
    pub mean_reversion: f64,
    pub long_run_variance: f64,
    pub vol_of_variance: f64,
    pub initial_variance: f64,
    /// Correlation between the variance driver and the factor's own price
    /// driver; held fixed, never calibrated.
    pub price_corr: f64,
}

impl VarianceSpec {
    /// Deterministic unit variance: the SLV engine degenerates to pure
    /// local vol under this spec.
    pub fn unit() -> Self {
        Self {
            mean_reversion: 1.0,
            long_run_variance: 1.0,
            vol_of_variance: 0.0,
            initial_variance: 1.0,
            price_corr: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (v, name) in [
            (self.mean_reversion, "mean_reversion"),
            (self.long_run_variance, "long_run_variance"),
            (self.initial_variance, "initial_variance"),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(EngineError::invalid(format!(
                    "variance spec {name} must be positive, got {v}"
                )));
            }
        }
        if !(self.vol_of_variance.is_finite() && self.vol_of_variance >= 0.0) {
            return Err(EngineError::invalid(format!(
                "vol_of_variance must be non-negative, got {}",
                self.vol_of_variance
            )));
        }
        if !(-1.0..=1.0).contains(&self.price_corr) {
            return Err(EngineError::invalid(format!(
                "price_corr must be in [-1, 1], got {}",
                self.price_corr
            )));
        }
        Ok(())
    }

    /// 2 kappa theta / xi^2; reported, not enforced.
    pub fn feller_ratio(&self) -> f64 {
        if self.vol_of_variance == 0.0 {
            f64::INFINITY
        } else {
            2.0 * self.mean_reversion * self.long_run_variance
                / (self.vol_of_variance * self.vol_of_variance)
        }
    }

    /// Full-truncation Euler step; the effective variance fed to the price
    /// equation is `v.max(0)`.
    #[inline]
    pub fn step(&self, v: f64, dt: f64, sqrt_dt: f64, z: f64) -> f64 {
        let v_pos = v.max(0.0);
        v + self.mean_reversion * (self.long_run_variance - v_pos) * dt
            + self.vol_of_variance * v_pos.sqrt() * sqrt_dt * z
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_spec_stays_exactly_one() {
        let spec = VarianceSpec::unit();
        let mut v = 1.0;
        for i in 0..100 {
            v = spec.step(v, 1.0 / 24.0, (1.0f64 / 24.0).sqrt(), (i as f64).sin());
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn full_truncation_keeps_effective_variance_nonnegative() {
        let spec = VarianceSpec {
            mean_reversion: 2.0,
            long_run_variance: 1.0,
            vol_of_variance: 2.5,
            initial_variance: 0.2,
            price_corr: -0.5,
        };
        // Hammer with large negative shocks; v may go negative but the
        // truncated value used downstream never does, and the scheme
        // cannot produce NaN.
        let mut v: f64 = 0.2;
        for _ in 0..1000 {
            v = spec.step(v, 0.05, 0.05f64.sqrt(), -3.0);
            assert!(v.is_finite());
            assert!(v.max(0.0) >= 0.0);
        }
    }

    #[test]
    fn feller_ratio_reported() {
        let spec = VarianceSpec {
            mean_reversion: 2.0,
            long_run_variance: 1.0,
            vol_of_variance: 0.5,
            initial_variance: 1.0,
            price_corr: 0.0,
        };
        assert!((spec.feller_ratio() - 16.0).abs() < 1e-12);
        assert!(VarianceSpec::unit().feller_ratio().is_infinite());
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let mut spec = VarianceSpec::unit();
        spec.mean_reversion = -1.0;
        assert!(spec.validate().is_err());
        let mut spec = VarianceSpec::unit();
        spec.price_corr = 1.5;
        assert!(spec.validate().is_err());
        let mut spec = VarianceSpec::unit();
        spec.vol_of_variance = -0.1;
        assert!(spec.validate().is_err());
    }
}
