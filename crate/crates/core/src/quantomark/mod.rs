//! Quanto-correlation marking: broker package conversion, the gamma(t)
//! term structure, and cached q(t) / d/dt log q(t) evaluators.

mod broker;

pub use broker::{broker_from_gamma, gamma_from_broker, gamma_pillars_from_quotes};

use crate::error::{EngineError, Result};
use crate::localvol::AtmVolCurve;
use crate::marketdata::{MarketSnapshot, QuantoQuoteSet, QuoteSide};
use crate::math::MonotoneCubic;

/// Default spacing of the q(t) cache grid: one calendar day.
pub const DEFAULT_CACHE_SPACING: f64 = 1.0 / 365.0;

/// Non-parametric quanto-correlation term structure: monotone cubic spline
/// in time between pillars, constant extrapolation outside.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantoCorrelationCurve {
    spline: MonotoneCubic,
}

impl QuantoCorrelationCurve {
    pub fn new(pillars: Vec<(f64, f64)>) -> Result<Self> {
        if pillars.is_empty() {
            return Err(EngineError::invalid("correlation curve needs pillars"));
        }
        let mut times = Vec::with_capacity(pillars.len());
        let mut gammas = Vec::with_capacity(pillars.len());
        for (t, g) in pillars {
            if !(t.is_finite() && t > 0.0) {
                return Err(EngineError::invalid(format!(
                    "pillar times must be positive, got {t}"
                )));
            }
            if !(-1.0..=1.0).contains(&g) {
                return Err(EngineError::invalid(format!(
                    "correlation pillar outside [-1, 1]: {g}"
                )));
            }
            times.push(t);
            gammas.push(g);
        }
        Ok(Self {
            spline: MonotoneCubic::new(times, gammas)?,
        })
    }

    pub fn flat(gamma: f64) -> Result<Self> {
        Self::new(vec![(1.0, gamma)])
    }

    /// gamma(t); node reproduction is exact, extrapolation constant.
    pub fn eval(&self, t: f64) -> f64 {
        self.spline.eval(t)
    }

    pub fn pillar_times(&self) -> &[f64] {
        self.spline.xs()
    }

    pub fn pillar_values(&self) -> &[f64] {
        self.spline.ys()
    }
}

/// Marked quanto correction: gamma curve plus dense caches of q(t) and
/// d/dt log q(t) on a regular grid.
///
/// q(t) = exp(-gamma(t) sigma_S(t,1) sigma_X(t,1) t); the log-derivative
/// cache is a central finite difference of log q on the grid (one-sided at
/// the ends), so the two caches are consistent by construction.
#[derive(Debug, Clone)]
pub struct QuantoMark {
    curve: QuantoCorrelationCurve,
    spacing: f64,
    /// log q at grid times 0, h, 2h, ...
    log_q: Vec<f64>,
    dlog_q: Vec<f64>,
}

impl QuantoMark {
    /// Builds the mark from gamma pillars and the two ATM vol curves,
    /// caching out to `horizon` (extended one spacing past it).
    pub fn build(
        curve: QuantoCorrelationCurve,
        atm_asset: &AtmVolCurve,
        atm_fx: &AtmVolCurve,
        horizon: f64,
        spacing: f64,
    ) -> Result<Self> {
        if !(horizon > 0.0 && spacing > 0.0) {
            return Err(EngineError::invalid(format!(
                "mark horizon and spacing must be positive, got {horizon}, {spacing}"
            )));
        }
        let n = (horizon / spacing).ceil() as usize + 2;
        let mut log_q = Vec::with_capacity(n);
        for i in 0..n {
            let t = i as f64 * spacing;
            let g = curve.eval(t);
            let exponent = -g * atm_asset.eval(t) * atm_fx.eval(t) * t;
            if !exponent.is_finite() {
                return Err(EngineError::NumericalFailure(format!(
                    "non-finite quanto correction at t={t}"
                )));
            }
            log_q.push(exponent);
        }
        let mut dlog_q = Vec::with_capacity(n);
        for i in 0..n {
            let d = if i == 0 {
                (log_q[1] - log_q[0]) / spacing
            } else if i == n - 1 {
                (log_q[n - 1] - log_q[n - 2]) / spacing
            } else {
                (log_q[i + 1] - log_q[i - 1]) / (2.0 * spacing)
            };
            dlog_q.push(d);
        }
        Ok(Self {
            curve,
            spacing,
            log_q,
            dlog_q,
        })
    }

    /// Convenience constructor from a quote set: converts every pillar to a
    /// correlation (see [`gamma_pillars_from_quotes`]) and caches to the
    /// last pillar or `horizon`, whichever is larger.
    pub fn from_quotes(
        quotes: &QuantoQuoteSet,
        snapshot: &MarketSnapshot,
        atm_asset: &AtmVolCurve,
        atm_fx: &AtmVolCurve,
        side: QuoteSide,
        horizon: f64,
        spacing: f64,
    ) -> Result<Self> {
        let pillars = gamma_pillars_from_quotes(quotes, snapshot, atm_asset, atm_fx, side)?;
        let last = pillars.last().expect("validated non-empty").0;
        let curve = QuantoCorrelationCurve::new(pillars)?;
        Self::build(curve, atm_asset, atm_fx, horizon.max(last), spacing)
    }

    pub fn curve(&self) -> &QuantoCorrelationCurve {
        &self.curve
    }

    pub fn cache_spacing(&self) -> f64 {
        self.spacing
    }

    pub fn cache_horizon(&self) -> f64 {
        (self.log_q.len() - 1) as f64 * self.spacing
    }

    /// q(t), interpolating log q linearly on the cache grid; q(0) = 1.
    pub fn q(&self, t: f64) -> f64 {
        self.log_q_at(t).exp()
    }

    pub fn log_q_at(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let pos = t / self.spacing;
        let n = self.log_q.len();
        if pos >= (n - 1) as f64 {
            // Extend with the terminal slope.
            let slope = self.dlog_q[n - 1];
            return self.log_q[n - 1] + slope * (t - (n - 1) as f64 * self.spacing);
        }
        let i = pos as usize;
        let w = pos - i as f64;
        self.log_q[i] * (1.0 - w) + self.log_q[i + 1] * w
    }

    /// d/dt log q(t) from the cache (linear interpolation between grid
    /// values; constant beyond the cache).
    pub fn dlog_q(&self, t: f64) -> f64 {
        let pos = (t.max(0.0)) / self.spacing;
        let n = self.dlog_q.len();
        if pos >= (n - 1) as f64 {
            return self.dlog_q[n - 1];
        }
        let i = pos as usize;
        let w = pos - i as f64;
        self.dlog_q[i] * (1.0 - w) + self.dlog_q[i + 1] * w
    }

    /// Average of d/dt log q over a step, exact on the cache's linear
    /// interpolant; the simulation drift uses this.
    pub fn dlog_q_step(&self, t0: f64, t1: f64) -> f64 {
        if t1 <= t0 {
            return self.dlog_q(t0);
        }
        (self.log_q_at(t1) - self.log_q_at(t0)) / (t1 - t0)
    }

    /// Audit rows `(time_yf, gamma, q, dlogq)` on the cache grid.
    pub fn dump_rows(&self) -> Vec<(f64, f64, f64, f64)> {
        (0..self.log_q.len())
            .map(|i| {
                let t = i as f64 * self.spacing;
                (t, self.curve.eval(t), self.log_q[i].exp(), self.dlog_q[i])
            })
            .collect()
    }
}
