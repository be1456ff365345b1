//! Discount and forward curves with deterministic-rate conventions.

use crate::error::{EngineError, Result};

/// Deterministic discount curve for one currency.
///
/// Interpolates log discount factors linearly in time (the implicit node
/// (0, 1) is always present) and extrapolates flat instantaneous rates
/// beyond the last pillar.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscountCurve {
    currency: String,
    times: Vec<f64>,
    log_dfs: Vec<f64>,
}

impl DiscountCurve {
    pub fn new(currency: impl Into<String>, pillars: Vec<(f64, f64)>) -> Result<Self> {
        if pillars.is_empty() {
            return Err(EngineError::invalid("discount curve needs at least one pillar"));
        }
        let mut times = Vec::with_capacity(pillars.len());
        let mut log_dfs = Vec::with_capacity(pillars.len());
        let mut prev = 0.0;
        for (i, &(t, df)) in pillars.iter().enumerate() {
            if !t.is_finite() || t <= prev {
                return Err(EngineError::invalid(format!(
                    "discount pillar times must be positive and strictly increasing, \
                     pillar {i} has t={t}"
                )));
            }
            if !df.is_finite() || df <= 0.0 {
                return Err(EngineError::invalid(format!(
                    "discount factors must be positive, pillar {i} has df={df}"
                )));
            }
            times.push(t);
            log_dfs.push(df.ln());
            prev = t;
        }
        Ok(Self {
            currency: currency.into(),
            times,
            log_dfs,
        })
    }

    /// Flat curve `exp(-rate * t)`, handy for fixtures.
    pub fn flat(currency: impl Into<String>, rate: f64, horizon: f64) -> Self {
        Self::new(currency.into(), vec![(horizon.max(1.0), (-rate * horizon.max(1.0)).exp())])
            .expect("flat curve is valid")
    }

    pub fn currency(&self) -> &str {
        &self.currency
    }

    pub fn pillar_times(&self) -> &[f64] {
        &self.times
    }

    /// Discount factor at `t >= 0`; `df(0) = 1` exactly.
    pub fn df(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        let n = self.times.len();
        if t <= self.times[0] {
            // Log-linear through the implicit (0, 0) node.
            return (self.log_dfs[0] * t / self.times[0]).exp();
        }
        if t >= self.times[n - 1] {
            let rate = if n >= 2 {
                -(self.log_dfs[n - 1] - self.log_dfs[n - 2])
                    / (self.times[n - 1] - self.times[n - 2])
            } else {
                -self.log_dfs[0] / self.times[0]
            };
            return (self.log_dfs[n - 1] - rate * (t - self.times[n - 1])).exp();
        }
        let i = self.times.partition_point(|&v| v < t);
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let w = (t - t0) / (t1 - t0);
        (self.log_dfs[i - 1] * (1.0 - w) + self.log_dfs[i] * w).exp()
    }
}

/// Forward curve of an asset or an exchange rate.
///
/// Log-forward linear between pillars, constant beyond the last pillar. The
/// pillar at `t = 0` is the spot level.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCurve {
    times: Vec<f64>,
    log_fwds: Vec<f64>,
}

impl ForwardCurve {
    /// `pillars` must start at `t = 0` with the spot level.
    pub fn new(pillars: Vec<(f64, f64)>) -> Result<Self> {
        if pillars.is_empty() {
            return Err(EngineError::invalid("forward curve needs at least one pillar"));
        }
        if pillars[0].0 != 0.0 {
            return Err(EngineError::invalid(format!(
                "forward curve must start at t=0 (spot), got t={}",
                pillars[0].0
            )));
        }
        let mut times = Vec::with_capacity(pillars.len());
        let mut log_fwds = Vec::with_capacity(pillars.len());
        let mut prev = f64::NEG_INFINITY;
        for (i, &(t, f)) in pillars.iter().enumerate() {
            if !t.is_finite() || t <= prev {
                return Err(EngineError::invalid(format!(
                    "forward pillar times must be strictly increasing, pillar {i} has t={t}"
                )));
            }
            if !f.is_finite() || f <= 0.0 {
                return Err(EngineError::invalid(format!(
                    "forward levels must be positive, pillar {i} has level={f}"
                )));
            }
            times.push(t);
            log_fwds.push(f.ln());
            prev = t;
        }
        Ok(Self { times, log_fwds })
    }

    pub fn flat(level: f64, horizon: f64) -> Self {
        Self::new(vec![(0.0, level), (horizon.max(1.0), level)]).expect("flat curve is valid")
    }

    pub fn spot(&self) -> f64 {
        self.log_fwds[0].exp()
    }

    /// Forward level at `t >= 0`.
    pub fn forward(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= 0.0 {
            return self.log_fwds[0].exp();
        }
        if t >= self.times[n - 1] {
            return self.log_fwds[n - 1].exp();
        }
        let i = self.times.partition_point(|&v| v < t);
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let w = (t - t0) / (t1 - t0);
        (self.log_fwds[i - 1] * (1.0 - w) + self.log_fwds[i] * w).exp()
    }
}
