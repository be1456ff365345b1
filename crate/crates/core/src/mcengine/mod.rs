//! Joint Monte Carlo simulation of the normalized asset and exchange rate
//! under the domestic measure, with the correlation calibrated on-line at
//! every step from the simulated cross-section.

pub(crate) mod engine;
pub mod rho;

pub use engine::{simulate, simulate_foreign_leg, step};

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};
use crate::localvol::{AtmVolCurve, LocalVolSurface};
use crate::quantomark::QuantoMark;
use crate::slv::{LeverageSurface, VarianceSpec};

/// Fixed chunk size for parallel path loops; reductions combine per-chunk
/// partials in index order, so results do not depend on the worker count.
pub(crate) const CHUNK: usize = 8192;

/// Correlation strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    /// Black-Scholes approximation: deterministic rho(t) from ATM vols.
    #[serde(rename = "BS")]
    Bs,
    /// Time-dependent rho(t) from the cross-sectional mean.
    #[serde(rename = "LV")]
    Lv,
    /// Pathwise local correlation rho(t, s, x).
    #[serde(rename = "LC")]
    Lc,
    /// Composite calibration, rho(t, z) by kernel regression.
    #[serde(rename = "LV2")]
    Lv2,
    /// Composite calibration, pathwise algebraic solution.
    #[serde(rename = "LC2")]
    Lc2,
    /// SLV variant of LV.
    #[serde(rename = "LV3")]
    Lv3,
    /// SLV variant of LV2.
    #[serde(rename = "LV4")]
    Lv4,
}

impl Strategy {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "BS" => Ok(Self::Bs),
            "LV" => Ok(Self::Lv),
            "LC" => Ok(Self::Lc),
            "LV2" => Ok(Self::Lv2),
            "LC2" => Ok(Self::Lc2),
            "LV3" => Ok(Self::Lv3),
            "LV4" => Ok(Self::Lv4),
            other => Err(EngineError::Configuration(format!(
                "unknown strategy '{other}'; expected one of BS, LV, LC, LV2, LC2, LV3, LV4"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Bs => "BS",
            Self::Lv => "LV",
            Self::Lc => "LC",
            Self::Lv2 => "LV2",
            Self::Lc2 => "LC2",
            Self::Lv3 => "LV3",
            Self::Lv4 => "LV4",
        }
    }

    /// Strategies driving the paths with stochastic variance.
    pub fn uses_variance(&self) -> bool {
        matches!(self, Self::Lv3 | Self::Lv4)
    }

    /// Strategies calibrated to composite quotes rather than the mark.
    pub fn is_composite(&self) -> bool {
        matches!(self, Self::Lv2 | Self::Lc2 | Self::Lv4)
    }

    /// Strategies whose rho is one scalar per step.
    pub fn is_scalar(&self) -> bool {
        matches!(self, Self::Bs | Self::Lv | Self::Lv3)
    }
}

/// Out-of-range correlations are reported and clipped to [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipPolicy {
    #[default]
    ReportAndClip,
}

/// Simulation configuration; the JSON schema matches the field names.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_paths: usize,
    pub steps_per_year: usize,
    pub seed: u64,
    pub strategy: Strategy,
    #[serde(default)]
    pub clip_policy: ClipPolicy,
    #[serde(default = "default_bandwidth_c")]
    pub bandwidth_c: f64,
    #[serde(default = "default_eps_vol")]
    pub eps_vol: f64,
    pub observation_times: Vec<f64>,
}

fn default_bandwidth_c() -> f64 {
    1.5
}

fn default_eps_vol() -> f64 {
    1e-4
}

impl SimConfig {
    pub fn new(strategy: Strategy, n_paths: usize, seed: u64, observation_times: Vec<f64>) -> Self {
        Self {
            n_paths,
            steps_per_year: 24,
            seed,
            strategy,
            clip_policy: ClipPolicy::ReportAndClip,
            bandwidth_c: default_bandwidth_c(),
            eps_vol: default_eps_vol(),
            observation_times,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.observation_times
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 1000 {
            return Err(EngineError::invalid(format!(
                "path count must be at least 1000, got {}",
                self.n_paths
            )));
        }
        if self.steps_per_year < 12 {
            return Err(EngineError::invalid(format!(
                "steps per year must be at least 12, got {}",
                self.steps_per_year
            )));
        }
        if !(self.eps_vol > 0.0) {
            return Err(EngineError::invalid(format!(
                "eps_vol must be positive, got {}",
                self.eps_vol
            )));
        }
        if !(self.bandwidth_c > 0.0) {
            return Err(EngineError::invalid(format!(
                "bandwidth_c must be positive, got {}",
                self.bandwidth_c
            )));
        }
        if self.observation_times.is_empty() {
            return Err(EngineError::invalid("observation_times must not be empty"));
        }
        let mut prev = 0.0;
        for &t in &self.observation_times {
            if !(t.is_finite() && t > prev) {
                return Err(EngineError::invalid(format!(
                    "observation times must be positive and strictly increasing, got {t}"
                )));
            }
            prev = t;
        }
        Ok(())
    }
}

/// Calibrated inputs handed to the engine; which fields are required
/// depends on the strategy.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimInputs<'a> {
    pub mark: Option<&'a QuantoMark>,
    pub atm_asset: Option<&'a AtmVolCurve>,
    pub atm_fx: Option<&'a AtmVolCurve>,
    pub eta: Option<&'a LocalVolSurface>,
    pub psi: Option<&'a LocalVolSurface>,
    pub phi: Option<&'a LocalVolSurface>,
    pub slv: Option<SlvInputs<'a>>,
}

#[derive(Debug, Clone, Copy)]
pub struct SlvInputs<'a> {
    pub leverage_asset: &'a LeverageSurface,
    pub leverage_fx: &'a LeverageSurface,
    pub var_asset: &'a VarianceSpec,
    pub var_fx: &'a VarianceSpec,
}

impl<'a> SimInputs<'a> {
    pub(crate) fn validate(&self, strategy: Strategy) -> Result<()> {
        let missing = |what: &str| {
            Err(EngineError::Configuration(format!(
                "strategy {} requires {what}",
                strategy.name()
            )))
        };
        match strategy {
            Strategy::Bs => {
                if self.mark.is_none() {
                    return missing("a quanto mark");
                }
                if self.atm_asset.is_none() || self.atm_fx.is_none() {
                    return missing("ATM vol curves for both factors");
                }
                if self.eta.is_none() || self.psi.is_none() {
                    return missing("local-vol surfaces for both factors");
                }
            }
            Strategy::Lv | Strategy::Lc => {
                if self.mark.is_none() {
                    return missing("a quanto mark");
                }
                if self.eta.is_none() || self.psi.is_none() {
                    return missing("local-vol surfaces for both factors");
                }
            }
            Strategy::Lv2 | Strategy::Lc2 => {
                if self.phi.is_none() {
                    return missing("a calibrated composite surface");
                }
                if self.eta.is_none() || self.psi.is_none() {
                    return missing("local-vol surfaces for both factors");
                }
            }
            Strategy::Lv3 => {
                if self.mark.is_none() {
                    return missing("a quanto mark");
                }
                if self.slv.is_none() {
                    return missing("leverage surfaces and variance specs");
                }
            }
            Strategy::Lv4 => {
                if self.phi.is_none() {
                    return missing("a calibrated composite surface");
                }
                if self.eta.is_none() || self.psi.is_none() {
                    return missing("local-vol surfaces for both factors");
                }
                if self.slv.is_none() {
                    return missing("leverage surfaces and variance specs");
                }
            }
        }
        if let Some(slv) = &self.slv {
            slv.var_asset.validate()?;
            slv.var_fx.validate()?;
        }
        Ok(())
    }
}

/// Cross-section of simulated paths at one time.
#[derive(Debug, Clone)]
pub struct SimState {
    pub time: f64,
    /// RNG substream cursor: draws are keyed by (seed, path, step, lane).
    pub seed: u64,
    pub step_index: u64,
    /// Normalized asset per path (unit initial value, foreign forward
    /// units).
    pub s: Vec<f64>,
    /// Normalized FX per path.
    pub x: Vec<f64>,
    /// Raw (untruncated) variances when the strategy carries them.
    pub var_s: Option<Vec<f64>>,
    pub var_x: Option<Vec<f64>>,
    /// Running clip accounting across steps.
    pub clipped: u64,
    pub rho_evals: u64,
    pub floored_vols: u64,
}

impl SimState {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        Self {
            time: 0.0,
            seed,
            step_index: 0,
            s: vec![1.0; n_paths],
            x: vec![1.0; n_paths],
            var_s: None,
            var_x: None,
            clipped: 0,
            rho_evals: 0,
            floored_vols: 0,
        }
    }

    pub fn with_variance(mut self, v0_s: f64, v0_x: f64) -> Self {
        let n = self.s.len();
        self.var_s = Some(vec![v0_s; n]);
        self.var_x = Some(vec![v0_x; n]);
        self
    }

    pub fn n_paths(&self) -> usize {
        self.s.len()
    }
}

/// Correlation field applied over one step, after clipping.
#[derive(Debug, Clone)]
pub struct CorrelationField {
    pub values: RhoField,
    /// Clipped evaluations that produced this field.
    pub clipped: u64,
    pub evals: u64,
    /// Evaluations where a vol had to be floored at eps_vol.
    pub floored: u64,
}

#[derive(Debug, Clone)]
pub enum RhoField {
    Scalar(f64),
    PerPath(Vec<f64>),
}

impl CorrelationField {
    pub fn scalar(raw: f64) -> Self {
        let (v, clipped) = clip(raw);
        Self {
            values: RhoField::Scalar(v),
            clipped: clipped as u64,
            evals: 1,
            floored: 0,
        }
    }

    #[inline]
    pub fn value_at(&self, path: usize) -> f64 {
        match &self.values {
            RhoField::Scalar(v) => *v,
            RhoField::PerPath(vs) => vs[path],
        }
    }

    pub fn clip_fraction(&self) -> f64 {
        if self.evals == 0 {
            0.0
        } else {
            self.clipped as f64 / self.evals as f64
        }
    }
}

#[inline]
pub(crate) fn clip(raw: f64) -> (f64, bool) {
    if raw > 1.0 {
        (1.0, true)
    } else if raw < -1.0 {
        (-1.0, true)
    } else {
        (raw, false)
    }
}

/// Per-step diagnostics of the applied correlation.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord {
    pub time: f64,
    pub dt: f64,
    /// Cross-sectional mean of the applied (post-clip) correlation; equals
    /// the scalar itself for scalar strategies.
    pub rho_mean: f64,
    /// Statistical uncertainty of `rho_mean` (zero where deterministic).
    pub rho_se: f64,
    pub clip_fraction: f64,
    pub floored_fraction: f64,
}

/// Path cross-section stored at one observation time.
#[derive(Debug, Clone)]
pub struct Observation {
    pub time: f64,
    pub s: Vec<f64>,
    pub x: Vec<f64>,
}

/// Full simulation output.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub strategy: Strategy,
    pub n_paths: usize,
    pub seed: u64,
    pub observations: Vec<Observation>,
    pub steps: Vec<StepRecord>,
    pub total_rho_evals: u64,
    pub total_clipped: u64,
    pub total_floored: u64,
}

impl SimOutput {
    /// Observation at time `t` (within 1e-9); missing times are a
    /// configuration error.
    pub fn observation_at(&self, t: f64) -> Result<&Observation> {
        self.observations
            .iter()
            .find(|o| (o.time - t).abs() < 1e-9)
            .ok_or_else(|| {
                EngineError::Configuration(format!(
                    "no observation stored at t={t}; configured times: {:?}",
                    self.observations.iter().map(|o| o.time).collect::<Vec<_>>()
                ))
            })
    }

    /// Exact clipped-evaluation share across the whole run.
    pub fn clip_fraction(&self) -> f64 {
        if self.total_rho_evals == 0 {
            0.0
        } else {
            self.total_clipped as f64 / self.total_rho_evals as f64
        }
    }
}
